"""Command-line interface: argument parsing, the staged checkpoint flow,
whole-experiment runs, and the exit-code contract."""
from __future__ import annotations

import json
import xml.etree.ElementTree as ET

import pytest

from conftest import tiny_experiment_config
from mdda.cli import dispatch, main, parse_args
from mdda.experiment import save_config


@pytest.fixture
def config_file(tmp_path, monkeypatch):
    monkeypatch.delenv("MDDA_OUT", raising=False)
    path = tmp_path / "exp.json"
    save_config(tiny_experiment_config(), path)
    return str(path)


# ---------------------------------------------------------------------------
# argument parsing


def test_parse_args_fields(config_file):
    inv = parse_args(["run", "--config", config_file])
    assert inv.subcommand == "run"
    assert inv.config_path == config_file
    assert inv.output_dir == "./out"
    assert inv.seed is None and not inv.quiet
    inv = parse_args(["adapt", "--config", config_file, "--out", "/tmp/x", "--seed", "7", "-q"])
    assert inv.subcommand == "adapt"
    assert inv.output_dir == "/tmp/x"
    assert inv.seed == 7 and inv.quiet


def test_parse_args_env_fallback(config_file, monkeypatch):
    monkeypatch.setenv("MDDA_OUT", "/tmp/from-env")
    assert parse_args(["run", "--config", config_file]).output_dir == "/tmp/from-env"
    flagged = parse_args(["run", "--config", config_file, "--out", "/tmp/flag"])
    assert flagged.output_dir == "/tmp/flag"


def test_parse_args_rejects_bad_invocations(config_file, tmp_path):
    with pytest.raises(SystemExit):
        parse_args(["bogus", "--config", config_file])
    with pytest.raises(SystemExit):
        parse_args(["run"])
    with pytest.raises(SystemExit):
        parse_args(["run", "--config", str(tmp_path / "missing.json")])
    assert main(["bogus", "--config", config_file]) == 2
    assert main(["run"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == 0
    assert "gen-data" in capsys.readouterr().out


def test_invalid_config_contents_exit_one(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("not json")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "out")]) == 1
    assert capsys.readouterr().err.startswith("mdda run:")


# ---------------------------------------------------------------------------
# the staged checkpoint flow


def test_staged_flow(config_file, tmp_path, capsys):
    out = str(tmp_path / "out")

    assert main(["gen-data", "--config", config_file, "--out", out]) == 0
    captured = capsys.readouterr()
    assert f"OK gen-data {out}" in captured.out
    for name in ("near.csv", "off.csv", "target.csv", "manifest.json"):
        assert (tmp_path / "out" / "data" / name).is_file()

    assert main(["pretrain", "--config", config_file, "--out", out]) == 0
    capsys.readouterr()
    assert (tmp_path / "out" / "bundles" / "near" / "meta.json").is_file()
    assert (tmp_path / "out" / "bundles" / "off" / "meta.json").is_file()

    # stage 4 before stage 2 must fail loudly
    assert main(["predict", "--config", config_file, "--out", out]) == 1
    err = capsys.readouterr().err
    assert err.startswith("mdda predict:")
    assert "bundle missing target encoder" in err

    assert main(["adapt", "--config", config_file, "--out", out]) == 0
    assert main(["distill", "--config", config_file, "--out", out]) == 0
    capsys.readouterr()

    assert main(["predict", "--config", config_file, "--out", out]) == 0
    capsys.readouterr()
    lines = (tmp_path / "out" / "predictions.csv").read_text().splitlines()
    assert lines[0] == "label,p0,p1"
    assert len(lines) == 31  # header + one row per target test sample

    assert main(["scatter", "--config", config_file, "--out", out]) == 0
    capsys.readouterr()
    svg = (tmp_path / "out" / "scatter.svg").read_text()
    assert ET.fromstring(svg).tag.endswith("svg")


def test_quiet_suppresses_progress(config_file, tmp_path, capsys):
    out = str(tmp_path / "quiet-out")
    assert main(["gen-data", "--config", config_file, "--out", out, "-q"]) == 0
    captured = capsys.readouterr()
    assert captured.err == ""
    assert captured.out.startswith("OK gen-data")


# ---------------------------------------------------------------------------
# whole-experiment runs


def test_run_exports_and_is_reproducible(config_file, tmp_path, capsys):
    out1, out2, out3 = (str(tmp_path / d) for d in ("r1", "r2", "r3"))
    assert main(["run", "--config", config_file, "--out", out1]) == 0
    assert f"OK run {out1}" in capsys.readouterr().out
    assert (tmp_path / "r1" / "report.json").is_file()
    assert (tmp_path / "r1" / "summary.csv").is_file()

    assert main(["run", "--config", config_file, "--out", out2]) == 0
    capsys.readouterr()
    first = (tmp_path / "r1" / "report.json").read_bytes()
    assert (tmp_path / "r2" / "report.json").read_bytes() == first

    assert main(["run", "--config", config_file, "--out", out3, "--seed", "5"]) == 0
    capsys.readouterr()
    assert (tmp_path / "r3" / "report.json").read_bytes() != first


def test_ablate_forces_both_comparisons(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("MDDA_OUT", raising=False)
    conf = tmp_path / "plain.json"
    save_config(tiny_experiment_config(ablations=(), repeats=1), conf)
    out = str(tmp_path / "ablate-out")
    assert main(["ablate", "--config", str(conf), "--out", out]) == 0
    capsys.readouterr()
    report = json.loads((tmp_path / "ablate-out" / "report.json").read_text())
    assert report["variants"] == ["mdda", "uniform", "no_distill"]


def test_dispatch_returns_zero_and_announces(config_file, tmp_path, capsys):
    inv = parse_args(["gen-data", "--config", config_file, "--out", str(tmp_path / "d")])
    assert dispatch(inv) == 0
    assert capsys.readouterr().out == f"OK gen-data {tmp_path / 'd'}\n"

"""Shared fixtures: a subsecond experiment config builder and the hook
that prints one PASS/FAIL line per acceptance criterion."""
from __future__ import annotations

import re

import pytest

from mdda.datagen import DomainSpec
from mdda.experiment import ExperimentConfig, MethodConfig
from mdda.nn import MlpConfig
from mdda.pipeline import AdaptConfig, TrainConfig

# criterion number -> {"passed": bool, "detail": str}
_CRITERIA: dict[int, dict] = {}


def tiny_experiment_config(**overrides) -> ExperimentConfig:
    """A two-source, two-class setup small enough for subsecond runs."""
    base = dict(
        sources=(
            DomainSpec(
                name="near", n_classes=2, d=2,
                base_means=((0.0, 0.0), (3.0, 0.0)), cov_scale=0.4, rotation=0.1,
            ),
            DomainSpec(
                name="off", n_classes=2, d=2,
                base_means=((0.0, 0.0), (3.0, 0.0)), cov_scale=0.4, rotation=0.8,
            ),
        ),
        target=DomainSpec(
            name="target", n_classes=2, d=2,
            base_means=((0.0, 0.0), (3.0, 0.0)), cov_scale=0.4,
        ),
        extractor=MlpConfig((2, 8, 4), final_activation="tanh"),
        classifier=MlpConfig((4, 2)),
        master_seed=11,
        n_source=80,
        n_target=60,
        pretrain=TrainConfig(steps=60, batch_size=32, learning_rate=2e-3),
        adapt=AdaptConfig(steps=4, batch_size=16, critic_hidden=(8,)),
        finetune=TrainConfig(steps=20, batch_size=16, learning_rate=1e-3),
        method=MethodConfig(),
        ablations=("uniform", "no_distill"),
        repeats=2,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture
def tiny_config():
    return tiny_experiment_config


@pytest.fixture
def criterion(request):
    """Recorder for acceptance tests: criterion(n, detail) notes the
    measured outcome so the terminal summary can report it."""

    def note(number: int, detail: str = "") -> None:
        request.node._criterion_note = (number, detail)

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    note = getattr(item, "_criterion_note", None)
    if note is None:
        match = re.match(r"test_criterion_(\d+)", item.name)
        if match is None:
            return
        note = (int(match.group(1)), "")
    number, detail = note
    entry = _CRITERIA.setdefault(number, {"passed": True, "detail": ""})
    if detail:
        entry["detail"] = detail
    if report.when in ("setup", "call") and report.failed:
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        verdict = "PASS" if entry["passed"] else "FAIL"
        line = f"criterion {number}: {verdict}"
        if entry["detail"]:
            line += f" — {entry['detail']}"
        terminalreporter.write_line(line)

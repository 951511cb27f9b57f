"""Command-line interface.

Every subcommand reads the same JSON experiment config.  The staged
subcommands (gen-data, pretrain, adapt, distill, predict) walk the
pipeline one stage at a time over checkpoint directories; run and
ablate execute the whole multi-seed harness in one go.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .datagen import sample_domain, save_csv, save_manifest, split_rows
from .errors import MddaError
from .experiment import (
    ExperimentConfig,
    accuracy,
    export_report,
    load_config,
    run_experiment,
    seed_stream,
)
from .pipeline import (
    adapt_target,
    aggregate_predict,
    distill_finetune,
    distill_select,
    domain_weight,
    load_bundle,
    pretrain_source,
    sample_distances,
    save_bundle,
    single_source_probs,
    uniform_weights,
)
from .scatter import export_scatter

_SUBCOMMANDS = ("gen-data", "pretrain", "adapt", "distill", "predict", "run", "ablate", "scatter")


@dataclasses.dataclass(frozen=True)
class CliInvocation:
    subcommand: str
    config_path: str
    output_dir: str
    seed: int | None
    quiet: bool


def parse_args(argv) -> CliInvocation:
    parser = argparse.ArgumentParser(
        prog="mdda",
        description="Multi-source distilling domain adaptation on synthetic shifted domains.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    helps = {
        "gen-data": "sample every configured domain and write CSV datasets",
        "pretrain": "stage 1: train extractor and classifier per source",
        "adapt": "stage 2: train target encoder and critic per source",
        "distill": "stage 3: fine-tune each classifier on its near-target half",
        "predict": "stage 4: weighted aggregate prediction on the target test split",
        "run": "full multi-seed experiment, exporting report.json and summary.csv",
        "ablate": "run with the uniform-weighting and no-distilling comparisons enabled",
        "scatter": "export an SVG scatter of the configured domains",
    }
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, metavar="PATH", help="JSON experiment config")
        p.add_argument("--out", metavar="DIR", default=None, help="output directory (default ./out)")
        p.add_argument("--seed", type=int, default=None, help="override the config's master seed")
        p.add_argument("-q", "--quiet", action="store_true", help="suppress progress output")
    args = parser.parse_args(argv)
    if not os.path.isfile(args.config):
        parser.error(f"config file not found: {args.config}")
    out = args.out if args.out is not None else os.environ.get("MDDA_OUT", "./out")
    return CliInvocation(
        subcommand=args.subcommand,
        config_path=args.config,
        output_dir=out,
        seed=args.seed,
        quiet=args.quiet,
    )


def _load(inv: CliInvocation) -> ExperimentConfig:
    cfg = load_config(inv.config_path)
    if inv.seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=inv.seed)
    return cfg


def _say(inv: CliInvocation, message: str) -> None:
    if not inv.quiet:
        print(message, file=sys.stderr)


def _sampled_domains(cfg: ExperimentConfig):
    sources = [
        sample_domain(spec, cfg.n_source, seed_stream(cfg, 0, "data", spec.name))
        for spec in cfg.sources
    ]
    target = sample_domain(cfg.target, cfg.n_target, seed_stream(cfg, 0, "data", "target"))
    return sources, target


def _bundle_dir(inv: CliInvocation, name: str) -> str:
    return os.path.join(inv.output_dir, "bundles", name)


def _cmd_gen_data(inv: CliInvocation, cfg: ExperimentConfig) -> None:
    sources, target = _sampled_domains(cfg)
    data_dir = os.path.join(inv.output_dir, "data")
    os.makedirs(data_dir, exist_ok=True)
    for ds in sources + [target]:
        save_csv(ds, os.path.join(data_dir, f"{ds.domain_name}.csv"))
        _say(inv, f"wrote {ds.n} rows for domain {ds.domain_name}")
    save_manifest(list(cfg.sources) + [cfg.target], os.path.join(data_dir, "manifest.json"))


def _cmd_pretrain(inv: CliInvocation, cfg: ExperimentConfig) -> None:
    sources, _ = _sampled_domains(cfg)
    for ds in sources:
        bundle = pretrain_source(
            ds, cfg.extractor, cfg.classifier, cfg.pretrain, seed_stream(cfg, 0, "pretrain", ds.domain_name)
        )
        save_bundle(bundle, _bundle_dir(inv, bundle.name))
        _say(inv, f"pre-trained source {bundle.name}")


def _cmd_adapt(inv: CliInvocation, cfg: ExperimentConfig) -> None:
    sources, target = _sampled_domains(cfg)
    tgt_adapt, _ = split_rows(target, cfg.n_target // 2)
    for ds in sources:
        bundle = load_bundle(_bundle_dir(inv, ds.domain_name))
        bundle = adapt_target(bundle, ds, tgt_adapt.x, cfg.adapt, seed_stream(cfg, 0, "adapt", bundle.name))
        save_bundle(bundle, _bundle_dir(inv, bundle.name))
        _say(inv, f"adapted source {bundle.name}: wd_estimate {bundle.wd_estimate:+.4f}")


def _cmd_distill(inv: CliInvocation, cfg: ExperimentConfig) -> None:
    sources, target = _sampled_domains(cfg)
    tgt_adapt, _ = split_rows(target, cfg.n_target // 2)
    for ds in sources:
        bundle = load_bundle(_bundle_dir(inv, ds.domain_name))
        sel = distill_select(
            sample_distances(bundle, ds, tgt_adapt.x),
            rule=cfg.method.distill_rule,
            fraction=cfg.method.distill_fraction,
        )
        bundle = distill_finetune(bundle, ds, sel, cfg.finetune, seed_stream(cfg, 0, "finetune", bundle.name))
        save_bundle(bundle, _bundle_dir(inv, bundle.name))
        _say(inv, f"distilled source {bundle.name} on {sel.selected_indices.size} samples")


def _cmd_predict(inv: CliInvocation, cfg: ExperimentConfig) -> None:
    _, target = _sampled_domains(cfg)
    _, tgt_test = split_rows(target, cfg.n_target // 2)
    bundles = [load_bundle(_bundle_dir(inv, spec.name)) for spec in cfg.sources]
    if cfg.method.weighting == "wasserstein":
        for b in bundles:
            if b.target_encoder is None:
                raise MddaError(f"source {b.name}: bundle missing target encoder")
        weights = domain_weight([b.wd_estimate for b in bundles])
    else:
        weights = uniform_weights(len(bundles))
    pred = aggregate_predict(bundles, weights, tgt_test.x)
    acc = accuracy(pred.labels, tgt_test.y)
    os.makedirs(inv.output_dir, exist_ok=True)
    path = os.path.join(inv.output_dir, "predictions.csv")
    with open(path, "w", encoding="utf-8") as fh:
        n_classes = pred.probs.shape[1]
        fh.write("label," + ",".join(f"p{c}" for c in range(n_classes)) + "\n")
        for label, row in zip(pred.labels, pred.probs.value):
            fh.write(str(int(label)) + "," + ",".join(f"{v:.17g}" for v in row) + "\n")
    _say(inv, f"target test accuracy {acc:.4f} over {tgt_test.n} samples")


def _cmd_run(inv: CliInvocation, cfg: ExperimentConfig) -> None:
    report = run_experiment(cfg)
    export_report(report, inv.output_dir)
    for name in report.variants:
        stats = report.aggregate[name]
        _say(inv, f"{name}: {stats['mean']:.4f} +/- {stats['std']:.4f} over {cfg.repeats} seeds")


def _cmd_ablate(inv: CliInvocation, cfg: ExperimentConfig) -> None:
    cfg = dataclasses.replace(cfg, ablations=("uniform", "no_distill"))
    _cmd_run(inv, cfg)


def _cmd_scatter(inv: CliInvocation, cfg: ExperimentConfig) -> None:
    sources, target = _sampled_domains(cfg)
    domains = {ds.domain_name: (ds.x.value, ds.y) for ds in sources + [target]}
    os.makedirs(inv.output_dir, exist_ok=True)
    export_scatter(domains, os.path.join(inv.output_dir, "scatter.svg"))


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "pretrain": _cmd_pretrain,
    "adapt": _cmd_adapt,
    "distill": _cmd_distill,
    "predict": _cmd_predict,
    "run": _cmd_run,
    "ablate": _cmd_ablate,
    "scatter": _cmd_scatter,
}


def dispatch(inv: CliInvocation) -> int:
    try:
        cfg = _load(inv)
        os.makedirs(inv.output_dir, exist_ok=True)
        _HANDLERS[inv.subcommand](inv, cfg)
    except (MddaError, OSError, ValueError) as exc:
        print(f"mdda {inv.subcommand}: {exc}", file=sys.stderr)
        return 1
    print(f"OK {inv.subcommand} {inv.output_dir}")
    return 0


def main(argv=None) -> int:
    try:
        inv = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    return dispatch(inv)


if __name__ == "__main__":
    raise SystemExit(main())

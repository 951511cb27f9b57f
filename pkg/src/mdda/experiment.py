"""Multi-seed experiment harness, reports, and ablation variants.

One experiment fixes a set of source domains, a target domain, and all
stage hyperparameters, then repeats the full pipeline over several
seeds.  Ablation variants (uniform weighting, no distilling) reuse the
same per-seed stage-1/2 networks, so each comparison isolates exactly
one mechanism.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .datagen import DomainSpec, sample_domain, spec_from_dict, spec_to_dict, split_rows
from .errors import ConfigError, DataFormatError, MddaError
from .nn import MlpConfig, config_from_dict, config_to_dict
from .pipeline import (
    AdaptConfig,
    SourceBundle,
    TrainConfig,
    adapt_target,
    aggregate_predict,
    distill_finetune,
    distill_select,
    domain_weight,
    pretrain_source,
    sample_distances,
    single_source_probs,
    uniform_weights,
)
from .rng import stream

SCHEMA_VERSION = 1

_VALID_ABLATIONS = ("uniform", "no_distill")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class MethodConfig:
    """Stage-3/4 switches for the primary method."""

    weighting: str = "wasserstein"
    distill: bool = True
    distill_rule: str = "closest"
    distill_fraction: float = 0.5

    def __post_init__(self):
        if self.weighting not in ("wasserstein", "uniform"):
            raise ConfigError(f"unknown weighting {self.weighting!r}")
        if self.distill_rule not in ("closest", "farthest"):
            raise ConfigError(f"unknown distill rule {self.distill_rule!r}")
        if not 0.0 < self.distill_fraction <= 1.0:
            raise ConfigError("distill_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    sources: tuple[DomainSpec, ...]
    target: DomainSpec
    extractor: MlpConfig
    classifier: MlpConfig
    master_seed: int = 0
    n_source: int = 1000
    n_target: int = 1000
    pretrain: TrainConfig = TrainConfig()
    adapt: AdaptConfig = AdaptConfig()
    finetune: TrainConfig = TrainConfig(steps=500)
    method: MethodConfig = MethodConfig()
    ablations: tuple[str, ...] = ()
    repeats: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "ablations", tuple(self.ablations))
        if len(self.sources) < 1:
            raise ConfigError("need at least one source domain")
        if self.repeats < 1:
            raise ConfigError("repeats must be at least 1")
        if self.n_source < 1 or self.n_target < 2:
            raise ConfigError("sample counts too small (target is split in half)")
        for name in self.ablations:
            if name not in _VALID_ABLATIONS:
                raise ConfigError(f"unknown ablation {name!r}; valid: {_VALID_ABLATIONS}")
        if len(set(s.name for s in self.sources)) != len(self.sources):
            raise ConfigError("source domain names must be unique")
        for s in self.sources:
            if s.d != self.target.d or s.n_classes != self.target.n_classes:
                raise ConfigError("all domains must share d and n_classes")
        if self.extractor.d_in != self.target.d:
            raise ConfigError("extractor input width must equal the domain dimension")
        if self.classifier.d_out < self.target.n_classes:
            raise ConfigError("classifier output width must cover all classes")


def config_to_json_dict(cfg: ExperimentConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "master_seed": cfg.master_seed,
        "sources": [spec_to_dict(s) for s in cfg.sources],
        "target": spec_to_dict(cfg.target),
        "n_source": cfg.n_source,
        "n_target": cfg.n_target,
        "extractor": config_to_dict(cfg.extractor),
        "classifier": config_to_dict(cfg.classifier),
        "pretrain": _train_to_dict(cfg.pretrain),
        "adapt": _adapt_to_dict(cfg.adapt),
        "finetune": _train_to_dict(cfg.finetune),
        "method": {
            "weighting": cfg.method.weighting,
            "distill": cfg.method.distill,
            "distill_rule": cfg.method.distill_rule,
            "distill_fraction": cfg.method.distill_fraction,
        },
        "ablations": list(cfg.ablations),
        "repeats": cfg.repeats,
    }


def config_from_json_dict(data: dict) -> ExperimentConfig:
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DataFormatError(f"unsupported config schema_version {version!r}")
    try:
        method = data.get("method", {})
        return ExperimentConfig(
            master_seed=int(data.get("master_seed", 0)),
            sources=tuple(spec_from_dict(s) for s in data["sources"]),
            target=spec_from_dict(data["target"]),
            n_source=int(data.get("n_source", 1000)),
            n_target=int(data.get("n_target", 1000)),
            extractor=config_from_dict(data["extractor"]),
            classifier=config_from_dict(data["classifier"]),
            pretrain=_train_from_dict(data.get("pretrain", {})),
            adapt=_adapt_from_dict(data.get("adapt", {})),
            finetune=_train_from_dict(data.get("finetune", {"steps": 500})),
            method=MethodConfig(
                weighting=str(method.get("weighting", "wasserstein")),
                distill=bool(method.get("distill", True)),
                distill_rule=str(method.get("distill_rule", "closest")),
                distill_fraction=float(method.get("distill_fraction", 0.5)),
            ),
            ablations=tuple(data.get("ablations", ())),
            repeats=int(data.get("repeats", 1)),
        )
    except KeyError as exc:
        raise DataFormatError(f"experiment config missing field {exc}") from None


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_json_dict(json.load(fh))


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_json_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _train_to_dict(cfg: TrainConfig) -> dict:
    return {"steps": cfg.steps, "batch_size": cfg.batch_size, "learning_rate": cfg.learning_rate}


def _train_from_dict(data: dict) -> TrainConfig:
    return TrainConfig(
        steps=int(data.get("steps", 2000)),
        batch_size=int(data.get("batch_size", 64)),
        learning_rate=float(data.get("learning_rate", 1e-3)),
    )


def _adapt_to_dict(cfg: AdaptConfig) -> dict:
    return {
        "alpha": cfg.alpha,
        "n_critic": cfg.n_critic,
        "steps": cfg.steps,
        "batch_size": cfg.batch_size,
        "lr_critic": cfg.lr_critic,
        "lr_encoder": cfg.lr_encoder,
        "include_endpoints": cfg.include_endpoints,
        "critic_hidden": list(cfg.critic_hidden),
        "critic_slope": cfg.critic_slope,
        "lr_decay": cfg.lr_decay,
    }


def _adapt_from_dict(data: dict) -> AdaptConfig:
    return AdaptConfig(
        alpha=float(data.get("alpha", 10.0)),
        n_critic=int(data.get("n_critic", 5)),
        steps=int(data.get("steps", 300)),
        batch_size=int(data.get("batch_size", 64)),
        lr_critic=float(data.get("lr_critic", 1e-3)),
        lr_encoder=float(data.get("lr_encoder", 5e-4)),
        include_endpoints=bool(data.get("include_endpoints", True)),
        critic_hidden=tuple(data.get("critic_hidden", (64, 64))),
        critic_slope=float(data.get("critic_slope", 0.2)),
        lr_decay=bool(data.get("lr_decay", True)),
    )


# ---------------------------------------------------------------------------
# metrics and report types


def accuracy(pred_labels, true_labels) -> float:
    """Fraction of exact label matches."""
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ConfigError(f"label arrays must be equal-length vectors: {pred.shape} vs {true.shape}")
    if pred.size < 1:
        raise ConfigError("accuracy needs at least one label")
    return float(np.mean(pred == true))


@dataclass
class SeedResult:
    seed: int
    accuracies: dict[str, float]
    wd_estimates: list[float]
    weights_raw: list[float]
    weights_normalized: list[float]
    solo_accuracies: list[float]
    artifact_checksums: dict[str, str]


@dataclass
class Report:
    config: dict
    variants: list[str]
    per_seed: list[SeedResult]
    aggregate: dict[str, dict[str, float]]

    def __post_init__(self):
        for res in self.per_seed:
            for name, acc in res.accuracies.items():
                if not 0.0 <= acc <= 1.0:
                    raise ConfigError(f"accuracy {acc} for {name!r} outside [0, 1]")
        for name, stats in self.aggregate.items():
            accs = np.array([res.accuracies[name] for res in self.per_seed])
            if abs(stats["mean"] - accs.mean()) > 1e-12 or abs(stats["std"] - accs.std()) > 1e-12:
                raise ConfigError(f"aggregate stats for {name!r} disagree with per-seed values")


def _aggregate(variants: list[str], per_seed: list[SeedResult]) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    for name in variants:
        accs = np.array([res.accuracies[name] for res in per_seed])
        out[name] = {"mean": float(accs.mean()), "std": float(accs.std())}
    return out


def _params_checksum(bundles: list[SourceBundle]) -> str:
    h = hashlib.sha256()
    for bundle in bundles:
        for net in (bundle.extractor, bundle.classifier, bundle.target_encoder, bundle.critic):
            if net is None:
                continue
            for p in net.params:
                h.update(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# the harness


def seed_stream(cfg: ExperimentConfig, rep: int, *labels: str):
    """The per-purpose random stream for one repetition of an experiment."""
    return stream(cfg.master_seed, f"seed{rep}", *labels)


def run_seed(cfg: ExperimentConfig, rep: int) -> SeedResult:
    """Run stages 1-4 and the enabled ablation variants for one seed."""

    def data_stream(*labels):
        return seed_stream(cfg, rep, *labels)

    stage = "datagen"
    try:
        sources = [
            sample_domain(spec, cfg.n_source, data_stream("data", spec.name))
            for spec in cfg.sources
        ]
        target = sample_domain(cfg.target, cfg.n_target, data_stream("data", "target"))
        tgt_adapt, tgt_test = split_rows(target, cfg.n_target // 2)

        stage = "pretrain"
        bundles = [
            pretrain_source(
                ds, cfg.extractor, cfg.classifier, cfg.pretrain, data_stream("pretrain", ds.domain_name)
            )
            for ds in sources
        ]

        stage = "adapt"
        bundles = [
            adapt_target(b, ds, tgt_adapt.x, cfg.adapt, data_stream("adapt", b.name))
            for b, ds in zip(bundles, sources)
        ]
        checksum_stage2 = _params_checksum(bundles)

        wd = [b.wd_estimate for b in bundles]
        wasserstein = domain_weight(wd)
        uniform = uniform_weights(len(bundles))

        stage = "distill"
        distilled = bundles
        if cfg.method.distill:
            distilled = [
                distill_finetune(
                    b,
                    ds,
                    distill_select(
                        sample_distances(b, ds, tgt_adapt.x),
                        rule=cfg.method.distill_rule,
                        fraction=cfg.method.distill_fraction,
                    ),
                    cfg.finetune,
                    data_stream("finetune", b.name),
                )
                for b, ds in zip(bundles, sources)
            ]

        stage = "predict"
        method_weights = wasserstein if cfg.method.weighting == "wasserstein" else uniform
        accuracies = {
            "mdda": accuracy(aggregate_predict(distilled, method_weights, tgt_test.x).labels, tgt_test.y)
        }
        checksums = {"mdda": checksum_stage2}
        if "uniform" in cfg.ablations:
            accuracies["uniform"] = accuracy(
                aggregate_predict(distilled, uniform, tgt_test.x).labels, tgt_test.y
            )
            checksums["uniform"] = checksum_stage2
        if "no_distill" in cfg.ablations:
            accuracies["no_distill"] = accuracy(
                aggregate_predict(bundles, method_weights, tgt_test.x).labels, tgt_test.y
            )
            checksums["no_distill"] = checksum_stage2
        solo = [
            accuracy(np.argmax(single_source_probs(b, tgt_test.x), axis=1), tgt_test.y)
            for b in bundles
        ]
    except MddaError as exc:
        raise MddaError(f"seed {rep}, stage {stage}: {exc}") from exc

    return SeedResult(
        seed=rep,
        accuracies=accuracies,
        wd_estimates=[float(v) for v in wd],
        weights_raw=[float(v) for v in wasserstein.raw],
        weights_normalized=[float(v) for v in wasserstein.normalized],
        solo_accuracies=solo,
        artifact_checksums=checksums,
    )


def run_experiment(cfg: ExperimentConfig) -> Report:
    variants = ["mdda"] + [name for name in _VALID_ABLATIONS if name in cfg.ablations]
    per_seed = [run_seed(cfg, rep) for rep in range(cfg.repeats)]
    return Report(
        config=config_to_json_dict(cfg),
        variants=variants,
        per_seed=per_seed,
        aggregate=_aggregate(variants, per_seed),
    )


# ---------------------------------------------------------------------------
# report serialization


def report_to_dict(report: Report) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": report.config,
        "variants": list(report.variants),
        "per_seed": [
            {
                "seed": res.seed,
                "accuracies": res.accuracies,
                "wd_estimates": res.wd_estimates,
                "weights_raw": res.weights_raw,
                "weights_normalized": res.weights_normalized,
                "solo_accuracies": res.solo_accuracies,
                "artifact_checksums": res.artifact_checksums,
            }
            for res in report.per_seed
        ],
        "aggregate": report.aggregate,
    }


def report_from_dict(data: dict) -> Report:
    if data.get("schema_version") != SCHEMA_VERSION:
        raise DataFormatError(f"unsupported report schema_version {data.get('schema_version')!r}")
    per_seed = [
        SeedResult(
            seed=int(entry["seed"]),
            accuracies={k: float(v) for k, v in entry["accuracies"].items()},
            wd_estimates=[float(v) for v in entry["wd_estimates"]],
            weights_raw=[float(v) for v in entry["weights_raw"]],
            weights_normalized=[float(v) for v in entry["weights_normalized"]],
            solo_accuracies=[float(v) for v in entry["solo_accuracies"]],
            artifact_checksums=dict(entry["artifact_checksums"]),
        )
        for entry in data["per_seed"]
    ]
    return Report(
        config=data["config"],
        variants=list(data["variants"]),
        per_seed=per_seed,
        aggregate={k: dict(v) for k, v in data["aggregate"].items()},
    )


def export_report(report: Report, directory) -> None:
    """Write report.json (full precision) and summary.csv (6 significant
    digits, one row per method variant)."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    n = len(report.per_seed)
    header = ["variant", "mean", "std"] + [f"seed{i}" for i in range(n)]
    lines = [",".join(header)]
    for name in report.variants:
        row = [
            name,
            f"{report.aggregate[name]['mean']:.6g}",
            f"{report.aggregate[name]['std']:.6g}",
        ] + [f"{res.accuracies[name]:.6g}" for res in report.per_seed]
        lines.append(",".join(row))
    with open(os.path.join(directory, "summary.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_report(path) -> Report:
    with open(path, "r", encoding="utf-8") as fh:
        return report_from_dict(json.load(fh))

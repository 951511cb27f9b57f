"""The four-stage multi-source adaptation pipeline.

Stage 1 pre-trains a feature extractor and classifier per source.
Stage 2 freezes the extractor and trains a target encoder against a
critic so that encoded target features become indistinguishable from
source features; the converged critic gap estimates the Wasserstein
distance between the domains.  Stage 3 distills each source down to the
half of its samples scoring closest to the target and fine-tunes the
classifier on them.  Stage 4 combines the per-source predictions with
weights that decay in the estimated distance.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, backward, matmul, softmax_cross_entropy
from .datagen import Dataset, concat_datasets
from .errors import ConfigError, DivergenceError, NonFiniteError, ShapeError
from .nn import (
    Mlp,
    MlpConfig,
    adam,
    clone_mlp,
    config_from_dict,
    config_to_dict,
    forward,
    init_mlp,
    load_params,
    save_params,
    step,
)
from .rng import Xoshiro256

_EPS_NORM = 1e-12


# ---------------------------------------------------------------------------
# configuration and result types


@dataclass(frozen=True)
class TrainConfig:
    """Minibatch schedule for supervised stages (pre-train, fine-tune)."""

    steps: int = 2000
    batch_size: int = 64
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")


@dataclass(frozen=True)
class AdaptConfig:
    """Adversarial schedule for the target-encoder stage.

    steps counts encoder updates; each is preceded by n_critic critic
    updates.  steps=0 is the degenerate run that only initializes the
    encoder clone and critic.
    """

    alpha: float = 10.0
    n_critic: int = 5
    steps: int = 300
    batch_size: int = 64
    lr_critic: float = 1e-3
    lr_encoder: float = 5e-4
    include_endpoints: bool = True
    critic_hidden: tuple[int, ...] = (64, 64)
    critic_slope: float = 0.2
    lr_decay: bool = True

    def __post_init__(self):
        object.__setattr__(self, "critic_hidden", tuple(int(w) for w in self.critic_hidden))
        if self.alpha <= 0.0:
            raise ConfigError("alpha must be positive")
        if self.n_critic < 1:
            raise ConfigError("n_critic must be at least 1")
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.lr_critic <= 0.0 or self.lr_encoder <= 0.0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 < self.critic_slope < 1.0:
            raise ConfigError("critic_slope must lie in (0, 1)")


@dataclass
class SourceBundle:
    """All trained networks belonging to one source domain."""

    name: str
    extractor: Mlp
    classifier: Mlp
    target_encoder: Mlp | None = None
    critic: Mlp | None = None
    wd_estimate: float | None = None
    distilled: bool = False

    def __post_init__(self):
        if self.extractor.config.d_out != self.classifier.config.d_in:
            raise ConfigError("classifier input width must equal extractor output width")
        stage2 = (self.target_encoder is not None, self.critic is not None, self.wd_estimate is not None)
        if any(stage2) and not all(stage2):
            raise ConfigError("target_encoder, critic and wd_estimate appear together")
        if self.distilled and self.target_encoder is None:
            raise ConfigError("distilled requires a completed adaptation stage")
        if self.target_encoder is not None and self.target_encoder.config != self.extractor.config:
            raise ConfigError("target encoder must share the extractor architecture")

    @property
    def stage(self) -> int:
        if self.distilled:
            return 3
        return 2 if self.target_encoder is not None else 1


@dataclass
class DistillSelection:
    """Per-sample distances and the half-set chosen for fine-tuning."""

    tau: np.ndarray
    selected_indices: np.ndarray
    rule: str = "closest"
    fraction: float = 0.5

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=np.float64)
        self.selected_indices = np.asarray(self.selected_indices, dtype=np.int64)
        n = self.tau.size
        k = self.selected_indices.size
        if self.rule not in ("closest", "farthest"):
            raise ConfigError(f"unknown distill rule {self.rule!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError("fraction must lie in (0, 1]")
        if k != math.ceil(n * self.fraction):
            raise ConfigError(f"selection size {k} != ceil({n} * {self.fraction})")
        if np.unique(self.selected_indices).size != k:
            raise ConfigError("selected indices must be unique")
        if k and (self.selected_indices.min() < 0 or self.selected_indices.max() >= n):
            raise ConfigError("selected indices out of range")


@dataclass
class DomainWeights:
    """Per-source relevance weights derived from distance estimates."""

    raw: np.ndarray
    normalized: np.ndarray

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        self.normalized = np.asarray(self.normalized, dtype=np.float64)
        if self.raw.size < 1 or self.raw.shape != self.normalized.shape:
            raise ConfigError("raw and normalized weights must be non-empty and congruent")
        if np.any(self.raw <= 0.0) or np.any(self.raw > 1.0):
            raise ConfigError("raw weights must lie in (0, 1]")
        if abs(self.normalized.sum() - 1.0) > 1e-12:
            raise ConfigError("normalized weights must sum to 1")
        if int(np.argmax(self.raw)) != int(np.argmax(self.normalized)):
            raise ConfigError("normalization must preserve the argmax")


@dataclass
class Prediction:
    probs: Tensor
    labels: np.ndarray


# ---------------------------------------------------------------------------
# stage 1: per-source pre-training


def pretrain_source(
    src: Dataset,
    extractor_cfg: MlpConfig,
    classifier_cfg: MlpConfig,
    train: TrainConfig,
    rng: Xoshiro256,
    name: str | None = None,
) -> SourceBundle:
    """Jointly train extractor and classifier on labelled source data."""
    if extractor_cfg.d_in != src.d:
        raise ConfigError(f"extractor expects width {extractor_cfg.d_in}, data has {src.d}")
    if extractor_cfg.d_out != classifier_cfg.d_in:
        raise ConfigError("classifier input width must equal extractor output width")
    if src.y.max() >= classifier_cfg.d_out:
        raise ConfigError(f"label {src.y.max()} outside {classifier_cfg.d_out} classes")
    tape = Tape()
    extractor = init_mlp(extractor_cfg, rng, tape)
    classifier = init_mlp(classifier_cfg, rng, tape)
    params = extractor.params + classifier.params
    opt = adam(train.learning_rate)
    mark = tape.mark()
    for i in range(train.steps):
        tape.reset(mark)
        idx = rng.integers(train.batch_size, below=src.n)
        xb = tape.leaf(src.x.value[idx])
        try:
            logits = forward(classifier, forward(extractor, xb))
            loss = softmax_cross_entropy(logits, src.y[idx])
            grads = backward(loss, params)
            step(opt, params, grads)
        except NonFiniteError as exc:
            raise DivergenceError(f"pre-training diverged: {exc}", step=i) from exc
    tape.reset(mark)
    return SourceBundle(name=name or src.domain_name, extractor=extractor, classifier=classifier)


# ---------------------------------------------------------------------------
# stage 2: adversarial target adaptation


def critic_loss(critic: Mlp, src_feats: Tensor, tgt_feats: Tensor) -> Tensor:
    """Mean critic score on source features minus mean on target features."""
    if src_feats.shape[0] < 1 or tgt_feats.shape[0] < 1:
        raise ConfigError("critic_loss needs non-empty batches")
    if src_feats.shape[1] != tgt_feats.shape[1]:
        raise ShapeError(f"feature widths differ: {src_feats.shape} vs {tgt_feats.shape}")
    return forward(critic, src_feats).mean() - forward(critic, tgt_feats).mean()


def encoder_loss(critic: Mlp, tgt_feats: Tensor) -> Tensor:
    """Negative mean critic score of encoded target features."""
    if tgt_feats.shape[0] < 1:
        raise ConfigError("encoder_loss needs a non-empty batch")
    return -forward(critic, tgt_feats).mean()


def gradient_penalty(
    critic: Mlp,
    src_feats,
    tgt_feats,
    rng: Xoshiro256,
    include_endpoints: bool = True,
) -> Tensor:
    """Mean squared deviation of the critic's input-gradient norm from 1.

    Evaluated on random interpolates between paired source and target
    features, plus the endpoints themselves when include_endpoints.  The
    inner input gradient is recorded so the result stays differentiable
    with respect to the critic parameters.
    """
    s = src_feats.value if isinstance(src_feats, Tensor) else np.asarray(src_feats, dtype=np.float64)
    t = tgt_feats.value if isinstance(tgt_feats, Tensor) else np.asarray(tgt_feats, dtype=np.float64)
    if s.shape != t.shape:
        raise ShapeError(f"paired batches must match: {s.shape} vs {t.shape}")
    if s.ndim != 2 or s.shape[0] < 1:
        raise ConfigError("gradient_penalty needs a non-empty [batch x features] pair")
    eps = rng.uniforms(s.shape[0])[:, None]
    points = eps * s + (1.0 - eps) * t
    if include_endpoints:
        points = np.concatenate([points, s, t], axis=0)
    tape = critic.tape
    x_hat = tape.leaf(points)
    total = forward(critic, x_hat).sum()
    grad = backward(total, [x_hat], record=True)[x_hat.id]
    row_sq = matmul(grad.square(), tape.leaf(np.ones((points.shape[1], 1))))
    norms = (row_sq + _EPS_NORM).sqrt()
    return (norms - 1.0).square().mean()


def adapt_target(
    bundle: SourceBundle,
    src: Dataset,
    tgt_x: Tensor,
    cfg: AdaptConfig,
    rng: Xoshiro256,
) -> SourceBundle:
    """Train a target encoder against a fresh critic; extractor frozen.

    The encoder starts as a clone of the source extractor, so matched
    domains begin at the zero-distance fixed point.  Critic updates
    minimize the negated score gap plus the gradient penalty; encoder
    updates minimize the negative target score.
    """
    tgt = tgt_x.value if isinstance(tgt_x, Tensor) else np.asarray(tgt_x, dtype=np.float64)
    if tgt.ndim != 2 or tgt.shape[1] != bundle.extractor.config.d_in:
        raise ShapeError(f"target data shape {tgt.shape} does not match extractor input")
    if tgt.shape[0] < 1:
        raise ConfigError("adapt_target needs non-empty target data")
    frozen_before = [p.value.copy() for p in bundle.extractor.params]
    src_feats = bundle.extractor.predict_values(src.x.value)

    tape = Tape()
    target_encoder = clone_mlp(bundle.extractor, tape)
    critic_cfg = MlpConfig(
        layer_widths=(bundle.extractor.config.d_out, *cfg.critic_hidden, 1),
        activation="leaky_relu",
        leaky_slope=cfg.critic_slope,
    )
    critic = init_mlp(critic_cfg, rng, tape)
    opt_critic = adam(cfg.lr_critic, beta1=0.5, beta2=0.9)
    opt_encoder = adam(cfg.lr_encoder, beta1=0.5, beta2=0.9)
    mark = tape.mark()
    for i in range(cfg.steps):
        if cfg.lr_decay:
            # anneal both players to zero so the endpoint is settled,
            # not a random phase of the adversarial oscillation
            factor = 1.0 - i / cfg.steps
            opt_critic.learning_rate = cfg.lr_critic * factor
            opt_encoder.learning_rate = cfg.lr_encoder * factor
        try:
            for _ in range(cfg.n_critic):
                tape.reset(mark)
                si = rng.integers(cfg.batch_size, below=src.n)
                ti = rng.integers(cfg.batch_size, below=tgt.shape[0])
                sf = tape.leaf(src_feats[si])
                tf = tape.leaf(target_encoder.predict_values(tgt[ti]))
                loss = cfg.alpha * gradient_penalty(
                    critic, sf, tf, rng, cfg.include_endpoints
                ) - critic_loss(critic, sf, tf)
                step(opt_critic, critic.params, backward(loss, critic.params))
            tape.reset(mark)
            ti = rng.integers(cfg.batch_size, below=tgt.shape[0])
            feats = forward(target_encoder, tape.leaf(tgt[ti]))
            loss = encoder_loss(critic, feats)
            step(opt_encoder, target_encoder.params, backward(loss, target_encoder.params))
        except NonFiniteError as exc:
            raise DivergenceError(f"adaptation diverged: {exc}", step=i) from exc
    tape.reset(mark)

    for p, before in zip(bundle.extractor.params, frozen_before):
        if not np.array_equal(p.value, before):
            raise ConfigError("source extractor changed during adaptation")
    adapted = SourceBundle(
        name=bundle.name,
        extractor=bundle.extractor,
        classifier=bundle.classifier,
        target_encoder=target_encoder,
        critic=critic,
        wd_estimate=0.0,
    )
    adapted.wd_estimate = estimate_wd(adapted, src, tgt_x)
    return adapted


def estimate_wd(bundle: SourceBundle, src: Dataset, tgt_x: Tensor) -> float:
    """Converged critic gap over the full source and target sets."""
    if bundle.critic is None or bundle.target_encoder is None:
        raise ConfigError("bundle missing critic; run adaptation first")
    tgt = tgt_x.value if isinstance(tgt_x, Tensor) else np.asarray(tgt_x, dtype=np.float64)
    with bundle.critic.tape.paused():
        sf = Tensor.of(bundle.extractor.predict_values(src.x.value))
        tf = Tensor.of(bundle.target_encoder.predict_values(tgt))
        return float(critic_loss(bundle.critic, sf, tf).item())


# ---------------------------------------------------------------------------
# stage 3: source distilling


def sample_distances(bundle: SourceBundle, src: Dataset, tgt_x: Tensor) -> np.ndarray:
    """Each source sample's critic score minus the mean target score,
    in absolute value."""
    if bundle.critic is None or bundle.target_encoder is None:
        raise ConfigError("bundle missing critic; run adaptation first")
    tgt = tgt_x.value if isinstance(tgt_x, Tensor) else np.asarray(tgt_x, dtype=np.float64)
    if tgt.shape[0] < 1:
        raise ConfigError("sample_distances needs non-empty target data")
    src_scores = _critic_scores(bundle.critic, bundle.extractor.predict_values(src.x.value))
    tgt_scores = _critic_scores(bundle.critic, bundle.target_encoder.predict_values(tgt))
    return np.abs(src_scores - tgt_scores.mean())


def _critic_scores(critic: Mlp, feats: np.ndarray) -> np.ndarray:
    return critic.predict_values(feats)[:, 0]


def distill_select(tau: np.ndarray, rule: str = "closest", fraction: float = 0.5) -> DistillSelection:
    """Pick the ceil(N * fraction) samples nearest the target (rule
    "closest"; "farthest" inverts).  Ties go to the lower index."""
    tau = np.asarray(tau, dtype=np.float64)
    if tau.size < 2:
        raise ConfigError("distilling needs at least two samples")
    if rule not in ("closest", "farthest"):
        raise ConfigError(f"unknown distill rule {rule!r}")
    k = math.ceil(tau.size * fraction)
    order = np.argsort(tau if rule == "closest" else -tau, kind="stable")
    return DistillSelection(
        tau=tau,
        selected_indices=np.sort(order[:k]),
        rule=rule,
        fraction=fraction,
    )


def distill_finetune(
    bundle: SourceBundle,
    src: Dataset,
    sel: DistillSelection,
    train: TrainConfig,
    rng: Xoshiro256,
) -> SourceBundle:
    """Fine-tune a copy of the classifier on the selected samples only.

    Features come from the frozen extractor; the returned bundle shares
    every network except the classifier with the input bundle.
    """
    if bundle.target_encoder is None:
        raise ConfigError("distilling requires a completed adaptation stage")
    if sel.tau.size != src.n:
        raise ConfigError(f"selection over {sel.tau.size} samples, dataset has {src.n}")
    feats = bundle.extractor.predict_values(src.x.value)[sel.selected_indices]
    labels = src.y[sel.selected_indices]
    tape = Tape()
    classifier = clone_mlp(bundle.classifier, tape)
    opt = adam(train.learning_rate)
    mark = tape.mark()
    for i in range(train.steps):
        tape.reset(mark)
        idx = rng.integers(train.batch_size, below=feats.shape[0])
        try:
            loss = softmax_cross_entropy(forward(classifier, tape.leaf(feats[idx])), labels[idx])
            step(opt, classifier.params, backward(loss, classifier.params))
        except NonFiniteError as exc:
            raise DivergenceError(f"fine-tuning diverged: {exc}", step=i) from exc
    tape.reset(mark)
    return SourceBundle(
        name=bundle.name,
        extractor=bundle.extractor,
        classifier=classifier,
        target_encoder=bundle.target_encoder,
        critic=bundle.critic,
        wd_estimate=bundle.wd_estimate,
        distilled=True,
    )


# ---------------------------------------------------------------------------
# stage 4: weighting and aggregation


def domain_weight(wd_estimates) -> DomainWeights:
    """Relevance weight exp(-L^2 / 2) per source, with a normalized copy."""
    arr = np.asarray(wd_estimates, dtype=np.float64)
    if arr.size < 1:
        raise ConfigError("domain_weight needs at least one estimate")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("distance estimates must be finite")
    raw = np.exp(-(arr * arr) / 2.0)
    return DomainWeights(raw=raw, normalized=raw / raw.sum())


def uniform_weights(count: int) -> DomainWeights:
    if count < 1:
        raise ConfigError("need at least one source")
    return DomainWeights(raw=np.ones(count), normalized=np.full(count, 1.0 / count))


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def single_source_probs(bundle: SourceBundle, x) -> np.ndarray:
    """Softmax prediction of one source's classifier on encoded target input."""
    if bundle.target_encoder is None:
        raise ConfigError("bundle missing target encoder")
    x_np = x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    return _softmax_rows(bundle.classifier.predict_values(bundle.target_encoder.predict_values(x_np)))


def aggregate_predict(bundles: list[SourceBundle], weights: DomainWeights, x) -> Prediction:
    """Weighted sum of per-source softmax predictions; labels by argmax."""
    if not bundles:
        raise ConfigError("aggregate_predict needs at least one bundle")
    if weights.normalized.size != len(bundles):
        raise ConfigError(f"{weights.normalized.size} weights for {len(bundles)} bundles")
    total = None
    for w, bundle in zip(weights.normalized, bundles):
        contrib = w * single_source_probs(bundle, x)
        total = contrib if total is None else total + contrib
    return Prediction(probs=Tensor.of(total), labels=np.argmax(total, axis=1))


# ---------------------------------------------------------------------------
# ablation baselines


def baseline_uniform(bundles: list[SourceBundle], x) -> Prediction:
    """Aggregation with every source weighted equally."""
    return aggregate_predict(bundles, uniform_weights(len(bundles)), x)


def baseline_source_combined(
    sources: list[Dataset],
    extractor_cfg: MlpConfig,
    classifier_cfg: MlpConfig,
    train: TrainConfig,
    tgt_x: Tensor,
    adapt_cfg: AdaptConfig,
    rng: Xoshiro256,
    name: str = "combined",
) -> SourceBundle:
    """Pool all sources into one dataset and run stages 1 and 2 on it."""
    combined = concat_datasets(sources, name)
    bundle = pretrain_source(combined, extractor_cfg, classifier_cfg, train, rng, name=name)
    return adapt_target(bundle, combined, tgt_x, adapt_cfg, rng)


def baseline_single_best(bundles: list[SourceBundle], tgt: Dataset) -> tuple[int, np.ndarray]:
    """Index of the solo source with the highest target accuracy, plus
    every source's solo accuracy."""
    if not bundles:
        raise ConfigError("baseline_single_best needs at least one bundle")
    accs = np.array(
        [
            float(np.mean(np.argmax(single_source_probs(b, tgt.x), axis=1) == tgt.y))
            for b in bundles
        ]
    )
    return int(np.argmax(accs)), accs


# ---------------------------------------------------------------------------
# bundle checkpoints: parameter files plus a JSON description


def _config_hash(configs: dict) -> str:
    canon = json.dumps(configs, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


_NET_FILES = ("extractor", "classifier", "target_encoder", "critic")


def save_bundle(bundle: SourceBundle, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    configs = {}
    for attr in _NET_FILES:
        net = getattr(bundle, attr)
        if net is None:
            continue
        configs[attr] = config_to_dict(net.config)
        save_params(net, os.path.join(directory, f"{attr}.bin"))
    meta = {
        "schema_version": 1,
        "name": bundle.name,
        "stage": bundle.stage,
        "distilled": bundle.distilled,
        "wd_estimate": bundle.wd_estimate,
        "configs": configs,
        "config_hash": _config_hash(configs),
    }
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle(directory) -> SourceBundle:
    with open(os.path.join(directory, "meta.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("schema_version") != 1:
        raise ConfigError(f"unsupported bundle schema {meta.get('schema_version')}")
    nets: dict[str, Mlp | None] = {}
    tape = Tape()
    for attr in _NET_FILES:
        if attr not in meta["configs"]:
            nets[attr] = None
            continue
        cfg = config_from_dict(meta["configs"][attr])
        arrays = load_params(os.path.join(directory, f"{attr}.bin"))
        nets[attr] = Mlp(cfg, tape, [tape.leaf(a) for a in arrays])
    if nets["extractor"] is None or nets["classifier"] is None:
        raise ConfigError(f"{directory}: checkpoint lacks extractor or classifier")
    return SourceBundle(
        name=meta["name"],
        extractor=nets["extractor"],
        classifier=nets["classifier"],
        target_encoder=nets["target_encoder"],
        critic=nets["critic"],
        wd_estimate=meta["wd_estimate"],
        distilled=meta["distilled"],
    )

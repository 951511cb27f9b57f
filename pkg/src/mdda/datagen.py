"""Synthetic classification domains with controllable shift.

A domain is a Gaussian mixture (one component per class) pushed through
a rigid motion plus scaling: ``x = scale * R(rotation) @ (mean_y +
cov_scale * z) + translation`` with ``z`` standard normal and the
rotation acting on the first two coordinates.  Families of shifted
domains give a continuous knob for how far each source sits from the
target.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, DataFormatError
from .rng import Xoshiro256


@dataclass(frozen=True)
class DomainSpec:
    name: str
    n_classes: int
    d: int
    base_means: tuple[tuple[float, ...], ...]
    cov_scale: float
    rotation: float = 0.0
    translation: tuple[float, ...] = ()
    scale: float = 1.0
    label_noise: float = 0.0

    def __post_init__(self):
        means = tuple(tuple(float(v) for v in m) for m in self.base_means)
        object.__setattr__(self, "base_means", means)
        trans = tuple(float(v) for v in self.translation) or (0.0,) * self.d
        object.__setattr__(self, "translation", trans)
        if self.n_classes < 1:
            raise ConfigError("n_classes must be positive")
        if self.d < 1:
            raise ConfigError("d must be positive")
        if len(means) != self.n_classes:
            raise ConfigError(f"need {self.n_classes} means, got {len(means)}")
        if any(len(m) != self.d for m in means):
            raise ConfigError("every mean must have dimension d")
        if len(set(means)) != len(means):
            raise ConfigError("class means must be pairwise distinct")
        if len(trans) != self.d:
            raise ConfigError("translation must have dimension d")
        if self.cov_scale <= 0.0:
            raise ConfigError("cov_scale must be positive")
        if self.scale <= 0.0:
            raise ConfigError("scale must be positive")
        if not 0.0 <= self.label_noise < 0.5:
            raise ConfigError("label_noise must lie in [0, 0.5)")
        if self.d < 2 and self.rotation != 0.0:
            raise ConfigError("rotation needs at least two dimensions")


@dataclass
class Dataset:
    x: Tensor
    y: np.ndarray
    domain_name: str

    def __post_init__(self):
        if not isinstance(self.x, Tensor):
            self.x = Tensor.of(self.x)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.value.ndim != 2:
            raise ConfigError(f"dataset x must be [n x d], got {self.x.shape}")
        if self.x.shape[0] != self.y.shape[0]:
            raise ConfigError("x row count must equal label count")
        if self.x.shape[0] < 1:
            raise ConfigError("dataset has zero rows")
        if self.y.size and self.y.min() < 0:
            raise ConfigError("labels must be non-negative")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


def rotation_matrix(angle: float, d: int) -> np.ndarray:
    """Identity except a rotation by `angle` in the first two coordinates."""
    r = np.eye(d)
    if d >= 2:
        c, s = np.cos(angle), np.sin(angle)
        r[0, 0], r[0, 1] = c, -s
        r[1, 0], r[1, 1] = s, c
    return r


def domain_centroids(spec: DomainSpec) -> np.ndarray:
    """Exact post-transform class means, [n_classes x d]."""
    r = rotation_matrix(spec.rotation, spec.d)
    means = np.asarray(spec.base_means)
    return spec.scale * means @ r.T + np.asarray(spec.translation)


def sample_domain(spec: DomainSpec, n: int, rng: Xoshiro256) -> Dataset:
    """Draw n labelled points.  Labels are uniform over classes; with
    probability label_noise a label is flipped to a uniformly random
    other class (the point itself is not moved)."""
    if n < 1:
        raise ConfigError("sample count must be positive")
    y = rng.integers(n, below=spec.n_classes)
    z = rng.normals(n * spec.d).reshape(n, spec.d)
    means = np.asarray(spec.base_means)
    r = rotation_matrix(spec.rotation, spec.d)
    x = spec.scale * (means[y] + spec.cov_scale * z) @ r.T + np.asarray(spec.translation)
    if spec.label_noise > 0.0 and spec.n_classes > 1:
        flips = rng.uniforms(n)
        shifts = rng.integers(n, below=spec.n_classes - 1)
        flip = flips < spec.label_noise
        y = np.where(flip, (y + 1 + shifts) % spec.n_classes, y)
    return Dataset(Tensor.of(x), y, spec.name)


@dataclass(frozen=True)
class ShiftDelta:
    """A rigid-motion-plus-scale delta composed onto a base domain."""

    rotation: float = 0.0
    translation: tuple[float, ...] = ()
    scale: float = 1.0
    name: str = ""


def make_shift_family(base: DomainSpec, shifts: list[ShiftDelta]) -> list[DomainSpec]:
    """One spec per delta, each the composition delta-after-base.

    Composing ``p -> s' R' (s R p + t) + t'`` keeps the family inside the
    same parameterization: rotations add, scales multiply, and the base
    translation is carried through the delta's motion.
    """
    if not shifts:
        raise ConfigError("make_shift_family needs at least one delta")
    out = []
    base_t = np.asarray(base.translation)
    for i, delta in enumerate(shifts):
        if delta.scale <= 0.0:
            raise ConfigError("shift scale must be positive")
        dt = np.asarray(tuple(float(v) for v in delta.translation) or (0.0,) * base.d)
        if dt.shape != (base.d,):
            raise ConfigError("shift translation must have dimension d")
        r = rotation_matrix(delta.rotation, base.d)
        new_t = delta.scale * r @ base_t + dt
        out.append(
            DomainSpec(
                name=delta.name or f"{base.name}_shift{i}",
                n_classes=base.n_classes,
                d=base.d,
                base_means=base.base_means,
                cov_scale=base.cov_scale,
                rotation=base.rotation + delta.rotation,
                translation=tuple(new_t),
                scale=base.scale * delta.scale,
                label_noise=base.label_noise,
            )
        )
    return out


def concat_datasets(datasets: list[Dataset], name: str) -> Dataset:
    if not datasets:
        raise ConfigError("cannot concatenate zero datasets")
    x = np.concatenate([ds.x.value for ds in datasets], axis=0)
    y = np.concatenate([ds.y for ds in datasets])
    return Dataset(Tensor.of(x), y, name)


def split_rows(ds: Dataset, n_first: int) -> tuple[Dataset, Dataset]:
    """Deterministic row split: the first n_first rows and the rest."""
    if not 1 <= n_first < ds.n:
        raise ConfigError(f"split point {n_first} outside (0, {ds.n})")
    return (
        Dataset(Tensor.of(ds.x.value[:n_first]), ds.y[:n_first], ds.domain_name),
        Dataset(Tensor.of(ds.x.value[n_first:]), ds.y[n_first:], ds.domain_name),
    )


# ---------------------------------------------------------------------------
# CSV dataset files: header "y,x0,...,x{d-1}", one sample per row


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("y," + ",".join(f"x{i}" for i in range(ds.d)) + "\n")
        for yi, row in zip(ds.y, ds.x.value):
            fh.write(str(int(yi)) + "," + ",".join(f"{v:.17g}" for v in row) + "\n")


def load_csv(path, domain_name: str | None = None) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[0] != "y" or any(h != f"x{i}" for i, h in enumerate(header[1:])):
        raise DataFormatError(f"{path}: line 1: bad header {lines[0]!r}")
    d = len(header) - 1
    if d < 1:
        raise DataFormatError(f"{path}: line 1: header has no feature columns")
    ys: list[int] = []
    xs: list[list[float]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != d + 1:
            raise DataFormatError(
                f"{path}: line {lineno}: expected {d + 1} columns, got {len(parts)}"
            )
        try:
            label = int(parts[0])
        except ValueError:
            raise DataFormatError(
                f"{path}: line {lineno}: non-integer label {parts[0]!r}"
            ) from None
        try:
            row = [float(v) for v in parts[1:]]
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno}: malformed row") from None
        ys.append(label)
        xs.append(row)
    if not ys:
        raise DataFormatError(f"{path}: dataset has zero rows")
    name = domain_name if domain_name is not None else _stem(path)
    return Dataset(Tensor.of(np.asarray(xs)), np.asarray(ys), name)


def _stem(path) -> str:
    text = str(path)
    base = text.rsplit("/", 1)[-1]
    return base.rsplit(".", 1)[0] if "." in base else base


# ---------------------------------------------------------------------------
# JSON domain-spec manifests


def spec_to_dict(spec: DomainSpec) -> dict:
    return {
        "name": spec.name,
        "n_classes": spec.n_classes,
        "d": spec.d,
        "means": [list(m) for m in spec.base_means],
        "cov_scale": spec.cov_scale,
        "rotation": spec.rotation,
        "translation": list(spec.translation),
        "scale": spec.scale,
        "label_noise": spec.label_noise,
    }


def spec_from_dict(data: dict) -> DomainSpec:
    try:
        return DomainSpec(
            name=str(data["name"]),
            n_classes=int(data["n_classes"]),
            d=int(data["d"]),
            base_means=tuple(tuple(m) for m in data["means"]),
            cov_scale=float(data["cov_scale"]),
            rotation=float(data.get("rotation", 0.0)),
            translation=tuple(data.get("translation", ())),
            scale=float(data.get("scale", 1.0)),
            label_noise=float(data.get("label_noise", 0.0)),
        )
    except KeyError as exc:
        raise DataFormatError(f"domain spec missing field {exc}") from None


def save_manifest(specs: list[DomainSpec], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([spec_to_dict(s) for s in specs], fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> list[DomainSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise DataFormatError(f"{path}: manifest must be a JSON list")
    return [spec_from_dict(entry) for entry in data]

"""Synthetic shifted-domain datasets and CSV feature ingestion.

Label layout for a generated task: shared classes take ``0..S-1``,
source-private classes ``S..S+Ps-1`` and target-private classes
``S+Ps..S+Ps+Pt-1``. A source model therefore has ``K = S + Ps`` outputs;
target-private labels lie outside that range and are only ever used for
evaluation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class DomainSpec:
    n_shared: int = 10
    n_source_private: int = 0
    n_target_private: int = 0
    samples_per_class: int = 60
    input_dim: int = 2
    shift: float = 1.5
    rotation: float = 0.3
    noise_sigma: float = 0.35
    radius: float = 3.0
    seed: int = 0

    @property
    def is_unida(self) -> bool:
        return self.n_source_private > 0 or self.n_target_private > 0

    @property
    def source_classes(self) -> int:
        return self.n_shared + self.n_source_private

    def validate(self) -> list[str]:
        errors = []
        for name in ("n_shared", "n_source_private", "n_target_private", "samples_per_class"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0")
        if self.n_shared < 1:
            errors.append("n_shared must be >= 1")
        if self.samples_per_class < 1:
            errors.append("samples_per_class must be >= 1")
        if self.input_dim < 2:
            errors.append("input_dim must be >= 2")
        if self.noise_sigma < 0:
            errors.append("noise_sigma must be >= 0")
        if self.n_source_private + self.n_shared < 2:
            errors.append("source domain needs at least 2 classes")
        return errors

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    is_private: np.ndarray | None = None
    domain: str = "source"
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.features)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def unlabeled(self) -> Dataset:
        """The view an adaptation stage is allowed to see."""
        return Dataset(self.features, None, None, self.domain, dict(self.meta))

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx],
            None if self.labels is None else self.labels[idx],
            None if self.is_private is None else self.is_private[idx],
            self.domain,
            dict(self.meta),
        )


def _rotation_matrix(dim: int, angle: float) -> np.ndarray:
    r = np.eye(dim)
    c, s = math.cos(angle), math.sin(angle)
    r[:2, :2] = [[c, -s], [s, c]]
    return r


def class_means(spec: DomainSpec, rng: np.random.Generator) -> np.ndarray:
    """All class means on a circle of ``spec.radius`` in the first two dims."""
    n = spec.n_shared + spec.n_source_private + spec.n_target_private
    base = 2 * math.pi * np.arange(n) / n
    jitter = rng.uniform(-0.25, 0.25, size=n) * (2 * math.pi / n)
    angles = base + jitter
    # shuffle which class sits where so privates are not contiguous on the circle
    angles = angles[rng.permutation(n)]
    means = np.zeros((n, spec.input_dim))
    means[:, 0] = spec.radius * np.cos(angles)
    means[:, 1] = spec.radius * np.sin(angles)
    return means


def _draw(means: np.ndarray, classes, per_class: int, sigma: float, rng) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for c in classes:
        xs.append(means[c] + sigma * rng.standard_normal((per_class, means.shape[1])))
        ys.append(np.full(per_class, c))
    return np.concatenate(xs), np.concatenate(ys).astype(np.int64)


def generate(spec: DomainSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Return ``(source, target_train, target_eval)``.

    Target shared-class means are the source means translated by ``shift``
    (seeded direction) and rotated by ``rotation`` about the origin.
    ``target_train`` is unlabeled; ``target_eval`` is an independent draw
    with labels and private flags.
    """
    errors = spec.validate()
    if errors:
        raise DataError("; ".join(errors))
    rng = np.random.default_rng(spec.seed)
    means = class_means(spec, rng)
    s, ps, pt = spec.n_shared, spec.n_source_private, spec.n_target_private
    direction = rng.standard_normal(spec.input_dim)
    direction /= np.linalg.norm(direction)
    target_means = means.copy()
    target_means[:s] = (means[:s] + spec.shift * direction) @ _rotation_matrix(spec.input_dim, spec.rotation).T
    src_classes = range(s + ps)
    tgt_classes = [*range(s), *range(s + ps, s + ps + pt)]
    meta = {"num_classes": s + ps, "n_shared": s, "spec": spec.to_dict()}

    xs, ys = _draw(means, src_classes, spec.samples_per_class, spec.noise_sigma, rng)
    source = Dataset(xs, ys, None, "source", meta)
    xt, yt = _draw(target_means, tgt_classes, spec.samples_per_class, spec.noise_sigma, rng)
    target_train = Dataset(xt, None, None, "target", meta)
    xe, ye = _draw(target_means, tgt_classes, spec.samples_per_class, spec.noise_sigma, rng)
    target_eval = Dataset(xe, ye, ye >= s, "target", meta)
    return source, target_train, target_eval


def save_csv(dataset: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = dataset.input_dim
    header = [f"f{i}" for i in range(d)]
    if dataset.labels is not None:
        header.append("label")
    if dataset.is_private is not None:
        header.append("is_private")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]]
            if dataset.labels is not None:
                row.append(str(int(dataset.labels[i])))
            if dataset.is_private is not None:
                row.append(str(int(dataset.is_private[i])))
            w.writerow(row)
    return path


def load_csv(path, domain: str = "target", require_labels: bool = False) -> Dataset:
    """Read ``f0..f{d-1}[,label][,is_private]``; values must be finite."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        d = 0
        while d < len(header) and header[d] == f"f{d}":
            d += 1
        rest = header[d:]
        if d == 0 or rest not in ([], ["label"], ["is_private"], ["label", "is_private"]):
            raise DataError(f"{path}:1: bad header {header!r}")
        has_label = "label" in rest
        has_private = "is_private" in rest
        if require_labels and not has_label:
            raise DataError(f"{path}: a label column is required")
        feats, labels, private = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                x = [float(v) for v in row[:d]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in x):
                raise DataError(f"{path}:{lineno}: non-finite feature value")
            feats.append(x)
            col = d
            if has_label:
                try:
                    y = int(row[col])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: label {row[col]!r} is not an integer") from None
                if y < 0:
                    raise DataError(f"{path}:{lineno}: negative label {y}")
                labels.append(y)
                col += 1
            if has_private:
                if row[col].strip() not in ("0", "1"):
                    raise DataError(f"{path}:{lineno}: is_private must be 0 or 1")
                private.append(row[col].strip() == "1")
    if not feats:
        raise DataError(f"{path}: no data rows")
    ys = np.array(labels, dtype=np.int64) if has_label else None
    meta = {}
    if ys is not None:
        known = ys if not has_private else ys[~np.array(private)]
        meta["num_classes"] = int(known.max()) + 1 if known.size else int(ys.max()) + 1
    return Dataset(np.array(feats, dtype=np.float64), ys, np.array(private, dtype=bool) if has_private else None,
                   domain, meta)

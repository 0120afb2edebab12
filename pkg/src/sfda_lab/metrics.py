"""H-score, top-k accuracy and known/unknown accuracies."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .losses import normalized_entropy_rows

UNKNOWN = -1
DEFAULT_UNKNOWN_THRESHOLD = 0.5


@dataclass
class EvalOutcome:
    known_acc: float
    unknown_acc: float
    h_score: float
    topk_acc: dict[int, float] = field(default_factory=dict)
    warning: str | None = None

    def to_dict(self) -> dict:
        out = {"known_acc": _r4(self.known_acc), "unknown_acc": _r4(self.unknown_acc), "h_score": _r4(self.h_score)}
        out.update({f"top{k}": _r4(v) for k, v in sorted(self.topk_acc.items())})
        return out


def _r4(v: float) -> float | None:
    return None if math.isnan(v) else round(v, 4)


def h_score(known_acc: float, unknown_acc: float) -> float:
    for v in (known_acc, unknown_acc):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"accuracies must lie in [0, 1], got {v}")
    s = known_acc + unknown_acc
    return 0.0 if s == 0 else 2.0 * known_acc * unknown_acc / s


def topk_predictions(logits: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest logits per row, ties to the lowest index."""
    return np.argsort(-logits, axis=1, kind="stable")[:, :k]


def topk_accuracy(logits, labels, k: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if not 1 <= k <= logits.shape[1]:
        raise ValueError(f"k must lie in [1, {logits.shape[1]}], got {k}")
    if labels.size == 0:
        return 0.0
    hits = (topk_predictions(logits, k) == labels[:, None]).any(axis=1)
    return float(hits.mean())


def unida_predictions(logits: np.ndarray, threshold: float = DEFAULT_UNKNOWN_THRESHOLD) -> np.ndarray:
    """Argmax class, or ``UNKNOWN`` where normalized entropy >= threshold."""
    pred = np.argmax(logits, axis=1)
    pred[normalized_entropy_rows(logits) >= threshold] = UNKNOWN
    return pred


def evaluate_unida(logits, labels, is_private, threshold: float = DEFAULT_UNKNOWN_THRESHOLD) -> EvalOutcome:
    """Known accuracy over shared-class samples, unknown accuracy over private ones.

    A shared sample is correct only if it is predicted as its own class and
    not flagged unknown; a private sample is correct iff flagged unknown.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    is_private = np.asarray(is_private, dtype=bool)
    pred = unida_predictions(logits, threshold)
    known = ~is_private
    msg = None
    if known.sum() == 0 or is_private.sum() == 0:
        msg = "evaluation set lacks known or unknown samples; h_score reported as 0"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    known_acc = float((pred[known] == labels[known]).mean()) if known.any() else math.nan
    unknown_acc = float((pred[is_private] == UNKNOWN).mean()) if is_private.any() else math.nan
    hs = 0.0 if msg else h_score(known_acc, unknown_acc)
    return EvalOutcome(known_acc, unknown_acc, hs, warning=msg)


def closed_set_outcome(logits, labels, ks=(1, 3)) -> EvalOutcome:
    logits = np.asarray(logits, dtype=np.float64)
    top = {k: topk_accuracy(logits, labels, k) for k in ks if k <= logits.shape[1]}
    acc = top.get(1, topk_accuracy(logits, labels, 1))
    return EvalOutcome(acc, math.nan, math.nan, top)

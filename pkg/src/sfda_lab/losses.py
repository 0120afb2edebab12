"""Scalar training objectives. All batch reductions are arithmetic means."""
from __future__ import annotations

import math

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor


class LabelError(ValueError):
    pass


def _check_labels(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    return labels


def smoothed_targets(labels, k: int, alpha_smooth: float) -> np.ndarray:
    """(1 - alpha) * onehot + alpha / K, one row per label."""
    labels = _check_labels(labels, k)
    q = np.full((labels.size, k), alpha_smooth / k)
    q[np.arange(labels.size), labels] += 1.0 - alpha_smooth
    return q


def soft_ce(logits: Tensor, targets: np.ndarray) -> Tensor:
    """mean_i of -sum_k targets[i, k] * log softmax(logits)[i, k]; targets are constants."""
    if targets.shape != logits.shape:
        raise dc.ShapeError(f"targets {targets.shape} do not match logits {logits.shape}")
    return dc.neg(dc.mean(dc.row_sum(dc.log_softmax(logits) * targets)))


def smoothed_ce(logits: Tensor, labels, alpha_smooth: float = 0.1) -> Tensor:
    return soft_ce(logits, smoothed_targets(labels, logits.shape[1], alpha_smooth))


def ema_consistency_ce(logits_live: Tensor, logits_ema) -> Tensor:
    """CE of live predictions against the (detached) EMA predictions."""
    ema = logits_ema.data if isinstance(logits_ema, Tensor) else np.asarray(logits_ema, dtype=np.float64)
    if ema.shape != logits_live.shape:
        raise dc.ShapeError(f"EMA logits {ema.shape} do not match live logits {logits_live.shape}")
    return soft_ce(logits_live, dc.softmax_np(ema))


def entropy(probs_row, normalized: bool = False) -> float:
    """Shannon entropy of one distribution, with 0 log 0 = 0."""
    p = np.asarray(probs_row, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("probabilities must be nonnegative")
    nz = p[p > 0]
    h = float(-(nz * np.log(nz)).sum())
    if normalized:
        h /= math.log(p.size)
    return h


def normalized_entropy_rows(logits: np.ndarray) -> np.ndarray:
    """Per-row prediction entropy divided by ln K, computed from logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(logp)
    return -(p * logp).sum(axis=1) / math.log(logits.shape[1])


def pseudo_ce(logits: Tensor, pseudo) -> Tensor:
    pseudo = _check_labels(pseudo, logits.shape[1])
    return dc.neg(dc.mean(dc.pick(dc.log_softmax(logits), pseudo)))


def entropy_max_loss(logits: Tensor) -> Tensor:
    """Negative mean (unnormalized) prediction entropy; minimized by uniform rows."""
    logp = dc.log_softmax(logits)
    p = dc.softmax(logits)
    # mean_i sum_k p log p  ==  -mean entropy
    return dc.mean(dc.row_sum(p * logp))


def double_pseudo_ce(logits: Tensor, y1, y2, beta: float = 0.3, gamma: float = 0.1) -> Tensor:
    y1 = np.asarray(y1, dtype=np.int64)
    y2 = np.asarray(y2, dtype=np.int64)
    if np.any(y1 == y2):
        raise LabelError("first and second pseudo labels must differ for every sample")
    return pseudo_ce(logits, y1) * beta + pseudo_ce(logits, y2) * gamma


def unida_loss(logits: Tensor, known_idx, unknown_idx, pseudo, alpha: float = 0.3) -> tuple[Tensor, float, float]:
    """Pseudo-label CE on the known rows plus ``alpha`` times entropy-max on the unknown rows.

    ``pseudo`` holds one label per known row. Either term is 0 when its set is
    empty. Returns the total and the two unweighted term values.
    """
    known_idx = np.asarray(known_idx, dtype=np.int64)
    unknown_idx = np.asarray(unknown_idx, dtype=np.int64)
    terms = []
    lk = lu = 0.0
    if known_idx.size:
        t = pseudo_ce(dc.take_rows(logits, known_idx), pseudo)
        lk = t.item()
        terms.append(t)
    if unknown_idx.size:
        t = entropy_max_loss(dc.take_rows(logits, unknown_idx))
        lu = t.item()
        terms.append(t * alpha)
    if not terms:
        return dc.total(logits * 0.0), 0.0, 0.0
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out, lk, lu

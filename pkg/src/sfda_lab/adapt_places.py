"""Closed-set adaptation with two fixed pseudo labels per target sample.

The source model's top-1 and top-2 classes are computed once, before any
update, and weighted by ``beta`` and ``gamma`` in the self-training loss.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import losses
from .adaptation import AdaptConfig, run_adaptation
from .data import Dataset
from .diffcore import softmax_np
from .metrics import closed_set_outcome
from .model import SFDAModel
from .records import RunRecord


@dataclass
class PlacesConfig(AdaptConfig):
    epochs: int = 1
    beta: float = 0.3
    gamma: float = 0.1

    def validate(self, section: str = "places") -> list[str]:
        errors = super().validate(section)
        if self.beta < 0 or self.gamma < 0:
            errors.append(f"{section}.beta and {section}.gamma must be >= 0")
        return errors


@dataclass
class DoublePseudoLabels:
    y1: np.ndarray
    y2: np.ndarray


def top2_from_probs(probs: np.ndarray) -> DoublePseudoLabels:
    """Top-1 and top-2 columns per row; equal values go to the lower index."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[1] < 2:
        raise ValueError("double pseudo labels need at least two classes")
    order = np.argsort(-probs, axis=1, kind="stable")
    return DoublePseudoLabels(order[:, 0].copy(), order[:, 1].copy())


def double_pseudo(source_model: SFDAModel, features: np.ndarray) -> DoublePseudoLabels:
    _, logits = source_model.predict(features)
    return top2_from_probs(softmax_np(logits))


@dataclass
class PlacesResult:
    model: SFDAModel
    record: RunRecord
    pseudo: DoublePseudoLabels


def fixed_label_loss(terms: list[tuple[np.ndarray, float]]):
    """Batch loss for self-training against fixed labels: sum_j w_j * CE(labels_j)."""

    def batch_loss(idx, logits, step, total):
        out = None
        logged = {}
        for j, (labels, weight) in enumerate(terms):
            t = losses.pseudo_ce(logits, labels[idx])
            logged[f"loss_ce{j + 1}"] = t.item()
            t = t * weight
            out = t if out is None else out + t
        return out, logged

    return batch_loss


def closed_set_eval(eval_set: Dataset | None):
    def epoch_eval(model):
        if eval_set is None or eval_set.labels is None:
            return {}
        _, logits = model.predict(eval_set.features)
        return closed_set_outcome(logits, eval_set.labels).to_dict()

    return epoch_eval


def adapt_places(
    source_model: SFDAModel,
    target: Dataset,
    cfg: PlacesConfig | None = None,
    eval_set: Dataset | None = None,
) -> PlacesResult:
    cfg = cfg or PlacesConfig()
    pseudo = double_pseudo(source_model, target.features)
    record = RunRecord(f"adapt-places-seed{cfg.seed}", cfg.seed, {"places": asdict(cfg)})
    if eval_set is not None and eval_set.labels is not None:
        # diagnostics only: how often each pseudo label is right on the labeled split
        diag = double_pseudo(source_model, eval_set.features)
        record.config["pseudo_label_diagnostics"] = {
            "top1_correct": round(float((diag.y1 == eval_set.labels).mean()), 4),
            "top2_correct": round(float((diag.y2 == eval_set.labels).mean()), 4),
        }
    y1_before, y2_before = pseudo.y1.copy(), pseudo.y2.copy()
    batch = fixed_label_loss([(pseudo.y1, cfg.beta), (pseudo.y2, cfg.gamma)])
    if np.any(pseudo.y1 == pseudo.y2):
        raise losses.LabelError("first and second pseudo labels coincide")
    model = run_adaptation(source_model, target.features, cfg, batch, record, closed_set_eval(eval_set),
                           stage="adapt_places")
    assert np.array_equal(y1_before, pseudo.y1) and np.array_equal(y2_before, pseudo.y2)
    return PlacesResult(model, record, pseudo)

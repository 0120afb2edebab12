"""Closed-set adaptation with centroid/cosine pseudo labels.

Class centroids are soft-assignment weighted means of the source model's
target features; each target sample is labeled with the centroid of highest
cosine similarity. Labels are fixed for the whole run.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .adaptation import AdaptConfig, run_adaptation
from .adapt_places import closed_set_eval, fixed_label_loss
from .data import Dataset
from .diffcore import softmax_np
from .model import SFDAModel
from .records import RunRecord

MIN_CLASS_WEIGHT = 1e-12


@dataclass
class ImNetConfig(AdaptConfig):
    epochs: int = 1
    eta: float = 0.3
    centroid_rounds: int = 1

    def validate(self, section: str = "imnet") -> list[str]:
        errors = super().validate(section)
        if self.eta < 0:
            errors.append(f"{section}.eta must be >= 0")
        if self.centroid_rounds < 1:
            errors.append(f"{section}.centroid_rounds must be >= 1")
        return errors


@dataclass
class Centroids:
    c: np.ndarray
    valid: np.ndarray


def compute_centroids(features: np.ndarray, weights: np.ndarray) -> Centroids:
    """c_k = sum_i w_ik f_i / sum_i w_ik; classes with total weight < 1e-12 are invalid.

    Sums are correctly rounded (``math.fsum``), so the result does not depend
    on sample order.
    """
    features = np.asarray(features, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    k, d = weights.shape[1], features.shape[1]
    mass = np.array([math.fsum(weights[:, j]) for j in range(k)])
    valid = mass >= MIN_CLASS_WEIGHT
    c = np.zeros((k, d))
    for j in np.flatnonzero(valid):
        prod = (weights[:, j, None] * features).T.tolist()
        c[j] = [math.fsum(col) for col in prod]
        c[j] /= mass[j]
    return Centroids(c, valid)


def cosine_pseudo_labels(features: np.ndarray, centroids: Centroids) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    fn = np.linalg.norm(features, axis=1)
    if np.any(fn == 0):
        raise ValueError("cosine similarity is undefined for a zero feature vector")
    cn = np.linalg.norm(centroids.c, axis=1)
    usable = centroids.valid & (cn > 0)
    if not usable.any():
        raise ValueError("no valid centroid to compare against")
    sims = np.full((len(features), len(centroids.c)), -np.inf)
    sims[:, usable] = (features / fn[:, None]) @ (centroids.c[usable] / cn[usable, None]).T
    return np.argmax(sims, axis=1)


def centroid_pseudo_labels(source_model: SFDAModel, features_in: np.ndarray, rounds: int = 1) -> tuple[np.ndarray, Centroids]:
    """Soft centroids from the source model, then optional hard re-estimation rounds."""
    feats, logits = source_model.predict(features_in)
    cents = compute_centroids(feats, softmax_np(logits))
    labels = cosine_pseudo_labels(feats, cents)
    for _ in range(rounds - 1):
        onehot = np.eye(logits.shape[1])[labels]
        cents = compute_centroids(feats, onehot)
        labels = cosine_pseudo_labels(feats, cents)
    return labels, cents


@dataclass
class ImNetResult:
    model: SFDAModel
    record: RunRecord
    pseudo: np.ndarray
    centroids: Centroids


def adapt_imnet(
    source_model: SFDAModel,
    target: Dataset,
    cfg: ImNetConfig | None = None,
    eval_set: Dataset | None = None,
) -> ImNetResult:
    cfg = cfg or ImNetConfig()
    pseudo, cents = centroid_pseudo_labels(source_model, target.features, cfg.centroid_rounds)
    record = RunRecord(f"adapt-imnet-seed{cfg.seed}", cfg.seed, {"imnet": asdict(cfg)})
    if eval_set is not None and eval_set.labels is not None:
        feats, logits = source_model.predict(eval_set.features)
        record.config["pseudo_label_diagnostics"] = {
            "centroid_correct": round(float((cosine_pseudo_labels(feats, cents) == eval_set.labels).mean()), 4),
            "argmax_correct": round(float((np.argmax(logits, axis=1) == eval_set.labels).mean()), 4),
        }
    model = run_adaptation(source_model, target.features, cfg, fixed_label_loss([(pseudo, cfg.eta)]), record,
                           closed_set_eval(eval_set), stage="adapt_imnet")
    return ImNetResult(model, record, pseudo, cents)

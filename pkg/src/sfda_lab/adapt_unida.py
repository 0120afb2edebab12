"""Universal-DA adaptation: entropy-banded known/unknown split of each batch.

Rows whose normalized prediction entropy is at most ``tau_low`` are trained
toward their own argmax; rows at or above ``tau_high`` are pushed toward a
uniform prediction. The band starts collapsed at 0.5 and widens linearly to
(0.3, 0.7) over the run.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import losses
from .adaptation import AdaptConfig, run_adaptation
from .data import Dataset
from .metrics import DEFAULT_UNKNOWN_THRESHOLD, evaluate_unida
from .model import SFDAModel
from .records import RunRecord


@dataclass(frozen=True)
class ThresholdSchedule:
    tau_high: float
    tau_low: float
    zeta: float


@dataclass
class Partition:
    known_idx: np.ndarray
    unknown_idx: np.ndarray
    ambiguous_idx: np.ndarray


@dataclass
class UniDAConfig(AdaptConfig):
    epochs: int = 5
    alpha: float = 0.3
    unknown_threshold: float = DEFAULT_UNKNOWN_THRESHOLD

    def validate(self, section: str = "unida") -> list[str]:
        errors = super().validate(section)
        if self.alpha < 0:
            errors.append(f"{section}.alpha must be >= 0")
        if not 0.0 < self.unknown_threshold <= 1.0:
            errors.append(f"{section}.unknown_threshold must lie in (0, 1]")
        return errors


def schedule_for_zeta(zeta: float) -> ThresholdSchedule:
    return ThresholdSchedule(0.5 + 0.2 * zeta, 0.5 - 0.2 * zeta, zeta)


def thresholds_at(step: int, total_steps: int) -> ThresholdSchedule:
    """zeta = (step + 1) / total_steps, so the final step reaches (0.7, 0.3)."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    return schedule_for_zeta((step + 1) / total_steps)


def partition_batch(logits, sched: ThresholdSchedule) -> Partition:
    ent = losses.normalized_entropy_rows(np.asarray(getattr(logits, "data", logits), dtype=np.float64))
    known = ent <= sched.tau_low
    unknown = (ent >= sched.tau_high) & ~known
    ambiguous = ~(known | unknown)
    return Partition(np.flatnonzero(known), np.flatnonzero(unknown), np.flatnonzero(ambiguous))


@dataclass
class UniDAResult:
    model: SFDAModel
    record: RunRecord
    partition_sizes: list[dict] = field(default_factory=list)


def adapt_unida(
    source_model: SFDAModel,
    target: Dataset,
    cfg: UniDAConfig | None = None,
    eval_set: Dataset | None = None,
) -> UniDAResult:
    cfg = cfg or UniDAConfig()
    record = RunRecord(f"adapt-unida-seed{cfg.seed}", cfg.seed, {"unida": asdict(cfg)})
    sizes: list[dict] = []

    def batch_loss(idx, logits, step, total):
        sched = thresholds_at(step, total)
        part = partition_batch(logits, sched)
        # online pseudo labels from the current model, lowest index wins ties
        pseudo = np.argmax(logits.data[part.known_idx], axis=1)
        loss, lk, lu = losses.unida_loss(logits, part.known_idx, part.unknown_idx, pseudo, cfg.alpha)
        terms = {
            "loss_known": lk, "loss_unknown": lu, "alpha": cfg.alpha,
            "tau_high": sched.tau_high, "tau_low": sched.tau_low,
            "n_known": int(part.known_idx.size), "n_unknown": int(part.unknown_idx.size),
            "n_ambiguous": int(part.ambiguous_idx.size),
        }
        sizes.append({k: terms[k] for k in ("n_known", "n_unknown", "n_ambiguous")})
        return loss, terms

    def epoch_eval(model):
        if eval_set is None or eval_set.labels is None or eval_set.is_private is None:
            return {}
        _, logits = model.predict(eval_set.features)
        return evaluate_unida(logits, eval_set.labels, eval_set.is_private, cfg.unknown_threshold).to_dict()

    model = run_adaptation(source_model, target.features, cfg, batch_loss, record, epoch_eval, stage="adapt_unida")
    return UniDAResult(model, record, sizes)

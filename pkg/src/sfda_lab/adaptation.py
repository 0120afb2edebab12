"""Shared machinery for the target-adaptation stages.

Every adapter clones the source model, freezes the classifier, and runs SGD
on the feature extractor over shuffled target batches. What differs is the
per-batch loss, supplied as a callback.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .diffcore import Tensor
from .model import SFDAModel, freeze_classifier
from .optim import SGD
from .records import RunRecord
from .sampler import shuffled_batches
from .source_trainer import TrainingDivergedError

# (batch indices, logits, global step, total steps) -> (loss, logged terms)
BatchLoss = Callable[[np.ndarray, Tensor, int, int], "tuple[Tensor, dict]"]
EpochEval = Callable[[SFDAModel], dict]


@dataclass
class AdaptConfig:
    epochs: int = 1
    batch_size: int = 64
    lr_trunk: float = 1e-3
    lr_head: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-3
    bn_update_during_adapt: bool = True
    seed: int = 0

    def validate(self, section: str = "adapt") -> list[str]:
        errors = []
        for name in ("epochs", "batch_size", "lr_trunk", "lr_head"):
            if getattr(self, name) <= 0:
                errors.append(f"{section}.{name} must be positive")
        return errors

    def to_dict(self) -> dict:
        return asdict(self)


def run_adaptation(
    source_model: SFDAModel,
    features: np.ndarray,
    cfg: AdaptConfig,
    batch_loss: BatchLoss,
    record: RunRecord,
    epoch_eval: EpochEval | None = None,
    stage: str = "adapt",
) -> SFDAModel:
    """Optimize g of a copy of ``source_model`` with ``batch_loss``; h stays frozen."""
    t0 = time.perf_counter()
    model = source_model.clone()
    freeze_classifier(model)
    opt = SGD(model.trainable_parameters(), {"trunk": cfg.lr_trunk, "head": cfg.lr_head}, cfg.momentum,
              cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 2])
    n = len(features)
    per_epoch = len(list(shuffled_batches(n, cfg.batch_size, np.random.default_rng(0))))
    total = cfg.epochs * per_epoch
    mode = "train" if cfg.bn_update_during_adapt else "eval"
    step = 0
    for epoch in range(cfg.epochs):
        sums: dict[str, float] = {}
        n_steps = 0
        for idx in shuffled_batches(n, cfg.batch_size, rng):
            lrs = opt.set_progress(step / total)
            _, logits = model.forward(features[idx], mode)
            loss, terms = batch_loss(idx, logits, step, total)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(f"non-finite {stage} loss at step {step} (epoch {epoch})")
            model.zero_grad()
            loss.backward()
            opt.step()
            record.log_step(step=step, epoch=epoch, loss_total=value, lr_trunk=lrs["trunk"], lr_head=lrs["head"],
                            **terms)
            sums["loss_total"] = sums.get("loss_total", 0.0) + value
            for k, v in terms.items():
                # loss terms are averaged per epoch, partition counts summed
                if k.startswith(("loss", "n_")):
                    sums[k] = sums.get(k, 0) + v
            n_steps += 1
            step += 1
        row = {"stage": stage, "epoch": epoch}
        row.update({k: (v / n_steps if k.startswith("loss") else v) for k, v in sums.items()})
        if epoch_eval is not None:
            row.update(epoch_eval(model))
        record.log_epoch(**row)
    for p in model.h.parameters():
        p.zero_grad()
    record.wall_clock_s = time.perf_counter() - t0
    return model

"""Stage 1: supervised source training.

The objective is label-smoothed CE plus ``lambda_ema`` times CE against the
EMA model's predictions, optimized with SGD over class-balanced batches.
Returns both the last-epoch model and the best model by held-out source
accuracy.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import losses
from .data import Dataset
from .model import EmaModel, ModelConfig, SFDAModel
from .optim import SGD, lambda_ema, lr_at
from .records import RunRecord
from .sampler import class_weights, weighted_batches

log = logging.getLogger(__name__)

__all__ = ["SourceConfig", "SourceResult", "TrainingDivergedError", "lambda_ema", "lr_at", "train_source"]


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class SourceConfig:
    epochs: int = 10
    batch_size: int = 64
    lr_trunk: float = 1e-3
    lr_head: float = 1e-2
    alpha_smooth: float = 0.1
    ema_coeff: float = 0.95
    lambda_switch_fraction: float = 0.4
    momentum: float = 0.9
    weight_decay: float = 1e-3
    val_fraction: float = 0.1
    feature_dim: int = 256
    hidden: tuple[int, ...] = (64, 64)
    resample: bool = True
    seed: int = 0

    def validate(self) -> list[str]:
        errors = []
        for name in ("epochs", "batch_size", "lr_trunk", "lr_head", "feature_dim"):
            if getattr(self, name) <= 0:
                errors.append(f"source.{name} must be positive")
        if not 0.0 <= self.alpha_smooth < 1.0:
            errors.append("source.alpha_smooth must lie in [0, 1)")
        if not 0.0 < self.ema_coeff < 1.0:
            errors.append("source.ema_coeff must lie in (0, 1)")
        if not 0.0 <= self.lambda_switch_fraction <= 1.0:
            errors.append("source.lambda_switch_fraction must lie in [0, 1]")
        if not 0.0 <= self.val_fraction < 1.0:
            errors.append("source.val_fraction must lie in [0, 1)")
        return errors

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class SourceResult:
    last: SFDAModel
    best: SFDAModel
    record: RunRecord
    best_epoch: int
    val_idx: np.ndarray = field(repr=False, default=None)


def split_validation(n: int, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_val = int(round(fraction * n))
    if fraction > 0 and n_val == 0 and n > 1:
        n_val = 1
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def accuracy(model: SFDAModel, x: np.ndarray, y: np.ndarray) -> float:
    if len(x) == 0:
        return math.nan
    _, logits = model.predict(x)
    return float((np.argmax(logits, axis=1) == y).mean())


def train_source(
    dataset: Dataset,
    cfg: SourceConfig,
    num_classes: int | None = None,
    keep_logits: bool = False,
) -> SourceResult:
    if dataset.labels is None or len(dataset) == 0:
        raise ValueError("source training needs a nonempty labeled dataset")
    k = num_classes or dataset.meta.get("num_classes") or int(dataset.labels.max()) + 1
    if dataset.labels.max() >= k:
        raise ValueError(f"labels exceed the class count {k}")
    t0 = time.perf_counter()
    rng = np.random.default_rng([cfg.seed, 1])
    train_idx, val_idx = split_validation(len(dataset), cfg.val_fraction, rng)
    x_tr, y_tr = dataset.features[train_idx], dataset.labels[train_idx]
    x_val, y_val = dataset.features[val_idx], dataset.labels[val_idx]

    model = SFDAModel(ModelConfig(dataset.input_dim, k, cfg.feature_dim, tuple(cfg.hidden)), seed=cfg.seed)
    opt = SGD(model.parameters(), {"trunk": cfg.lr_trunk, "head": cfg.lr_head}, cfg.momentum, cfg.weight_decay)
    weights = class_weights(y_tr, k)
    if not cfg.resample:
        weights = type(weights)(np.where(weights.counts > 0, 1.0, 0.0), weights.counts)
    steps_per_epoch = math.ceil(len(train_idx) / cfg.batch_size)
    total_iters = cfg.epochs * steps_per_epoch
    record = RunRecord(f"source-seed{cfg.seed}", cfg.seed, {"source": cfg.to_dict(), "num_classes": k})
    ema: EmaModel | None = None
    best, best_acc, best_epoch = model.clone(), -1.0, -1
    it = 0
    for epoch in range(cfg.epochs):
        sums = {"loss_ls": 0.0, "loss_ema": 0.0, "loss_total": 0.0}
        n_steps = 0
        for idx in weighted_batches(y_tr, weights, cfg.batch_size, rng):
            lrs = opt.set_progress(it / total_iters)
            xb, yb = x_tr[idx], y_tr[idx]
            _, logits = model.forward(xb, "train")
            loss_ls = losses.smoothed_ce(logits, yb, cfg.alpha_smooth)
            lam = lambda_ema(it, total_iters, cfg.lambda_switch_fraction)
            ema_logits = None
            loss_ema_val = None
            loss = loss_ls
            if ema is not None:
                _, ema_out = ema.shadow.forward(xb, "eval")
                ema_logits = ema_out.data
                loss_ema = losses.ema_consistency_ce(logits, ema_logits)
                loss_ema_val = loss_ema.item()
                if lam > 0:
                    loss = loss_ls + loss_ema * lam
            total = loss.item()
            if not math.isfinite(total):
                raise TrainingDivergedError(f"non-finite source loss at iteration {it} (epoch {epoch})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            row = record.log_step(
                iter=it, epoch=epoch, lambda_ema=lam, loss_ls=loss_ls.item(), loss_ema=loss_ema_val,
                loss_total=total, lr_trunk=lrs["trunk"], lr_head=lrs["head"],
            )
            if keep_logits:
                row["logits"] = logits.data.copy()
                row["ema_logits"] = ema_logits
                row["labels"] = yb.copy()
            sums["loss_ls"] += row["loss_ls"]
            sums["loss_ema"] += loss_ema_val or 0.0
            sums["loss_total"] += total
            n_steps += 1
            it += 1
        if ema is None:
            ema = EmaModel.from_model(model, cfg.ema_coeff)
        else:
            ema.update(model)
        val_acc = accuracy(model, x_val, y_val)
        train_acc = accuracy(model, x_tr, y_tr)
        score = val_acc if not math.isnan(val_acc) else train_acc
        if score > best_acc:
            best, best_acc, best_epoch = model.clone(), score, epoch
        record.log_epoch(
            stage="source", epoch=epoch, **{k_: v / n_steps for k_, v in sums.items()},
            lr_trunk=lr_at(cfg.lr_trunk, min(it / total_iters, 1.0)), lr_head=lr_at(cfg.lr_head, min(it / total_iters, 1.0)),
            train_acc=train_acc, val_acc=val_acc,
        )
        log.info("source epoch %d: loss %.4f val_acc %.4f", epoch, sums["loss_total"] / n_steps, val_acc)
    record.wall_clock_s = time.perf_counter() - t0
    return SourceResult(model, best, record, best_epoch, val_idx)

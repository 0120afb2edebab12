"""Finite-difference verification of every training objective on a toy model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses
from .adapt_imnet import centroid_pseudo_labels
from .adapt_places import top2_from_probs
from .diffcore import GradCheckReport, Tensor, gradient_check, softmax_np
from .model import ModelConfig, SFDAModel

TOY_INPUT_DIM = 3
TOY_FEATURE_DIM = 8
TOY_CLASSES = 5
TOY_BATCH = 4


@dataclass
class ToyProblem:
    model: SFDAModel
    x: np.ndarray
    y: np.ndarray
    ema_logits: np.ndarray

    def logits(self) -> Tensor:
        # train-mode batch statistics, running stats left alone so repeated calls agree
        return self.model.forward(self.x, "train", update_stats=False)[1]


def toy_problem(seed: int = 0) -> ToyProblem:
    rng = np.random.default_rng([seed, 7])
    model = SFDAModel(ModelConfig(TOY_INPUT_DIM, TOY_CLASSES, TOY_FEATURE_DIM, (6,)), seed=seed)
    # nontrivial BN affine parameters so their gradients are exercised
    model.g.bn.gamma.data[...] = rng.uniform(0.5, 1.5, TOY_FEATURE_DIM)
    model.g.bn.beta.data[...] = rng.normal(0, 0.3, TOY_FEATURE_DIM)
    model.h.linear.bias.data[...] = rng.normal(0, 0.3, TOY_CLASSES)
    x = rng.normal(size=(TOY_BATCH, TOY_INPUT_DIM))
    y = rng.integers(0, TOY_CLASSES, TOY_BATCH)
    ema_logits = rng.normal(size=(TOY_BATCH, TOY_CLASSES))
    return ToyProblem(model, x, y, ema_logits)


def loss_builders(p: ToyProblem) -> dict[str, Callable[[], Tensor]]:
    """One closure per objective; label choices are frozen at the check point."""
    base = p.logits().data
    argmax = np.argmax(base, axis=1)
    top2 = top2_from_probs(softmax_np(base))
    cent_labels, _ = centroid_pseudo_labels(_eval_ready(p), p.x)
    known, unknown = np.array([0, 1]), np.array([2, 3])
    return {
        "smoothed_ce": lambda: losses.smoothed_ce(p.logits(), p.y, 0.1),
        "ema_consistency_ce": lambda: losses.ema_consistency_ce(p.logits(), p.ema_logits),
        "source_total": lambda: losses.smoothed_ce(p.logits(), p.y, 0.1) + losses.ema_consistency_ce(p.logits(), p.ema_logits) * 1.0,
        "pseudo_ce": lambda: losses.pseudo_ce(p.logits(), argmax),
        "entropy_max": lambda: losses.entropy_max_loss(p.logits()),
        "unida_total": lambda: losses.unida_loss(p.logits(), known, unknown, argmax[known], 0.3)[0],
        "double_pseudo_ce": lambda: losses.double_pseudo_ce(p.logits(), top2.y1, top2.y2, 0.3, 0.1),
        "centroid_pseudo_ce": lambda: losses.pseudo_ce(p.logits(), cent_labels) * 0.3,
    }


def _eval_ready(p: ToyProblem) -> SFDAModel:
    m = p.model.clone()
    m.forward(p.x, "train")  # populate running stats so eval-mode features are meaningful
    return m


def run_all(seed: int = 0, step: float = 1e-5, tol: float = 1e-5) -> dict[str, GradCheckReport]:
    reports = {}
    for name in loss_builders(toy_problem(seed)):
        p = toy_problem(seed)
        f = loss_builders(p)[name]
        reports[name] = gradient_check(f, p.model.parameters(), step, tol)
    return reports

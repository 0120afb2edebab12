"""SGD with momentum/weight decay and the training schedules."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .diffcore import Parameter


def lr_at(eta0: float, p: float) -> float:
    """eta0 / (1 + 10 p), with ``p`` the training progress in [0, 1]."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {p}")
    return eta0 / (1.0 + 10.0 * p)


def lambda_ema(iteration: int, total_iters: int, switch_fraction: float = 0.4) -> float:
    """0 for the first ``switch_fraction`` of iterations, 1 afterwards."""
    return 0.0 if iteration < switch_fraction * total_iters else 1.0


class SGD:
    """Heavy-ball SGD, weight decay folded into the gradient.

    buf <- momentum * buf + (grad + wd * w);  w <- w - lr * buf
    """

    def __init__(self, params: Iterable[Parameter], base_lrs: dict[str, float], momentum: float = 0.9,
                 weight_decay: float = 1e-3):
        self.params = list(params)
        self.base_lrs = dict(base_lrs)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._bufs = [np.zeros_like(p.data) for p in self.params]
        self.current_lrs = dict(base_lrs)

    def set_progress(self, p: float) -> dict[str, float]:
        self.current_lrs = {g: lr_at(eta0, p) for g, eta0 in self.base_lrs.items()}
        return self.current_lrs

    def step(self) -> None:
        for p, buf in zip(self.params, self._bufs):
            d = p.grad + self.weight_decay * p.data
            buf *= self.momentum
            buf += d
            p.data -= self.current_lrs[p.group] * buf

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

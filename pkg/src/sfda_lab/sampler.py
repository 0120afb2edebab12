"""Class-balanced re-sampling and plain shuffled batching.

Randomness comes from numpy's ``Generator`` on the PCG64 bit generator
(``numpy.random.default_rng(seed)``), so index streams are reproducible
from the run seed alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np


@dataclass(frozen=True)
class ClassWeights:
    weights: np.ndarray
    counts: np.ndarray


def class_weights(labels, num_classes: int) -> ClassWeights:
    """W_c = (total count) / N_c; empty classes get weight 0."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=num_classes)[:num_classes]
    total = counts.sum()
    weights = np.zeros(num_classes)
    nz = counts > 0
    weights[nz] = total / counts[nz]
    return ClassWeights(weights, counts)


def weighted_batches(
    labels,
    weights: ClassWeights,
    batch_size: int,
    rng: np.random.Generator | int,
) -> Iterator[np.ndarray]:
    """Yield ``ceil(n / batch_size)`` batches drawn with replacement.

    Sample ``i`` is drawn with probability proportional to
    ``weights[labels[i]]``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if n == 0:
        raise ValueError("cannot sample from an empty dataset")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    w = weights.weights[labels]
    p = w / w.sum()
    for _ in range(math.ceil(n / batch_size)):
        yield rng.choice(n, size=batch_size, replace=True, p=p)


def shuffled_batches(n: int, batch_size: int, rng: np.random.Generator | int) -> Iterator[np.ndarray]:
    """One pass over a random permutation of ``range(n)``.

    A trailing batch of a single sample is folded into the previous one so
    every batch supports train-mode batch statistics.
    """
    if n == 0:
        raise ValueError("cannot batch an empty dataset")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    order = rng.permutation(n)
    bounds = list(range(0, n, batch_size)) + [n]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] == 1:
        del bounds[-2]
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        yield order[lo:hi]

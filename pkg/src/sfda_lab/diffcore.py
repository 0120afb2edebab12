"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure accumulating gradients into them. The graph is rebuilt on every
forward pass and :meth:`Tensor.backward` walks it in reverse topological
order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateBatchError(ValueError):
    """Batch statistics are undefined for the given batch."""


class GradientCheckError(RuntimeError):
    """The function under check produced a non-finite value."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item()

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires grad.

        Called without ``grad`` the tensor must be a scalar.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node._accumulate(g)
                continue
            for parent, pg in node._backward(g):
                if pg is None or not _tracks(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable leaf tagged with its learning-rate group (``trunk`` or ``head``)."""

    __slots__ = ("group",)

    def __init__(self, data, group: str = "head", name: str = ""):
        if group not in ("trunk", "head"):
            raise ValueError(f"unknown learning-rate group {group!r}")
        super().__init__(data, requires_grad=True, name=name)
        self.group = group


def _raise_item():
    raise ShapeError("item() needs a single-element tensor")


def _tracks(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.name = ""
    if any(_tracks(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from exc
    return _node(out, (a, b), lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc
    return _node(
        out,
        (a, b),
        lambda g: ((a, _unbroadcast(g * b.data, a.shape)), (b, _unbroadcast(g * a.data, b.shape))),
    )


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: ((a, -g),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul needs [m,k]x[k,n], got {a.shape} x {b.shape}")
    return _node(a.data @ b.data, (a, b), lambda g: ((a, g @ b.data.T), (b, a.data.T @ g)))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.maximum(a.data, 0.0), (a,), lambda g: ((a, g * mask),))


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a 0-d tensor."""
    return _node(np.array(a.data.sum()), (a,), lambda g: ((a, np.broadcast_to(g, a.shape).copy()),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _node(
        np.array(a.data.sum() / n), (a,), lambda g: ((a, np.full(a.shape, float(g) / n)),)
    )


def row_sum(a: Tensor) -> Tensor:
    """Sum over the last axis of a [B, K] tensor, giving [B]."""
    return _node(a.data.sum(axis=1), (a,), lambda g: ((a, np.repeat(g[:, None], a.shape[1], axis=1)),))


def take_rows(a: Tensor, idx) -> Tensor:
    """Select rows ``idx`` of a 2-D tensor (gather along axis 0)."""
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return ((a, full),)

    return _node(a.data[idx], (a,), backward)


def pick(a: Tensor, cols) -> Tensor:
    """out[i] = a[i, cols[i]] for a [B, K] tensor."""
    cols = np.asarray(cols, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def backward(g):
        full = np.zeros_like(a.data)
        full[rows, cols] = g
        return ((a, full),)

    return _node(a.data[rows, cols], (a,), backward)


def log_softmax(z: Tensor) -> Tensor:
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)
    return _node(out, (z,), lambda g: ((z, g - probs * g.sum(axis=1, keepdims=True)),))


def softmax(z: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction."""
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    return _node(p, (z,), lambda g: ((z, p * (g - (g * p).sum(axis=1, keepdims=True))),))


def softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM

    @classmethod
    def fresh(cls, dim: int) -> RunningStats:
        return cls(np.zeros(dim), np.ones(dim))


def batchnorm_forward(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mode: str = "train",
    running: RunningStats | None = None,
    update_stats: bool = True,
    eps: float = BN_EPS,
) -> Tensor:
    """Batch normalization over axis 0.

    Train mode normalizes with the biased batch variance and, when
    ``update_stats`` is set, moves ``running`` toward the batch statistics
    (the running variance uses the unbiased estimate). Eval mode uses
    ``running`` as is.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"batchnorm expects [B, d], got {x.shape}")
    b = x.shape[0]
    if mode == "train":
        if b < 2:
            raise DegenerateBatchError(f"train-mode batchnorm needs B >= 2, got B={b}")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        if running is not None and update_stats:
            m = running.momentum
            running.mean = (1 - m) * running.mean + m * mu
            running.var = (1 - m) * running.var + m * var * b / (b - 1)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv_std
        out = gamma.data * xhat + beta.data

        def backward(g):
            dxhat = g * gamma.data
            dx = inv_std / b * (b * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            return ((x, dx), (gamma, (g * xhat).sum(axis=0)), (beta, g.sum(axis=0)))

    elif mode == "eval":
        if running is None:
            raise ValueError("eval-mode batchnorm needs running statistics")
        inv_std = 1.0 / np.sqrt(running.var + eps)
        xhat = (x.data - running.mean) * inv_std
        out = gamma.data * xhat + beta.data

        def backward(g):
            return ((x, g * gamma.data * inv_std), (gamma, (g * xhat).sum(axis=0)), (beta, g.sum(axis=0)))

    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return _node(out, (x, gamma, beta), backward)


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_param: list[float] = field(default_factory=list)
    n_entries: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise.

    The floor keeps entries whose true gradient is zero from dividing
    rounding noise by zero.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def gradient_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    step: float = 1e-5,
    tol: float = 1e-5,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f()`` with central differences.

    ``f`` must rebuild its graph from the current ``params`` values on each
    call and must not depend on hidden mutable state.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = f()
    if not np.all(np.isfinite(out.data)):
        raise GradientCheckError(f"loss is not finite at the check point: {out.data}")
    out.backward()
    per_param = []
    worst = 0.0
    count = 0
    for p in params:
        analytic = p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f().item()
            flat[i] = orig - step
            down = f().item()
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise GradientCheckError(f"non-finite loss while perturbing entry {i} of {p.name or 'param'}")
            nflat[i] = (up - down) / (2 * step)
        err = float(relative_error(analytic, numeric).max()) if analytic.size else 0.0
        per_param.append(err)
        worst = max(worst, err)
        count += flat.size
    for p in params:
        p.zero_grad()
    return GradCheckReport(worst, tol, per_param, count)

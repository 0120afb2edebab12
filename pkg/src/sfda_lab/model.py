"""Feature extractor g, linear classifier h, the EMA shadow and checkpoint I/O.

``g`` is an MLP trunk (stand-in for a pretrained backbone) followed by a
Linear bottleneck to ``d`` dims and a BatchNorm layer; ``h`` maps the
``d``-dim features to ``K`` logits.
"""
from __future__ import annotations

import base64
import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import Parameter, RunningStats, Tensor

CHECKPOINT_FORMAT = "sfda-lab-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class EmaShapeError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    input_dim: int
    num_classes: int
    feature_dim: int = 256
    hidden: tuple[int, ...] = (64, 64)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "feature_dim": self.feature_dim,
            "hidden": list(self.hidden),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(int(d["input_dim"]), int(d["num_classes"]), int(d["feature_dim"]), tuple(int(h) for h in d["hidden"]))


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, group: str, name: str):
        self.weight = Parameter(_uniform(rng, in_dim, (in_dim, out_dim)), group, f"{name}.weight")
        self.bias = Parameter(np.zeros(out_dim), group, f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class BatchNorm:
    def __init__(self, dim: int, name: str):
        self.gamma = Parameter(np.ones(dim), "head", f"{name}.gamma")
        self.beta = Parameter(np.zeros(dim), "head", f"{name}.beta")
        self.running = RunningStats.fresh(dim)

    def __call__(self, x: Tensor, mode: str, update_stats: bool = True) -> Tensor:
        return dc.batchnorm_forward(x, self.gamma, self.beta, mode, self.running, update_stats)

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]


class FeatureExtractor:
    """g: trunk -> bottleneck Linear -> BatchNorm."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        widths = (cfg.input_dim, *cfg.hidden)
        self.trunk = [
            Linear(widths[i], widths[i + 1], rng, "trunk", f"g.trunk.{i}") for i in range(len(cfg.hidden))
        ]
        self.bottleneck = Linear(widths[-1], cfg.feature_dim, rng, "head", "g.bottleneck")
        self.bn = BatchNorm(cfg.feature_dim, "g.bn")

    def __call__(self, x: Tensor, mode: str, update_stats: bool = True) -> Tensor:
        for layer in self.trunk:
            x = dc.relu(layer(x))
        return self.bn(self.bottleneck(x), mode, update_stats)

    def parameters(self) -> list[Parameter]:
        params = [p for layer in self.trunk for p in layer.parameters()]
        return params + self.bottleneck.parameters() + self.bn.parameters()


class Classifier:
    """h: a single Linear layer with bias."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.linear = Linear(cfg.feature_dim, cfg.num_classes, rng, "head", "h.linear")
        self.frozen = False

    def __call__(self, feats: Tensor) -> Tensor:
        return self.linear(feats)

    def parameters(self) -> list[Parameter]:
        return self.linear.parameters()


class SFDAModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.g = FeatureExtractor(cfg, rng)
        self.h = Classifier(cfg, rng)

    @property
    def num_classes(self) -> int:
        return self.cfg.num_classes

    def forward(self, x, mode: str = "eval", update_stats: bool = True) -> tuple[Tensor, Tensor]:
        """Return ``(features, logits)``; features are the BatchNorm output."""
        x = dc.as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.cfg.input_dim:
            raise dc.ShapeError(f"expected input [B, {self.cfg.input_dim}], got {x.shape}")
        feats = self.g(x, mode, update_stats)
        return feats, self.h(feats)

    __call__ = forward

    def predict(self, x: np.ndarray, batch_size: int = 1024) -> tuple[np.ndarray, np.ndarray]:
        """Eval-mode features and logits as plain arrays."""
        fs, ls = [], []
        for start in range(0, len(x), batch_size):
            f, l = self.forward(x[start:start + batch_size], "eval")
            fs.append(f.data)
            ls.append(l.data)
        return np.concatenate(fs), np.concatenate(ls)

    def parameters(self) -> list[Parameter]:
        return self.g.parameters() + self.h.parameters()

    def trainable_parameters(self) -> list[Parameter]:
        if self.h.frozen:
            return self.g.parameters()
        return self.parameters()

    def named_arrays(self) -> dict[str, np.ndarray]:
        arrays = {p.name: p.data for p in self.parameters()}
        arrays["g.bn.running_mean"] = self.g.bn.running.mean
        arrays["g.bn.running_var"] = self.g.bn.running.var
        return arrays

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if arrays[p.name].shape != p.data.shape:
                raise CheckpointError(f"shape mismatch for {p.name}: {arrays[p.name].shape} vs {p.data.shape}")
            p.data[...] = arrays[p.name]
        self.g.bn.running.mean = np.array(arrays["g.bn.running_mean"], dtype=np.float64)
        self.g.bn.running.var = np.array(arrays["g.bn.running_var"], dtype=np.float64)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def clone(self) -> SFDAModel:
        return copy.deepcopy(self)


def freeze_classifier(model: SFDAModel) -> None:
    """Exclude h from optimization; its gradients are discarded."""
    model.h.frozen = True


@dataclass
class EmaModel:
    """Shadow copy updated as ``shadow <- c * shadow + (1 - c) * live``."""

    shadow: SFDAModel
    coefficient: float = 0.95
    updates: int = field(default=0)

    @classmethod
    def from_model(cls, live: SFDAModel, coefficient: float = 0.95) -> EmaModel:
        return cls(live.clone(), coefficient)

    def update(self, live: SFDAModel) -> None:
        ema_update(self, live)


def ema_update(ema: EmaModel, live: SFDAModel) -> None:
    c = ema.coefficient
    shadow_params = ema.shadow.parameters()
    live_params = live.parameters()
    if len(shadow_params) != len(live_params):
        raise EmaShapeError("EMA and live model have different parameter lists")
    for s, p in zip(shadow_params, live_params):
        if s.data.shape != p.data.shape:
            raise EmaShapeError(f"EMA shape drift on {p.name}: {s.data.shape} vs {p.data.shape}")
        s.data[...] = c * s.data + (1 - c) * p.data
    # running statistics are copied, not averaged
    ema.shadow.g.bn.running.mean = live.g.bn.running.mean.copy()
    ema.shadow.g.bn.running.var = live.g.bn.running.var.copy()
    ema.updates += 1


def _encode(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d: dict) -> np.ndarray:
    if d.get("dtype") != "<f8":
        raise CheckpointError(f"unsupported dtype {d.get('dtype')!r}")
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def checkpoint_dict(model: SFDAModel, meta: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": model.cfg.to_dict(),
        "meta": meta or {},
        "arrays": {k: _encode(v) for k, v in sorted(model.named_arrays().items())},
    }


def save_checkpoint(model: SFDAModel, path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_dict(model, meta), indent=1, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> tuple[SFDAModel, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a checkpoint file ({exc})") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown format {doc.get('format')!r}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {doc.get('version')!r}")
    model = SFDAModel(ModelConfig.from_dict(doc["model"]))
    model.load_arrays({k: _decode(v) for k, v in doc["arrays"].items()})
    return model, doc.get("meta", {})

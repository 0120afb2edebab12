"""Lab configuration: one YAML file with a section per stage.

Only keys present in the file override the defaults; unknown keys and bad
values are collected and reported together.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .adapt_imnet import ImNetConfig
from .adapt_places import PlacesConfig
from .adapt_unida import UniDAConfig
from .data import DomainSpec
from .source_trainer import SourceConfig

TRACKS = ("unida", "places", "imnet")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


def default_domains() -> dict[str, DomainSpec]:
    return {
        "unida": DomainSpec(n_shared=6, n_source_private=4, n_target_private=4),
        "places": DomainSpec(n_shared=8, noise_sigma=0.9),
        "imnet": DomainSpec(n_shared=10),
        "noshift": DomainSpec(n_shared=10, samples_per_class=50, shift=0.0, rotation=0.0),
    }


@dataclass
class LabConfig:
    seed: int = 0
    data: dict[str, DomainSpec] = field(default_factory=default_domains)
    source: SourceConfig = field(default_factory=SourceConfig)
    unida: UniDAConfig = field(default_factory=UniDAConfig)
    places: PlacesConfig = field(default_factory=PlacesConfig)
    imnet: ImNetConfig = field(default_factory=ImNetConfig)

    def with_seed(self, seed: int) -> LabConfig:
        """Propagate one run seed into every section."""
        return LabConfig(
            seed=seed,
            data={k: replace(v, seed=seed) for k, v in self.data.items()},
            source=replace(self.source, seed=seed),
            unida=replace(self.unida, seed=seed),
            places=replace(self.places, seed=seed),
            imnet=replace(self.imnet, seed=seed),
        )

    def adapt_config(self, track: str):
        return {"unida": self.unida, "places": self.places, "imnet": self.imnet}[track]

    def snapshot(self) -> dict:
        def plain(obj):
            out = {}
            for f in fields(obj):
                v = getattr(obj, f.name)
                out[f.name] = list(v) if isinstance(v, tuple) else v
            return out

        return {
            "seed": self.seed,
            "data": {k: plain(v) for k, v in self.data.items()},
            "source": plain(self.source),
            "unida": plain(self.unida),
            "places": plain(self.places),
            "imnet": plain(self.imnet),
        }


def _apply(obj, values, section: str, errors: list[str]):
    if values is None:
        return obj
    if not isinstance(values, dict):
        errors.append(f"{section}: expected a mapping")
        return obj
    known = {f.name: f for f in fields(obj)}
    updates = {}
    for key, val in values.items():
        if key == "seed":
            errors.append(f"{section}.seed: set the top-level seed instead")
            continue
        if key not in known:
            errors.append(f"{section}.{key}: unknown key")
            continue
        current = getattr(obj, key)
        try:
            if isinstance(current, bool):
                if not isinstance(val, bool):
                    raise TypeError
                updates[key] = val
            elif isinstance(current, int):
                if isinstance(val, bool) or not isinstance(val, int):
                    raise TypeError
                updates[key] = val
            elif isinstance(current, float):
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    raise TypeError
                updates[key] = float(val)
            elif isinstance(current, tuple):
                updates[key] = tuple(int(v) for v in val)
            else:
                updates[key] = val
        except (TypeError, ValueError):
            errors.append(f"{section}.{key}: expected {type(current).__name__}, got {val!r}")
    return replace(obj, **updates)


def from_mapping(doc: dict | None) -> LabConfig:
    doc = doc or {}
    errors: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError(["config root must be a mapping"])
    cfg = LabConfig()
    allowed = {"seed", "data", "source", *TRACKS}
    for key in doc:
        if key not in allowed:
            errors.append(f"{key}: unknown section")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.append(f"seed: expected a nonnegative integer, got {seed!r}")
        seed = 0
    data = dict(cfg.data)
    for name, values in (doc.get("data") or {}).items():
        if name not in data:
            errors.append(f"data.{name}: unknown dataset (expected one of {sorted(data)})")
            continue
        data[name] = _apply(data[name], values, f"data.{name}", errors)
    cfg = LabConfig(
        seed=cfg.seed,
        data=data,
        source=_apply(cfg.source, doc.get("source"), "source", errors),
        unida=_apply(cfg.unida, doc.get("unida"), "unida", errors),
        places=_apply(cfg.places, doc.get("places"), "places", errors),
        imnet=_apply(cfg.imnet, doc.get("imnet"), "imnet", errors),
    )
    for name, spec in cfg.data.items():
        errors.extend(f"data.{name}: {e}" for e in spec.validate())
    errors.extend(cfg.source.validate())
    for track in TRACKS:
        errors.extend(cfg.adapt_config(track).validate(track))
    if errors:
        raise ConfigError(errors)
    return cfg.with_seed(seed)


def load_config(path: str | Path | None) -> LabConfig:
    if path is None:
        return LabConfig()
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror}"]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: invalid YAML ({exc})"]) from exc
    return from_mapping(doc)


DEFAULT_CONFIG_YAML = """\
# sfda-lab configuration. Every key is optional; omitted keys keep these defaults.
seed: 0

data:
  unida:            # 6 shared, 4 source-private, 4 target-private classes
    n_shared: 6
    n_source_private: 4
    n_target_private: 4
    samples_per_class: 60
    input_dim: 2
    shift: 1.5      # translation between domain means
    rotation: 0.3   # radians, applied to target means
    noise_sigma: 0.35
  places:           # heavily overlapping classes, noisy top-1 pseudo labels
    n_shared: 8
    noise_sigma: 0.9
  imnet:
    n_shared: 10
  noshift:          # control: identical source and target distributions
    n_shared: 10
    samples_per_class: 50
    shift: 0.0
    rotation: 0.0

source:
  epochs: 10                    # source training epochs
  batch_size: 64
  lr_trunk: 0.001               # initial LR for the trunk
  lr_head: 0.01                 # initial LR for bottleneck, BN and classifier
  alpha_smooth: 0.1             # label-smoothing weight
  ema_coeff: 0.95               # EMA smoothing coefficient, one update per epoch
  lambda_switch_fraction: 0.4   # EMA-consistency weight is 0 before this fraction of iterations, 1 after
  momentum: 0.9
  weight_decay: 0.001
  val_fraction: 0.1             # held-out source split for picking the best checkpoint
  feature_dim: 256
  hidden: [64, 64]
  resample: true                # class-balanced re-sampling

unida:
  epochs: 5
  batch_size: 64
  alpha: 0.3                    # weight of the entropy-maximization term
  unknown_threshold: 0.5        # normalized entropy at or above this => "unknown" at test time
  bn_update_during_adapt: true

places:
  epochs: 1
  batch_size: 64
  beta: 0.3                     # weight of the top-1 pseudo-label CE
  gamma: 0.1                    # weight of the top-2 pseudo-label CE
  bn_update_during_adapt: true

imnet:
  epochs: 1
  batch_size: 64
  eta: 0.3                      # weight of the centroid pseudo-label CE
  centroid_rounds: 1
  bn_update_during_adapt: true
"""

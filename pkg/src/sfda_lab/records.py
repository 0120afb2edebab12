"""Run records: config snapshot, metric rows and the files a run wrote."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def write_jsonl(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(_clean(row), sort_keys=True) + "\n")
    return path


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


@dataclass
class RunRecord:
    run_id: str
    seed: int
    config: dict = field(default_factory=dict)
    epochs: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    artifacts: dict[str, str] = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def log_epoch(self, **row) -> dict:
        self.epochs.append(row)
        return row

    def log_step(self, **row) -> dict:
        self.steps.append(row)
        return row

    def manifest(self) -> dict:
        return _clean({
            "run_id": self.run_id,
            "seed": self.seed,
            "config": self.config,
            "artifacts": dict(sorted(self.artifacts.items())),
            "wall_clock_s": self.wall_clock_s,
            "n_epoch_rows": len(self.epochs),
            "n_step_rows": len(self.steps),
        })

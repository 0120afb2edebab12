"""Stage orchestration with on-disk outputs, and the full three-track study."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .adapt_imnet import adapt_imnet
from .adapt_places import adapt_places
from .adapt_unida import adapt_unida
from .config import TRACKS, LabConfig
from .data import Dataset, generate, load_csv, save_csv
from .metrics import closed_set_outcome, evaluate_unida
from .model import SFDAModel, save_checkpoint
from .records import RunRecord, write_jsonl
from .source_trainer import accuracy, train_source

ADAPTERS = {"unida": adapt_unida, "places": adapt_places, "imnet": adapt_imnet}
DATA_FILES = ("source.csv", "target_train.csv", "target_eval.csv")


@dataclass
class Outputs:
    """Tracks every file a command writes, relative to ``root``."""

    root: Path
    files: dict[str, str] = field(default_factory=dict)

    def path(self, key: str, rel: str) -> Path:
        self.files[key] = rel
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_manifest(self, record: RunRecord, name: str = "manifest.json") -> Path:
        record.artifacts.update(self.files)
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(record.manifest(), indent=2, sort_keys=True) + "\n")
        return p


def write_datasets(spec_data: tuple[Dataset, Dataset, Dataset], out: Outputs, prefix: str = "") -> None:
    for ds, fname in zip(spec_data, DATA_FILES):
        save_csv(ds, out.path(f"{prefix}{fname}", f"{prefix}{fname}"))


def load_datasets(data_dir) -> tuple[Dataset, Dataset, Dataset]:
    d = Path(data_dir)
    source = load_csv(d / DATA_FILES[0], domain="source", require_labels=True)
    target_train = load_csv(d / DATA_FILES[1], domain="target").unlabeled()
    target_eval = load_csv(d / DATA_FILES[2], domain="target", require_labels=True)
    return source, target_train, target_eval


def evaluate_model(model: SFDAModel, eval_set: Dataset, track: str, unknown_threshold: float = 0.5) -> dict:
    _, logits = model.predict(eval_set.features)
    if track == "unida":
        if eval_set.is_private is None:
            raise ValueError("UniDA evaluation needs an is_private column")
        return evaluate_unida(logits, eval_set.labels, eval_set.is_private, unknown_threshold).to_dict()
    return closed_set_outcome(logits, eval_set.labels).to_dict()


def headline(track: str, metrics: dict) -> float:
    return metrics["h_score"] if track == "unida" else metrics["top3"]


def run_source_stage(cfg: LabConfig, source: Dataset, out: Outputs, prefix: str = ""):
    res = train_source(source, cfg.source, source.meta.get("num_classes"))
    meta = {"stage": "source", "seed": cfg.seed}
    save_checkpoint(res.last, out.path(f"{prefix}source_last", f"{prefix}source_last.ckpt.json"),
                    {**meta, "epoch": cfg.source.epochs - 1})
    save_checkpoint(res.best, out.path(f"{prefix}source_best", f"{prefix}source_best.ckpt.json"),
                    {**meta, "epoch": res.best_epoch})
    write_jsonl(res.record.epochs, out.path(f"{prefix}source_metrics", f"{prefix}source_metrics.jsonl"))
    write_jsonl(res.record.steps, out.path(f"{prefix}source_steps", f"{prefix}source_steps.jsonl"))
    return res


def run_adapt_stage(cfg: LabConfig, track: str, model: SFDAModel, target: Dataset, eval_set: Dataset | None,
                    out: Outputs, tag: str):
    res = ADAPTERS[track](model, target.unlabeled(), cfg.adapt_config(track), eval_set)
    save_checkpoint(res.model, out.path(f"{tag}_ckpt", f"{tag}.ckpt.json"), {"stage": f"adapt_{track}", "seed": cfg.seed})
    write_jsonl(res.record.epochs, out.path(f"{tag}_metrics", f"{tag}_metrics.jsonl"))
    write_jsonl(res.record.steps, out.path(f"{tag}_steps", f"{tag}_steps.jsonl"))
    return res


SUMMARY_FIELDS = ("track", "method", "metric", "value", "top1", "known_acc", "unknown_acc")


def reproduce_all(cfg: LabConfig, out_dir) -> dict:
    """Run all three tracks plus the no-shift control; write summary CSV/JSON and a manifest."""
    t0 = time.perf_counter()
    out = Outputs(Path(out_dir))
    record = RunRecord(f"reproduce-all-seed{cfg.seed}", cfg.seed, cfg.snapshot())
    rows = []
    for track in TRACKS:
        prefix = f"{track}/"
        source, target_train, target_eval = generate(cfg.data[track])
        write_datasets((source, target_train, target_eval), out, f"{prefix}data/")
        src = run_source_stage(cfg, source, out, prefix)
        thr = cfg.unida.unknown_threshold
        for ckpt_name, model in (("old", src.last), ("new", src.best)):
            before = evaluate_model(model, target_eval, track, thr)
            res = run_adapt_stage(cfg, track, model, target_train, target_eval, out, f"{track}/{ckpt_name}_adapt")
            after = evaluate_model(res.model, target_eval, track, thr)
            for stage, m in (("source", before), ("adapt", after)):
                rows.append(_summary_row(track, f"{ckpt_name} {stage}", m))
    # no-shift control: source-trained model on an identically distributed target
    source, target_train, target_eval = generate(cfg.data["noshift"])
    write_datasets((source, target_train, target_eval), out, "noshift/data/")
    src = run_source_stage(cfg, source, out, "noshift/")
    held_out = source.subset(src.val_idx)
    src_acc = accuracy(src.last, held_out.features, held_out.labels)
    tgt_acc = accuracy(src.last, target_eval.features, target_eval.labels)
    rows.append({"track": "noshift", "method": "source on source", "metric": "top1", "value": round(src_acc, 4),
                 "top1": round(src_acc, 4), "known_acc": None, "unknown_acc": None})
    rows.append({"track": "noshift", "method": "source on target", "metric": "top1", "value": round(tgt_acc, 4),
                 "top1": round(tgt_acc, 4), "known_acc": None, "unknown_acc": None})

    with out.path("summary_csv", "summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if r[k] is None else r[k] for k in SUMMARY_FIELDS})
    summary = {"seed": cfg.seed, "rows": rows}
    out.path("summary_json", "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    record.wall_clock_s = time.perf_counter() - t0
    out.write_manifest(record)
    return summary


def _summary_row(track: str, method: str, m: dict) -> dict:
    metric = "h_score" if track == "unida" else "top3"
    return {
        "track": track, "method": method, "metric": metric, "value": m[metric],
        "top1": m.get("top1"), "known_acc": m.get("known_acc") if track == "unida" else None,
        "unknown_acc": m.get("unknown_acc") if track == "unida" else None,
    }


def summary_lookup(summary: dict) -> dict[tuple[str, str], float]:
    return {(r["track"], r["method"]): r["value"] for r in summary["rows"]}


def adapted_beats_source(summary: dict, ckpt: str = "new") -> dict[str, bool]:
    v = summary_lookup(summary)
    return {t: v[(t, f"{ckpt} adapt")] >= v[(t, f"{ckpt} source")] for t in TRACKS}


def noshift_gap(summary: dict) -> float:
    v = summary_lookup(summary)
    return abs(v[("noshift", "source on source")] - v[("noshift", "source on target")])


__all__ = [
    "ADAPTERS", "Outputs", "adapted_beats_source", "evaluate_model", "headline", "load_datasets",
    "noshift_gap", "reproduce_all", "run_adapt_stage", "run_source_stage", "write_datasets",
]

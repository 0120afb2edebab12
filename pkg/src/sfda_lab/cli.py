"""Command-line entry point: ``sfda-lab <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import DEFAULT_CONFIG_YAML, TRACKS, ConfigError, LabConfig, load_config
from .data import DataError, generate, load_csv
from .gradcheck_suite import run_all
from .model import CheckpointError, load_checkpoint
from .records import RunRecord
from .study import (
    Outputs,
    evaluate_model,
    reproduce_all,
    run_adapt_stage,
    run_source_stage,
    write_datasets,
)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
GEN_TRACKS = (*TRACKS, "noshift")

log = logging.getLogger("sfda_lab")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML config file (defaults apply for missing keys)")
    p.add_argument("--seed", type=int, help="run seed; overrides the config")
    p.add_argument("--out-dir", type=Path, help="output directory (default: $SFDA_LAB_OUT or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfda-lab", description="Source-free domain adaptation lab")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="generate a synthetic task and write CSVs")
    _common(p)
    p.add_argument("--track", choices=GEN_TRACKS, required=True)

    p = sub.add_parser("train-source", help="train the source model (writes last and best checkpoints)")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data-dir", type=Path, help="directory holding source.csv")
    src.add_argument("--track", choices=GEN_TRACKS, help="generate the synthetic task in memory")

    p = sub.add_parser("adapt", help="adapt a source checkpoint to the target domain")
    p.add_argument("track", choices=TRACKS)
    _common(p)
    p.add_argument("--source-checkpoint", type=Path, required=True)
    p.add_argument("--data-dir", type=Path, required=True,
                   help="directory with target_train.csv (and optionally target_eval.csv)")

    p = sub.add_parser("evaluate", help="score a checkpoint on a labeled CSV")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--eval-csv", type=Path, required=True)
    p.add_argument("--track", choices=TRACKS, required=True)
    p.add_argument("--unknown-threshold", type=float, default=0.5)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-5)

    p = sub.add_parser("reproduce-all", help="run the full synthetic study and write the summary table")
    _common(p)

    p = sub.add_parser("default-config", help="print the default config file")
    return parser


def _resolve(args) -> tuple[LabConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(["--seed must be nonnegative"])
        cfg = cfg.with_seed(args.seed)
    out = args.out_dir or Path(os.environ.get("SFDA_LAB_OUT", "runs"))
    return cfg, out


def cmd_gen_data(args) -> int:
    cfg, out_dir = _resolve(args)
    out = Outputs(out_dir)
    data = generate(cfg.data[args.track])
    write_datasets(data, out)
    record = RunRecord(f"gen-data-{args.track}-seed{cfg.seed}", cfg.seed, {"data": cfg.snapshot()["data"][args.track]})
    out.write_manifest(record, "gen_data_manifest.json")
    print(f"wrote {', '.join(sorted(out.files.values()))} under {out_dir}")
    return EXIT_OK


def cmd_train_source(args) -> int:
    cfg, out_dir = _resolve(args)
    if args.data_dir:
        source = load_csv(args.data_dir / "source.csv", domain="source", require_labels=True)
    else:
        source = generate(cfg.data[args.track])[0]
    out = Outputs(out_dir)
    res = run_source_stage(cfg, source, out)
    res.record.config = {**cfg.snapshot(), "num_classes": res.record.config["num_classes"]}
    out.write_manifest(res.record, "source_manifest.json")
    last = res.record.epochs[-1]
    print(json.dumps({"best_epoch": res.best_epoch, "last_val_acc": last["val_acc"]}, sort_keys=True))
    return EXIT_OK


def cmd_adapt(args) -> int:
    cfg, out_dir = _resolve(args)
    model, _ = load_checkpoint(args.source_checkpoint)
    target = load_csv(args.data_dir / "target_train.csv", domain="target").unlabeled()
    eval_path = args.data_dir / "target_eval.csv"
    eval_set = load_csv(eval_path, domain="target", require_labels=True) if eval_path.exists() else None
    out = Outputs(out_dir)
    res = run_adapt_stage(cfg, args.track, model, target, eval_set, out, f"adapt_{args.track}")
    res.record.config = {**cfg.snapshot(), **res.record.config, "source_checkpoint": str(args.source_checkpoint)}
    out.write_manifest(res.record, f"adapt_{args.track}_manifest.json")
    if eval_set is not None:
        print(json.dumps(evaluate_model(res.model, eval_set, args.track, cfg.unida.unknown_threshold), sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    eval_set = load_csv(args.eval_csv, domain="target", require_labels=True)
    print(json.dumps(evaluate_model(model, eval_set, args.track, args.unknown_threshold), sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    reports = run_all(args.seed, tol=args.tol)
    width = max(len(k) for k in reports)
    for name, r in reports.items():
        print(f"{name:<{width}}  max_rel_error={r.max_rel_error:.3e}  {'ok' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in reports.values()) else EXIT_RUNTIME


def cmd_reproduce_all(args) -> int:
    cfg, out_dir = _resolve(args)
    summary = reproduce_all(cfg, out_dir)
    for r in summary["rows"]:
        print(f"{r['track']:<8} {r['method']:<18} {r['metric']:<8} {r['value']:.4f}")
    print(f"summary written to {out_dir / 'summary.csv'}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-source": cmd_train_source,
    "adapt": cmd_adapt,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "reproduce-all": cmd_reproduce_all,
    "default-config": lambda args: print(DEFAULT_CONFIG_YAML, end="") or EXIT_OK,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print("configuration errors:", file=sys.stderr)
        for e in exc.errors:
            print(f"  - {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

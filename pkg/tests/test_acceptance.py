"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are printed with capture disabled, so plain ``pytest -v`` shows them too.
"""
import json
import math
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from sfda_lab import losses
from sfda_lab.adapt_imnet import Centroids, compute_centroids, cosine_pseudo_labels
from sfda_lab.adapt_places import top2_from_probs
from sfda_lab.adapt_unida import partition_batch, schedule_for_zeta, thresholds_at
from sfda_lab.config import TRACKS, LabConfig
from sfda_lab.diffcore import Parameter, Tensor, softmax_np
from sfda_lab.gradcheck_suite import run_all
from sfda_lab.metrics import topk_accuracy
from sfda_lab.model import load_checkpoint
from sfda_lab.optim import lambda_ema, lr_at
from sfda_lab.sampler import class_weights, weighted_batches
from sfda_lab.study import noshift_gap, reproduce_all, summary_lookup

SEEDS = range(5)


def report(capsys, number, title, ok, detail=""):
    with capsys.disabled():
        print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip())
    assert ok, f"criterion {number} failed: {detail}"


# brute-force oracles, written with plain Python loops


def oracle_centroids(f, w):
    k, d = len(w[0]), len(f[0])
    out = []
    for c in range(k):
        mass = sum((Fraction(row[c]) for row in w), Fraction(0))
        acc = [sum((Fraction(w[i][c] * f[i][j]) for i in range(len(f))), Fraction(0)) for j in range(d)]
        out.append([float(a) / float(mass) for a in acc])
    return out


def oracle_cosine(f, cents):
    labels = []
    for row in f:
        sims = []
        for mu in cents:
            dot = sum(a * b for a, b in zip(row, mu))
            sims.append(dot / (math.sqrt(sum(a * a for a in row)) * math.sqrt(sum(b * b for b in mu))))
        labels.append(max(range(len(sims)), key=lambda j: (sims[j], -j)))
    return labels


def oracle_ranked(row):
    return sorted(range(len(row)), key=lambda j: (-row[j], j))


def oracle_partition(logits, tau_high, tau_low):
    out = ([], [], [])
    for i, row in enumerate(logits):
        m = max(row)
        e = [math.exp(v - m) for v in row]
        s = sum(e)
        h = -sum((v / s) * math.log(v / s) for v in e if v > 0) / math.log(len(row))
        out[0 if h <= tau_low else 1 if h >= tau_high else 2].append(i)
    return out


def test_criterion_1_gradients(capsys):
    t0 = time.perf_counter()
    reports = run_all(seed=0, step=1e-5, tol=1e-5)
    elapsed = time.perf_counter() - t0
    worst = max(r.max_rel_error for r in reports.values())
    ok = len(reports) == 8 and all(r.passed for r in reports.values()) and elapsed < 10
    report(capsys, 1, "gradient check", ok, f"losses={len(reports)} worst_rel_err={worst:.2e} time={elapsed:.2f}s")


def test_criterion_2_identities(capsys):
    checks = []
    for k in (2, 5, 17):
        z = Tensor(np.zeros((4, k)))
        y = np.arange(4) % k
        lnk = math.log(k)
        for alpha in (0.0, 0.1, 0.5, 0.99):
            checks.append(abs(losses.smoothed_ce(z, y, alpha).item() - lnk) <= 1e-9)
        checks.append(abs(losses.pseudo_ce(z, y).item() - lnk) <= 1e-9)
        checks.append(abs(losses.ema_consistency_ce(z, np.zeros((4, k))).item() - lnk) <= 1e-9)
        zp = Parameter(np.zeros((4, k)))
        ent = losses.entropy_max_loss(zp)
        checks.append(abs(ent.item() + lnk) <= 1e-9)
        ent.backward()
        checks.append(np.abs(zp.grad).max() <= 1e-10)
    report(capsys, 2, "analytic identities", all(checks), f"{sum(checks)}/{len(checks)} identities hold")


def test_criterion_3_oracles(capsys):
    failures = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n, k, d = 64, 5, 6
        f = rng.normal(size=(n, d))
        logits = rng.normal(size=(n, k)) * rng.uniform(0.5, 3.0)
        w = softmax_np(logits)
        cents = compute_centroids(f, w)
        if cents.c.tolist() != oracle_centroids(f.tolist(), w.tolist()):
            failures.append(f"centroids seed {seed}")
        if cosine_pseudo_labels(f, cents).tolist() != oracle_cosine(f.tolist(), cents.c.tolist()):
            failures.append(f"cosine labels seed {seed}")
        free = Centroids(rng.normal(size=(k, d)), np.ones(k, bool))
        if cosine_pseudo_labels(f, free).tolist() != oracle_cosine(f.tolist(), free.c.tolist()):
            failures.append(f"cosine labels (free centroids) seed {seed}")
        ties = rng.integers(-2, 3, size=(n, k)).astype(float)
        for probs in (w, softmax_np(ties)):
            dp = top2_from_probs(probs)
            ranked = [oracle_ranked(r) for r in probs.tolist()]
            if dp.y1.tolist() != [r[0] for r in ranked] or dp.y2.tolist() != [r[1] for r in ranked]:
                failures.append(f"double pseudo seed {seed}")
        zeta = rng.uniform(0.01, 1.0)
        sched = schedule_for_zeta(zeta)
        p = partition_batch(logits, sched)
        got = (p.known_idx.tolist(), p.unknown_idx.tolist(), p.ambiguous_idx.tolist())
        if got != oracle_partition(logits.tolist(), sched.tau_high, sched.tau_low):
            failures.append(f"partition seed {seed}")
        labels = rng.integers(0, k, n)
        for scores in (logits, ties):
            for kk in range(1, k + 1):
                ref = sum(int(y) in oracle_ranked(r)[:kk] for r, y in zip(scores.tolist(), labels)) / n
                if topk_accuracy(scores, labels, kk) != ref:
                    failures.append(f"top-{kk} seed {seed}")
    report(capsys, 3, "oracle equivalence", not failures, "20 seeds x 64 samples" + (f"; {failures[:3]}" if failures else ""))


def test_criterion_4_schedules(capsys):
    checks = []
    for total in (10, 25, 100, 137, 1000):
        first_on = next(i for i in range(total) if lambda_ema(i, total) == 1.0)
        checks.append(first_on == math.ceil(0.4 * total))
        checks.append(all(lambda_ema(i, total) == 0.0 for i in range(first_on)))
    start = schedule_for_zeta(0.0)
    checks.append((start.tau_high, start.tau_low) == (0.5, 0.5))
    for total in (1, 9, 100, 1000):
        end = thresholds_at(total - 1, total)
        checks.append((end.tau_high, end.tau_low) == (0.7, 0.3))
        checks.append(all(thresholds_at(s, total).tau_high + thresholds_at(s, total).tau_low == 1.0 for s in range(total)))
    for eta0 in (1e-3, 1e-2, 0.05):
        checks.append(lr_at(eta0, 0.0) == eta0)
        checks.append(lr_at(eta0, 1.0) == eta0 / 11)
    report(capsys, 4, "schedule exactness", all(checks), f"{sum(checks)}/{len(checks)} checks exact")


def test_criterion_5_resampling(capsys):
    t0 = time.perf_counter()
    y = np.repeat(np.arange(3), [10, 30, 60])
    w = class_weights(y, 3)
    rng = np.random.default_rng(0)
    draws = np.concatenate([b for _ in range(1000) for b in weighted_batches(y, w, 100, rng)])
    elapsed = time.perf_counter() - t0
    freq = np.bincount(y[draws], minlength=3) / draws.size
    ok = draws.size == 100_000 and np.all(np.abs(freq - 1 / 3) <= 0.01) and elapsed < 5
    report(capsys, 5, "re-sampling", ok, f"freq={np.round(freq, 4).tolist()} time={elapsed:.2f}s")


@pytest.fixture(scope="module")
def study_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    runs = {}
    for seed in SEEDS:
        t0 = time.perf_counter()
        summary = reproduce_all(LabConfig().with_seed(seed), root / f"seed{seed}")
        runs[seed] = (summary, time.perf_counter() - t0, root / f"seed{seed}")
    return root, runs


def test_criterion_6_end_to_end(capsys, study_runs):
    _, runs = study_runs
    wins = {(t, c): 0 for t in TRACKS for c in ("old", "new")}
    gaps, times = [], []
    for seed, (summary, elapsed, _) in runs.items():
        v = summary_lookup(summary)
        for t in TRACKS:
            for c in ("old", "new"):
                wins[(t, c)] += v[(t, f"{c} adapt")] >= v[(t, f"{c} source")]
        gaps.append(noshift_gap(summary))
        times.append(elapsed)
    ok = all(n >= 4 for n in wins.values()) and all(g <= 0.05 for g in gaps) and all(s <= 60 for s in times)
    detail = " ".join(f"{t}/{c}={n}/5" for (t, c), n in wins.items())
    detail += f" noshift_gap_max={max(gaps):.3f} max_time={max(times):.1f}s"
    report(capsys, 6, "end-to-end study", ok, detail)


def test_criterion_7_determinism(capsys, tmp_path):
    dirs = [tmp_path / "first", tmp_path / "second"]
    for d in dirs:
        cmd = [sys.executable, "-m", "sfda_lab", "reproduce-all", "--seed", "0", "--out-dir", str(d)]
        subprocess.run(cmd, check=True, capture_output=True)
    first, second = dirs
    targets = sorted(p.relative_to(first) for p in first.rglob("*")
                     if p.name.endswith((".ckpt.json", ".jsonl", ".csv")) or p.name == "summary.json")
    mismatched = [str(r) for r in targets if (first / r).read_bytes() != (second / r).read_bytes()]
    n_ckpt = sum(str(r).endswith(".ckpt.json") for r in targets)
    ok = not mismatched and n_ckpt > 0
    report(capsys, 7, "determinism", ok, f"{len(targets)} files ({n_ckpt} checkpoints) identical across two CLI runs"
           + (f"; differ: {mismatched[:3]}" if mismatched else ""))


def test_criterion_8_frozen_classifier(capsys, study_runs):
    _, runs = study_runs
    compared, broken = 0, []
    for seed, (_, _, out) in runs.items():
        for track in TRACKS:
            for ckpt, src_name in (("old", "source_last"), ("new", "source_best")):
                src, _ = load_checkpoint(out / track / f"{src_name}.ckpt.json")
                ada, _ = load_checkpoint(out / track / f"{ckpt}_adapt.ckpt.json")
                a, b = src.named_arrays(), ada.named_arrays()
                for key in (k for k in a if k.startswith("h.")):
                    compared += 1
                    if a[key].tobytes() != b[key].tobytes():
                        broken.append(f"seed{seed}/{track}/{ckpt}/{key}")
                # the feature extractor must actually have moved
                if all(a[k].tobytes() == b[k].tobytes() for k in a if k.startswith("g.")):
                    broken.append(f"seed{seed}/{track}/{ckpt}: g unchanged")
    report(capsys, 8, "frozen classifier", not broken and compared > 0, f"{compared} classifier arrays bit-identical"
           + (f"; {broken[:3]}" if broken else ""))


def test_summary_json_is_parseable(study_runs):
    _, runs = study_runs
    for _, _, out in runs.values():
        json.loads((out / "summary.json").read_text())

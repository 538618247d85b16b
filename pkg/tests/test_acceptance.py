"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s -q``.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from a2summ import metrics
from a2summ import numerics as nx
from a2summ.alignmask import SegmentWindow as W
from a2summ.alignmask import TokenLayout, build_mask
from a2summ.config import preset
from a2summ.data import gen_synthetic, make_batch, read_sample, write_sample
from a2summ.evaluate import evaluate_scores, predict, score_source, write_report
from a2summ.experiments import median, run_variant
from a2summ.losses import focal_loss, hard_negatives, inter_sample_loss
from a2summ.model import forward, init_params, load_checkpoint, save_checkpoint
from a2summ.selfcheck import GRAD_TOL, _primitive_cases, objective_grad_error
from a2summ.summarize import budgeted_summary, kts_segment, knapsack_select
from a2summ.train import train

from oracles import hard_negative_oracle, kendall_oracle, mask_oracle, spearman_oracle
from test_model import _cfg, _sample

SEEDS = (0, 1, 2)


@pytest.fixture
def verdict(capsys):
    lines = []

    def record(name, ok, detail=""):
        lines.append((name, bool(ok), detail))

    yield record
    with capsys.disabled():
        for name, ok, detail in lines:
            print(f"\n[acceptance] {'PASS' if ok else 'FAIL'} {name}: {detail}", end="")
        print()


def _check(verdict, name, ok, detail=""):
    verdict(name, ok, detail)
    return ok


def test_c1_gradient_fidelity(verdict):
    t0 = time.perf_counter()
    x = np.random.default_rng(7).normal(size=(5, 4))
    prim = {name: nx.grad_check(f, x) for name, f in _primitive_cases().items()}
    obj = objective_grad_error()
    secs = time.perf_counter() - t0
    worst_p = max(prim, key=prim.get)
    worst_o = max(obj, key=obj.get)
    ok = prim[worst_p] < GRAD_TOL and obj[worst_o] < GRAD_TOL and secs < 120
    _check(
        verdict,
        "C1 gradient fidelity",
        ok,
        f"{len(prim)} primitives max {prim[worst_p]:.1e} ({worst_p}); objective max {obj[worst_o]:.1e} ({worst_o}); {secs:.1f}s",
    )
    assert ok


def _random_layout(rng):
    N, M = int(rng.integers(0, 13)), int(rng.integers(0, 13))
    wins = []
    for k in range(M):
        if N and rng.random() < 0.7:
            s = int(rng.integers(0, N + 1))
            wins.append((k, s, int(rng.integers(s, N + 1))))
    wins.sort(key=lambda w: w[1])
    return N, M, wins


def test_c2_mask_correctness(verdict):
    rng = np.random.default_rng(2024)
    bad = 0
    for _ in range(1000):
        N, M, wins = _random_layout(rng)
        bad += not np.array_equal(build_mask(TokenLayout(N, M), [W(*w) for w in wins]), mask_oracle(N, M, wins))

    # one-block models: perturbing token j moves only the rows allowed to attend to j
    worst = 0.0
    for trial in range(100):
        N = int(rng.integers(3, 10))
        M = int(rng.integers(1, min(5, N + 1)))
        s = _sample("m", N, M, seed=trial)
        cfg = _cfg(heads=int(rng.choice([1, 2, 4])))
        params = init_params(cfg, seed=trial)
        mask = build_mask(s.layout, s.windows)
        base = forward(make_batch([s]), params, cfg).Z.data[0]
        if rng.random() < 0.5:
            k = int(rng.integers(M))
            s.sentence_features[k] += rng.normal(scale=3.0, size=s.sentence_features.shape[1]).astype(np.float32)
            j = s.layout.sentence(k)
        else:
            i = int(rng.integers(N))
            s.frame_features[i] += rng.normal(scale=3.0, size=s.frame_features.shape[1]).astype(np.float32)
            j = s.layout.frame(i)
        pert = forward(make_batch([s]), params, cfg).Z.data[0]
        rows = np.flatnonzero(~mask[: s.layout.length, j])
        if rows.size:
            worst = max(worst, float(np.abs(pert[rows] - base[rows]).max()))
    ok = bad == 0 and worst < 1e-6
    _check(verdict, "C2 mask correctness", ok, f"{bad}/1000 enumeration mismatches; max forbidden-token effect {worst:.1e}")
    assert ok


def test_c3_loss_goldens(verdict):
    with nx.precision(np.float64):
        focal = focal_loss(nx.tensor([0.5]), [1], 0.25, 2.0).item()
        e = nx.tensor(np.eye(2))
        inter = inter_sample_loss(e, e, 1.0).item()
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(1, 30))
            p = rng.uniform(0.01, 0.99, size=n)
            y = rng.integers(0, 2, size=n)
            bce = float(np.mean(np.where(y == 1, -0.25 * np.log(p), -0.75 * np.log(1 - p))))
            worst = max(worst, abs(focal_loss(nx.tensor(p), y, 0.25, 0.0).item() - bce))
    ok = abs(focal - 0.043321) <= 1e-5 and abs(inter - 0.62652) <= 1e-4 and worst < 1e-6
    _check(verdict, "C3 loss goldens", ok, f"focal {focal:.6f}; inter {inter:.5f}; gamma=0 vs BCE max {worst:.1e}")
    assert ok


def test_c4_pair_selection(verdict):
    rng = np.random.default_rng(4)
    fails = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 40))
        # coarse score grid so ties are common
        scores = rng.integers(0, 6, size=n) / 5
        labels = (rng.random(n) < rng.uniform(0, 0.6)).astype(np.int64)
        r, ex = int(rng.integers(1, 9)), int(rng.integers(0, 5))
        got = hard_negatives(scores, labels, r, ex)
        expanded = {j for i in np.flatnonzero(labels) for j in range(i - ex, i + ex + 1)}
        eligible = [i for i in range(n) if i not in expanded]
        want_count = min(n // r, len(eligible)) if labels.any() else 0
        fails += bool(
            expanded & set(got.tolist())
            or got.size != want_count
            or got.tolist() != hard_negative_oracle(scores.tolist(), labels.tolist(), r, ex)
        )
    _check(verdict, "C4 pair selection", fails == 0, f"{fails}/10000 instances violate the contract")
    assert fails == 0


def _knapsack_brute(values, durations, budget):
    n = len(values)
    bits = (np.arange(1 << n)[:, None] >> np.arange(n)) & 1
    val = bits @ values
    dur = bits @ durations
    ok = dur <= budget
    top = val[ok].max()
    cand = ok & (val == top)
    dmin = dur[cand].min()
    cand &= dur == dmin
    return min(tuple(np.flatnonzero(bits[m]).tolist()) for m in np.flatnonzero(cand))


def test_c5_selection(verdict):
    rng = np.random.default_rng(5)
    mism = 0
    for _ in range(1000):
        n = int(rng.integers(1, 16))
        # multiples of 1/8 keep subset sums exact
        values = rng.integers(0, 9, size=n) / 8
        durs = rng.integers(1, 9, size=n)
        budget = int(rng.integers(0, durs.sum() + 2))
        mism += tuple(knapsack_select(values, durs, budget).segments) != _knapsack_brute(values, durs, budget)

    over = 0
    for _ in range(1000):
        N = int(rng.integers(1, 120))
        cuts = np.unique(np.concatenate([[0, N], rng.integers(0, N + 1, size=int(rng.integers(0, 12)))]))
        sel, _ = budgeted_summary(rng.random(N), cuts)
        over += sel.duration > math.floor(0.15 * N) or len(sel.frames) != sel.duration

    kts_miss = 0
    for _ in range(200):
        N = int(rng.integers(20, 81))
        split = int(rng.integers(1, N))
        a, b = rng.normal(size=8), rng.normal(size=8)
        X = np.vstack([np.tile(a, (split, 1)), np.tile(b, (N - split, 1))])
        kts_miss += kts_segment(X).tolist() != [0, split, N]

    ok = mism == 0 and over == 0 and kts_miss == 0
    _check(
        verdict,
        "C5 selection",
        ok,
        f"knapsack mismatches {mism}/1000; budget overruns {over}/1000; KTS misses {kts_miss}/200",
    )
    assert ok


def test_c6_metric_goldens(verdict):
    r1 = metrics.rouge_n(metrics.tokenize("the cat sat"), metrics.tokenize("the cat"), 1)
    rl = metrics.rouge_l("a b c d".split(), "a c d".split())
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 11))
        a, b = rng.integers(0, 5, size=n).tolist(), rng.integers(0, 5, size=n).tolist()
        for fn, oracle in ((metrics.kendall_tau, kendall_oracle), (metrics.spearman_rho, spearman_oracle)):
            got, want = fn(a, b), oracle(a, b)
            if (got is None) != (want is None):
                worst = math.inf
            elif got is not None:
                worst = max(worst, abs(got - want))
    cfg = preset("synthetic")
    g = replace(cfg.gen_config(), n_train=0, n_val=0, n_test=100)
    samples = [r for r, _ in gen_synthetic(g, 6)]
    _, agg = evaluate_scores(samples, score_source(samples, "random", 6), cfg)
    ok = (
        r1[0] == 2 / 3
        and r1[1] == 1.0
        and r1[2] == pytest.approx(0.8, abs=1e-15)
        and abs(rl - 6 / 7) <= 1e-9
        and worst <= 1e-9
        and abs(agg["tau"]) <= 0.05
    )
    _check(
        verdict,
        "C6 metric goldens",
        ok,
        f"rouge1 {tuple(round(v, 6) for v in r1)}; rougeL {rl:.9f}; tau/rho max err {worst:.1e}; random tau {agg['tau']:+.4f}",
    )
    assert ok


_RUNS: dict = {}


def _runs(variant):
    if variant not in _RUNS:
        _RUNS[variant] = [run_variant(variant, s) for s in SEEDS]
    return _RUNS[variant]


def test_c7_end_to_end_learning(verdict):
    t0 = time.perf_counter()
    runs = _runs("full")
    secs = time.perf_counter() - t0
    cfg = preset("synthetic")
    fv, fs = median(runs, "f1_video"), median(runs, "f1_sentence")
    rv, rs = median(runs, "random_f1_video"), median(runs, "random_f1_sentence")
    gain = median(runs, "f1_video") - median(runs, "initial_f1_video")
    ok = (
        cfg.epochs <= 50
        and fv >= 0.70
        and fs >= 0.70
        and fv >= rv + 0.3
        and fs >= rs + 0.3
        and secs < 15 * 60
    )
    _check(
        verdict,
        "C7 end-to-end learning",
        ok,
        f"median val F1 video {fv:.3f} (random {rv:.3f}), sentence {fs:.3f} (random {rs:.3f}); "
        f"gain over epoch 0 {gain:+.3f}; {cfg.epochs} epochs x {len(runs)} seeds in {secs:.0f}s",
    )
    assert ok


def test_c8_ablation_direction(verdict):
    full, align, none = (median(_runs(v), "f1_video") for v in ("full", "align_only", "no_align"))
    ok = full - align >= 0.02 and align - none >= 0.02
    _check(
        verdict,
        "C8 ablation direction",
        ok,
        f"median val key-frame F1 full {full:.3f}, align-only {align:.3f}, no-align {none:.3f} "
        f"(gaps {full - align:+.3f}, {align - none:+.3f}; need >= 0.02 each)",
    )
    assert ok


def test_c9_determinism_and_formats(verdict, tmp_path):
    cfg = preset("synthetic", epochs=2, gen_n_train=12, gen_n_val=4, gen_n_test=4, gen_n_min=20, gen_n_max=30)
    pairs = gen_synthetic(cfg.gen_config(), 9)
    tr = [r for r, s in pairs if s == "train"]
    va = [r for r, s in pairs if s == "val"]
    same = True
    for d in ("a", "b"):
        res = train(cfg, tr, va, out_dir=tmp_path / d)
        rows, agg = evaluate_scores(va, predict(res.params, res.model_config, va, cfg.align), cfg)
        write_report(rows, agg, tmp_path / d / "rep")
    for rel in ("final.a2sm", "best.a2sm", "rep/metrics.tsv", "rep/metrics.jsonl", "train_log.jsonl"):
        a, b = (tmp_path / d / rel for d in ("a", "b"))
        if rel == "train_log.jsonl":
            # wall-clock fields differ by design
            strip = lambda p: [line.split('"wall_time"')[0] for line in p.read_text().splitlines()]
            same &= strip(a) == strip(b)
        else:
            same &= a.read_bytes() == b.read_bytes()

    params, mcfg, meta = load_checkpoint(tmp_path / "a" / "final.a2sm")
    save_checkpoint(tmp_path / "again.a2sm", params, mcfg, meta)
    ckpt_rt = (tmp_path / "again.a2sm").read_bytes() == (tmp_path / "a" / "final.a2sm").read_bytes()
    data_rt = True
    for rec, _ in pairs:
        write_sample(tmp_path / "x.a2ds", rec)
        first = (tmp_path / "x.a2ds").read_bytes()
        write_sample(tmp_path / "y.a2ds", read_sample(tmp_path / "x.a2ds", rec.id))
        data_rt &= first == (tmp_path / "y.a2ds").read_bytes()
    ok = same and ckpt_rt and data_rt
    _check(
        verdict,
        "C9 determinism and formats",
        ok,
        f"repeat runs identical {same}; checkpoint round trip {ckpt_rt}; dataset round trip {data_rt}",
    )
    assert ok

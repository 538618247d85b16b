"""Fast numeric self-checks: gradients, masks, knapsack, metric goldens.

Every check returns ``(name, ok, detail)``; :func:`run` collects them.  The
brute-force references here are intentionally naive and independent of the
production code paths.
"""

from __future__ import annotations

import itertools
from contextlib import nullcontext
from typing import Callable

import numpy as np

from . import metrics
from . import numerics as nx
from .alignmask import SegmentWindow, TokenLayout, build_mask
from .data import SampleRecord, make_batch
from .losses import LossWeights, focal_loss, inter_sample_loss, objective
from .model import ModelConfig, forward, init_params
from .numerics import Tensor, grad_check
from .summarize import knapsack_select

GRAD_TOL = 1e-4


def _primitive_cases() -> dict[str, Callable[[Tensor], Tensor]]:
    rng = np.random.default_rng(0)
    W = Tensor(rng.normal(size=(4, 3)))
    G = Tensor(rng.normal(size=(5, 4)))
    G55 = Tensor(rng.normal(size=(5, 5)))
    mask = rng.random((5, 5)) < 0.6
    mask[np.arange(5), np.arange(5)] = True
    one = Tensor(np.ones(1))
    g = Tensor(np.linspace(0.5, 1.5, 4))
    b = Tensor(np.linspace(-1.0, 1.0, 4))
    return {
        "add": lambda x: nx.sum(nx.mul(nx.add(x, one), x)),
        "sub": lambda x: nx.sum(nx.mul(nx.sub(one, x), x)),
        "mul": lambda x: nx.sum(nx.mul(x, G)),
        "scale": lambda x: nx.sum(nx.mul(nx.scale(x, -1.7), x)),
        "matmul": lambda x: nx.sum(nx.mul(nx.matmul(x, W), nx.matmul(x, W))),
        "exp": lambda x: nx.sum(nx.exp(x)),
        "log": lambda x: nx.sum(nx.log(nx.add(nx.mul(x, x), one))),
        "power": lambda x: nx.sum(nx.power(nx.add(nx.mul(x, x), one), 2.5)),
        "sigmoid": lambda x: nx.sum(nx.mul(nx.sigmoid(x), G)),
        "gelu": lambda x: nx.sum(nx.mul(nx.gelu(x), G)),
        "layer_norm": lambda x: nx.sum(nx.mul(nx.layer_norm(x, g, b), G)),
        "l2_normalize": lambda x: nx.sum(nx.mul(nx.l2_normalize(x), G)),
        "gather": lambda x: nx.sum(nx.mul(nx.gather(x, np.array([0, 2, 2, 4])), Tensor(G.data[:4]))),
        "concat": lambda x: nx.sum(nx.mul(nx.concat([x, nx.exp(x)], axis=0), Tensor(np.vstack([G.data, G.data])))),
        "reshape_transpose": lambda x: nx.sum(nx.mul(nx.reshape(nx.transpose(x, (1, 0)), (2, 10)), Tensor(np.arange(20.0).reshape(2, 10)))),
        "masked_mean": lambda x: nx.sum(nx.mul(nx.masked_mean(nx.exp(x), G.data > 0, axis=1), Tensor(np.arange(5.0)))),
        "logsumexp": lambda x: nx.sum(nx.mul(nx.logsumexp(x, axis=1), Tensor(np.arange(5.0)))),
        "masked_softmax": lambda x: nx.sum(nx.mul(nx.masked_softmax(nx.matmul(x, nx.transpose(x, (1, 0))), mask), G55)),
        "mean": lambda x: nx.mean(nx.mul(x, x)),
    }


def toy_batch(seed: int = 0):
    """Two small aligned samples and a 1-layer model config, for objective checks."""
    rng = np.random.default_rng(seed)
    samples = []
    for sid, (N, M) in enumerate(((6, 2), (5, 3))):
        cuts = [0, *sorted(rng.choice(np.arange(1, N), size=M - 1, replace=False)), N]
        key = np.zeros(M, dtype=np.int64)
        key[sid % M] = 1
        flab = np.zeros(N, dtype=np.int64)
        for k in range(M):
            flab[cuts[k] : cuts[k + 1]] = key[k]
        samples.append(
            SampleRecord(
                id=f"toy{sid}",
                frame_features=rng.normal(size=(N, 4)).astype(np.float32),
                sentence_features=rng.normal(size=(M, 3)).astype(np.float32),
                windows=[SegmentWindow(k, int(cuts[k]), int(cuts[k + 1])) for k in range(M)],
                frame_labels=flab,
                sentence_labels=key,
            )
        )
    cfg = ModelConfig(video_dim=4, text_dim=3, dim=4, heads=2, layers=1, dropout=0.0, max_positions=16, max_segments=8)
    return samples, cfg


def objective_grad_error(seed: int = 0) -> dict[str, float]:
    """Max relative gradient error of the full objective, per parameter tensor."""
    samples, cfg = toy_batch(seed)
    batch = make_batch(samples)
    weights = LossWeights(beta=0.5, lam=0.7, r=2, expansion=0)
    params = init_params(cfg, seed).astype(np.float64)
    errs = {}
    for name in params:
        def f(x, name=name):
            params.tensors[name] = x
            out = forward(batch, params, cfg)
            t_inter = nx.exp(params["log_tau_inter"])
            t_intra = nx.exp(params["log_tau_intra"])
            return objective(out, batch, weights, t_inter, t_intra)["total"]

        base = params[name]
        errs[name] = grad_check(f, base.data)
        params.tensors[name] = base
    return errs


def check_gradients() -> list[tuple[str, bool, str]]:
    out = []
    x = np.random.default_rng(7).normal(size=(5, 4))
    for name, f in _primitive_cases().items():
        err = grad_check(f, x)
        out.append((f"grad:{name}", err < GRAD_TOL, f"max rel err {err:.2e}"))
    errs = objective_grad_error()
    worst = max(errs, key=errs.get)
    out.append(("grad:objective", errs[worst] < GRAD_TOL, f"max rel err {errs[worst]:.2e} ({worst})"))
    return out


def _mask_by_definition(N, M, windows):
    T = N + M + 2
    side = ["v"] * (N + 1) + ["t"] * (M + 1)
    out = np.zeros((T, T), dtype=bool)
    for i, j in itertools.product(range(T), repeat=2):
        if side[i] == side[j]:
            out[i, j] = True
        elif 0 < i <= N and j > N + 1:
            out[i, j] = any(w.sentence_index == j - N - 2 and w.t_s <= i - 1 < w.t_e for w in windows)
        elif 0 < j <= N and i > N + 1:
            out[i, j] = any(w.sentence_index == i - N - 2 and w.t_s <= j - 1 < w.t_e for w in windows)
    return out


def check_masks(trials: int = 200, seed: int = 0) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        N, M = int(rng.integers(0, 13)), int(rng.integers(0, 13))
        wins = []
        for k in range(M):
            if N and rng.random() < 0.7:
                s = int(rng.integers(0, N + 1))
                wins.append(SegmentWindow(k, s, int(rng.integers(s, N + 1))))
        wins.sort(key=lambda w: w.t_s)
        if not np.array_equal(build_mask(TokenLayout(N, M), wins), _mask_by_definition(N, M, wins)):
            return [("mask:enumeration", False, f"mismatch at N={N} M={M}")]
    return [("mask:enumeration", True, f"{trials} layouts")]


def check_knapsack(trials: int = 200, seed: int = 0) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        n = int(rng.integers(1, 11))
        vals = rng.integers(0, 5, n) / 4
        durs = rng.integers(1, 6, n)
        budget = int(rng.integers(0, durs.sum() + 1))
        best = (0.0, 0, ())
        for r in range(1, n + 1):
            for idx in itertools.combinations(range(n), r):
                d = int(durs[list(idx)].sum())
                v = float(sum(vals[i] for i in idx))
                if d <= budget and (-v, d, idx) < (-best[0], best[1], best[2]):
                    best = (v, d, idx)
        sel = knapsack_select(vals, durs, budget)
        if tuple(sel.segments) != best[2]:
            return [("knapsack:brute_force", False, f"{sel.segments} != {list(best[2])}")]
    return [("knapsack:brute_force", True, f"{trials} instances")]


def check_goldens() -> list[tuple[str, bool, str]]:
    with nx.precision(np.float64):
        focal = focal_loss(nx.tensor([0.5]), [1], 0.25, 2.0).item()
        e = nx.tensor(np.eye(2))
        inter = inter_sample_loss(e, e, 1.0).item()
    r1 = metrics.rouge_n(["the", "cat", "sat"], ["the", "cat"], 1)
    rl = metrics.rouge_l(list("abcd"), list("acd"))
    return [
        ("golden:focal", abs(focal - 0.043321) < 1e-5, f"{focal:.6f}"),
        ("golden:inter", abs(inter - 0.62652) < 1e-4, f"{inter:.5f}"),
        ("golden:rouge1", r1[0] == 2 / 3 and r1[1] == 1.0 and abs(r1[2] - 0.8) < 1e-12, str(r1)),
        ("golden:rougeL", abs(rl - 6 / 7) < 1e-9, f"{rl:.9f}"),
        ("golden:tau", metrics.kendall_tau([1, 2, 3], [3, 2, 1]) == -1.0, "reversed ranks"),
    ]


def run(corrupt: str | None = None) -> list[tuple[str, bool, str]]:
    """All checks; ``corrupt`` names an op whose backward is perturbed (test hook)."""
    ctx = nx.corrupt_gradient(corrupt) if corrupt else nullcontext()
    with ctx:
        results = check_gradients()
    results += check_masks() + check_knapsack() + check_goldens()
    return results


def report(results) -> str:
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {detail}" for name, ok, detail in results]
    n_fail = sum(not ok for _, ok, _ in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    return "\n".join(lines)


if __name__ == "__main__":  # pragma: no cover
    res = run()
    print(report(res))
    raise SystemExit(0 if all(ok for _, ok, _ in res) else 1)


"""Turn per-timestep scores into extractive summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SummarySelection:
    frames: list[int] = field(default_factory=list)
    segments: list[int] = field(default_factory=list)
    sentences: list[int] = field(default_factory=list)
    duration: int = 0


def _scatter_table(features: np.ndarray) -> np.ndarray:
    """``out[a, b]`` = within-segment scatter of frames ``[a, b)`` under the linear kernel."""
    X = np.asarray(features, dtype=np.float64)
    N = X.shape[0]
    K = X @ X.T
    diag = np.concatenate([[0.0], np.cumsum(np.diag(K))])
    cum = np.zeros((N + 1, N + 1))
    cum[1:, 1:] = K.cumsum(0).cumsum(1)
    a = np.arange(N + 1)[:, None]
    b = np.arange(N + 1)[None, :]
    block = cum[b, b] - cum[a, b] - cum[b, a] + cum[a, a]
    length = np.maximum(b - a, 1)
    out = (diag[b] - diag[a]) - block / length
    out[b <= a] = np.inf
    return np.maximum(out, 0.0)


def segment_scatter(features: np.ndarray, boundaries) -> float:
    """Total scatter of a segmentation, computed directly from the Gram matrix."""
    X = np.asarray(features, dtype=np.float64)
    total = 0.0
    for s, e in zip(boundaries[:-1], boundaries[1:]):
        seg = X[s:e]
        G = seg @ seg.T
        total += np.trace(G) - G.sum() / (e - s)
    return float(total)


def kts_segment(features: np.ndarray, max_segments: int | None = None, penalty: float = 1.0) -> np.ndarray:
    """Kernel temporal segmentation with a linear kernel.

    Dynamic programming gives the minimal scatter ``J(m)`` for every segment
    count up to ``max_segments``; the count minimizing
    ``J(m) + penalty * m * (log(N / m) + 1)`` is returned as boundaries
    ``[0, ..., N]``.
    """
    X = np.asarray(features, dtype=np.float64)
    N = X.shape[0]
    if N < 2:
        return np.array([0, N], dtype=np.int64)
    if max_segments is None:
        max_segments = math.ceil(N / 10)
    max_segments = max(1, min(max_segments, N))
    scatter = _scatter_table(X)
    cost = np.full((max_segments + 1, N + 1), np.inf)
    back = np.zeros((max_segments + 1, N + 1), dtype=np.int64)
    cost[1] = scatter[0]
    for m in range(2, max_segments + 1):
        # cand[a, b] = cost of m-1 segments over [0, a) plus segment [a, b)
        cand = cost[m - 1][:, None] + scatter
        back[m] = np.argmin(cand, axis=0)
        cost[m] = cand[back[m], np.arange(N + 1)]
    best_m = 1
    best = cost[1, N] + penalty * (math.log(N) + 1)
    for m in range(2, max_segments + 1):
        crit = cost[m, N] + penalty * m * (math.log(N / m) + 1)
        if crit < best - 1e-12 * max(1.0, abs(best)):
            best_m, best = m, crit
    bounds = [N]
    end = N
    for m in range(best_m, 1, -1):
        end = int(back[m, end])
        bounds.append(end)
    bounds.append(0)
    return np.array(bounds[::-1], dtype=np.int64)


def segment_scores(scores: np.ndarray, boundaries) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    b = np.asarray(boundaries)
    if b[-1] != scores.size:
        raise ValueError(f"segmentation ends at {b[-1]} but there are {scores.size} scores")
    return np.array([scores[s:e].mean() for s, e in zip(b[:-1], b[1:])])


def knapsack_select(values, durations, budget: int) -> SummarySelection:
    """Exact 0/1 knapsack.

    Ties on total value go to the smaller total duration, then to the
    lexicographically smallest sorted index list.
    """
    values = [float(v) for v in values]
    durations = [int(d) for d in durations]
    budget = int(budget)
    if any(d <= 0 for d in durations):
        raise ValueError("segment durations must be positive")
    if budget <= 0 or not values:
        return SummarySelection()
    W = min(budget, sum(durations))
    # best[c] = (value, duration, indices) over items seen so far with duration <= c
    best: list[tuple[float, int, tuple[int, ...]]] = [(0.0, 0, ())] * (W + 1)
    for i, (v, d) in enumerate(zip(values, durations)):
        if d > W:
            continue
        new = list(best)
        for c in range(d, W + 1):
            pv, pd, ps = best[c - d]
            cand = (pv + v, pd + d, ps + (i,))
            if _better(cand, new[c]):
                new[c] = cand
        best = new
    value, dur, idx = best[W]
    return SummarySelection(segments=list(idx), duration=dur)


def _better(a, b) -> bool:
    if a[0] != b[0]:
        return a[0] > b[0]
    if a[1] != b[1]:
        return a[1] < b[1]
    return a[2] < b[2]


def topk_select(scores, k: int) -> list[int]:
    """Indices of the ``k`` largest scores (ties to lower index), ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    k = max(0, min(int(k), scores.size))
    order = np.lexsort((np.arange(scores.size), -scores))
    return sorted(int(i) for i in order[:k])


def budgeted_summary(
    frame_scores: np.ndarray,
    boundaries=None,
    features: np.ndarray | None = None,
    budget_fraction: float = 0.15,
    penalty: float = 1.0,
) -> tuple[SummarySelection, np.ndarray]:
    """Segment (or use the given segmentation), score segments, knapsack under the budget."""
    N = len(frame_scores)
    if boundaries is None:
        if features is None:
            raise ValueError("need either boundaries or features for segmentation")
        boundaries = kts_segment(features, penalty=penalty)
    boundaries = np.asarray(boundaries)
    seg_vals = segment_scores(frame_scores, boundaries)
    durs = np.diff(boundaries)
    budget = int(math.floor(budget_fraction * N + 1e-9))
    sel = knapsack_select(seg_vals, durs, budget)
    frames = [f for s in sel.segments for f in range(int(boundaries[s]), int(boundaries[s + 1]))]
    sel.frames = frames
    return sel, boundaries


def frame_mask(indices, n: int) -> np.ndarray:
    m = np.zeros(n, dtype=bool)
    m[list(indices)] = True
    return m

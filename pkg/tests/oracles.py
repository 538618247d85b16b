"""Independent reference evaluators used by the test-suite.

These are deliberately naive (loops, direct formulas) and share no code with
the implementation they check.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def mask_oracle(n_frames, n_sentences, windows):
    """Attention permission by the set definition, one pair at a time."""
    T = n_frames + n_sentences + 2

    def kind(pos):
        if pos == 0:
            return ("v", None, True)
        if pos <= n_frames:
            return ("v", pos - 1, False)
        if pos == n_frames + 1:
            return ("t", None, True)
        return ("t", pos - n_frames - 2, False)

    out = np.zeros((T, T), dtype=bool)
    for i in range(T):
        for j in range(T):
            a, b = kind(i), kind(j)
            if a[0] == b[0]:
                out[i, j] = True
                continue
            if a[2] or b[2]:
                continue
            frame, sent = (a[1], b[1]) if a[0] == "v" else (b[1], a[1])
            out[i, j] = any(w[0] == sent and w[1] <= frame < w[2] for w in windows)
    return out


def focal_oracle(p, y, alpha, gamma):
    total = 0.0
    for pi, yi in zip(p, y):
        pi = min(max(pi, 1e-7), 1 - 1e-7)
        if yi == 1:
            total += alpha * (1 - pi) ** gamma * -math.log(pi)
        else:
            total += (1 - alpha) * pi**gamma * -math.log(1 - pi)
    return total / len(p)


def info_nce_oracle(z, zpos, zneg, tau):
    num = math.exp(float(np.dot(z, zpos)) / tau)
    den = num + sum(math.exp(float(np.dot(z, n)) / tau) for n in zneg)
    return -math.log(num / den)


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def inter_oracle(V, T, tau):
    B = len(V)
    V = [_unit(v) for v in V]
    T = [_unit(t) for t in T]
    a = sum(info_nce_oracle(V[j], T[j], [T[k] for k in range(B) if k != j], tau) for j in range(B)) / B
    b = sum(info_nce_oracle(T[j], V[j], [V[k] for k in range(B) if k != j], tau) for j in range(B)) / B
    return a + b


def intra_oracle(frames, sentences, pf, ps, hnf, hns, tau):
    """Quadruple loop: anchors x positives x (numerator + every negative)."""
    F = [_unit(f) for f in frames]
    S = [_unit(s) for s in sentences]

    def direction(anchors, positives, negatives):
        if not anchors or not positives:
            return 0.0
        vals = []
        for a in anchors:
            for p in positives:
                num = math.exp(float(np.dot(a, p)) / tau)
                den = num
                for n in negatives:
                    den += math.exp(float(np.dot(a, n)) / tau)
                vals.append(-math.log(num / den))
        return sum(vals) / len(vals)

    return direction([F[i] for i in pf], [S[j] for j in ps], [F[i] for i in hnf]) + direction(
        [S[j] for j in ps], [F[i] for i in pf], [S[j] for j in hns]
    )


def hard_negative_oracle(scores, labels, r, expansion):
    n = len(scores)
    if not any(labels):
        return []
    expanded = set()
    for i, lab in enumerate(labels):
        if lab:
            for j in range(i - expansion, i + expansion + 1):
                if 0 <= j < n:
                    expanded.add(j)
    eligible = [i for i in range(n) if i not in expanded]
    ranked = sorted(eligible, key=lambda i: (-scores[i], i))
    return sorted(ranked[: n // r])


def knapsack_oracle(values, durations, budget):
    """Exhaustive enumeration with the same tie-break order."""
    n = len(values)
    best = (0.0, 0, ())
    if budget <= 0:
        return best
    for mask in range(1, 1 << n):
        idx = tuple(i for i in range(n) if mask >> i & 1)
        dur = sum(durations[i] for i in idx)
        if dur > budget:
            continue
        val = 0.0
        for i in idx:
            val += values[i]
        key_new = (-val, dur, idx)
        key_old = (-best[0], best[1], best[2])
        if key_new < key_old:
            best = (val, dur, idx)
    return best


def kendall_oracle(a, b):
    n = len(a)
    conc = disc = ta = tb = 0
    for i, j in itertools.combinations(range(n), 2):
        da = (a[i] > a[j]) - (a[i] < a[j])
        db = (b[i] > b[j]) - (b[i] < b[j])
        if da == 0:
            ta += 1
        if db == 0:
            tb += 1
        if da * db > 0:
            conc += 1
        elif da * db < 0:
            disc += 1
    n0 = n * (n - 1) // 2
    den = math.sqrt((n0 - ta) * (n0 - tb))
    return None if den == 0 else (conc - disc) / den


def average_ranks(x):
    order = sorted(range(len(x)), key=lambda i: x[i])
    ranks = [0.0] * len(x)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and x[order[j + 1]] == x[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman_oracle(a, b):
    ra, rb = average_ranks(a), average_ranks(b)
    n = len(a)
    ma, mb = sum(ra) / n, sum(rb) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(ra, rb))
    va = sum((x - ma) ** 2 for x in ra)
    vb = sum((y - mb) ** 2 for y in rb)
    if va == 0 or vb == 0:
        return None
    return cov / math.sqrt(va * vb)


def best_two_segment_boundary(X):
    """Exhaustive search for the single change point minimizing scatter."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    best, arg = math.inf, None
    for b in range(1, n):
        cost = 0.0
        for seg in (X[:b], X[b:]):
            mu = seg.mean(axis=0)
            cost += float(((seg - mu) ** 2).sum())
        if cost < best:
            best, arg = cost, b
    return arg

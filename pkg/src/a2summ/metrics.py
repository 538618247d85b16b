"""Evaluation metrics: key-shot F1, rank correlations, ROUGE and summary cosine similarity.

Rank correlations return ``None`` when undefined (a constant input).
"""

from __future__ import annotations

import re
from collections import Counter
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text: str | Sequence[str]) -> list[str]:
    """Lowercase and split on non-alphanumeric runs.  Token lists are re-joined first."""
    if not isinstance(text, str):
        text = " ".join(text)
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def keyshot_f1(pred, gts, mode: str = "max") -> float:
    pred = np.asarray(pred, dtype=bool)
    if isinstance(gts, np.ndarray) and gts.ndim == 1:
        gts = [gts]
    if len(gts) == 0:
        raise ValueError("keyshot_f1 needs at least one ground truth")
    scores = []
    for gt in gts:
        gt = np.asarray(gt, dtype=bool)
        if gt.shape != pred.shape:
            raise ValueError(f"length mismatch: pred {pred.shape} vs gt {gt.shape}")
        overlap = np.logical_and(pred, gt).sum()
        if overlap == 0:
            scores.append(0.0)
            continue
        scores.append(_f1(overlap / pred.sum(), overlap / gt.sum()))
    if mode == "max":
        return float(max(scores))
    if mode == "mean":
        return float(np.mean(scores))
    raise ValueError(f"unknown reduction mode {mode!r}")


def kendall_tau(a, b) -> float | None:
    """Kendall's tau-b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("kendall_tau needs two equal-length vectors with n >= 2")
    iu = np.triu_indices(a.size, k=1)
    da = np.sign(a[:, None] - a[None, :])[iu]
    db = np.sign(b[:, None] - b[None, :])[iu]
    n0 = da.size
    n1 = np.count_nonzero(da == 0)
    n2 = np.count_nonzero(db == 0)
    if n1 == n0 or n2 == n0:
        return None
    s = float(np.sum(da * db))
    return s / float(np.sqrt((n0 - n1) * (n0 - n2)))


def spearman_rho(a, b) -> float | None:
    """Pearson correlation of tie-averaged ranks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("spearman_rho needs two equal-length vectors with n >= 2")
    ra, rb = rankdata(a) - (a.size + 1) / 2, rankdata(b) - (b.size + 1) / 2
    den = np.sqrt(np.sum(ra * ra) * np.sum(rb * rb))
    if den == 0:
        return None
    return float(np.sum(ra * rb) / den)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(cand: Sequence[str], ref: Sequence[str], n: int = 1) -> tuple[float, float, float]:
    """Clipped n-gram (precision, recall, F1)."""
    if not ref:
        raise ValueError("empty reference")
    c, r = _ngrams(cand, n), _ngrams(ref, n)
    nc, nr = sum(c.values()), sum(r.values())
    match = sum(min(cnt, r[g]) for g, cnt in c.items())
    p = match / nc if nc else 0.0
    rec = match / nr if nr else 0.0
    return p, rec, _f1(p, rec)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(cand: Sequence[str], ref: Sequence[str]) -> float:
    if not ref:
        raise ValueError("empty reference")
    if not cand:
        return 0.0
    lcs = lcs_length(cand, ref)
    return _f1(lcs / len(cand), lcs / len(ref))


def cosine_summary_sim(pred_features: np.ndarray, gt_features: np.ndarray) -> float:
    """Cosine between mean-pooled predicted and ground-truth key-frame features."""
    if len(pred_features) == 0 or len(gt_features) == 0:
        raise ValueError("empty selection")
    u = np.asarray(pred_features, dtype=np.float64).mean(axis=0)
    v = np.asarray(gt_features, dtype=np.float64).mean(axis=0)
    den = np.linalg.norm(u) * np.linalg.norm(v)
    return float(u @ v / den) if den > 0 else 0.0

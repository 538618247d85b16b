"""Synthetic learning and ablation runs shared by ``scripts/`` and the acceptance tests."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig, preset
from .data import gen_synthetic
from .evaluate import evaluate_scores, score_source
from .train import train

# Ablation ladder: contrastive terms off, then alignment off as well.
VARIANTS: dict[str, dict] = {
    "full": {},
    "align_only": {"beta": 0.0, "lam": 0.0},
    "no_align": {"beta": 0.0, "lam": 0.0, "align": False},
}


@dataclass
class RunSummary:
    variant: str
    seed: int
    f1_video: float
    f1_sentence: float
    best_epoch: int
    random_f1_video: float
    random_f1_sentence: float
    initial_f1_video: float
    seconds: float


def synthetic_splits(cfg: RunConfig, seed: int):
    pairs = gen_synthetic(cfg.gen_config(), seed)
    return [r for r, s in pairs if s == "train"], [r for r, s in pairs if s == "val"]


def run_variant(variant: str, seed: int, base: RunConfig | None = None, out_dir=None) -> RunSummary:
    """Train one ablation variant on the synthetic dataset drawn with ``seed``.

    Reported F1 values are those of the best validation epoch (mean of the two
    modalities picks the epoch).
    """
    base = base or preset("synthetic")
    cfg = replace(base, seed=seed, **VARIANTS[variant])
    tr, va = synthetic_splits(cfg, seed)
    t0 = time.perf_counter()
    res = train(cfg, tr, va, out_dir=out_dir)
    secs = time.perf_counter() - t0
    best = res.log[res.best_epoch]["val"]
    _, rand = evaluate_scores(va, score_source(va, "random", seed), cfg)
    return RunSummary(
        variant=variant,
        seed=seed,
        f1_video=best["f1_video"],
        f1_sentence=best["f1_sentence"],
        best_epoch=res.best_epoch,
        random_f1_video=rand["f1_video"],
        random_f1_sentence=rand["f1_sentence"],
        initial_f1_video=res.log[0]["val"]["f1_video"],
        seconds=secs,
    )


def median(runs, key: str) -> float:
    return float(np.median([getattr(r, key) for r in runs]))

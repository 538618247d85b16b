"""Score prediction over datasets and the per-sample / aggregate metric report."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics
from .config import RunConfig
from .data import SampleRecord, make_batch
from .model import ModelConfig, ModelParams, forward
from .summarize import budgeted_summary, frame_mask, topk_select

METRIC_KEYS = (
    "f1_video",
    "f1_video_topk",
    "f1_video_budget",
    "f1_sentence",
    "tau",
    "rho",
    "rouge1",
    "rouge2",
    "rougeL",
    "cos",
)


def predict(
    params: ModelParams, mcfg: ModelConfig, samples: Sequence[SampleRecord], align: bool = True, batch_size: int = 16
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Frame and sentence scores per sample (inference mode, no dropout)."""
    out = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        batch = make_batch(chunk, align=align)
        res = forward(batch, params, mcfg)
        for b in range(batch.size):
            out.append((res.frame_scores(batch, b).astype(np.float64), res.sentence_scores(batch, b).astype(np.float64)))
    return out


def score_source(samples: Sequence[SampleRecord], kind: str, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Non-model scores: ``oracle`` (labels as scores) or ``random`` (uniform noise)."""
    if kind == "oracle":
        return [(s.frame_labels.astype(np.float64), s.sentence_labels.astype(np.float64)) for s in samples]
    if kind == "random":
        rng = np.random.default_rng(seed)
        return [(rng.random(s.n_frames), rng.random(s.n_sentences)) for s in samples]
    raise ValueError(f"unknown score source {kind!r}")


def summary_length(labels: np.ndarray, fraction: float) -> int:
    """Top-K size: the ground-truth summary length, or ``fraction`` of the items when it is empty."""
    n_pos = int(labels.sum())
    return n_pos if n_pos > 0 else max(1, int(math.floor(fraction * labels.size)))


def _rank_corr(fn, scores, annotators, mode):
    if annotators is None:
        return None
    if mode == "mean_annotator":
        return fn(scores, annotators.mean(axis=0))
    vals = [v for v in (fn(scores, a) for a in annotators) if v is not None]
    return float(np.mean(vals)) if vals else None


def evaluate_sample(sample: SampleRecord, p: np.ndarray, q: np.ndarray, cfg: RunConfig) -> dict:
    res: dict = {"id": sample.id}
    gt_f = sample.frame_labels.astype(bool)
    sel_f = topk_select(p, summary_length(sample.frame_labels, cfg.topk_fraction))
    pred_topk = frame_mask(sel_f, sample.n_frames)
    res["f1_video_topk"] = metrics.keyshot_f1(pred_topk, [gt_f], cfg.f1_mode)
    sel, _ = budgeted_summary(
        p, sample.segmentation, sample.frame_features, cfg.budget_fraction, cfg.kts_penalty
    )
    res["f1_video_budget"] = metrics.keyshot_f1(frame_mask(sel.frames, sample.n_frames), [gt_f], cfg.f1_mode)
    res["f1_video"] = res["f1_video_topk"] if cfg.select_mode == "topk" else res["f1_video_budget"]

    sel_s = topk_select(q, summary_length(sample.sentence_labels, cfg.topk_fraction))
    res["f1_sentence"] = metrics.keyshot_f1(frame_mask(sel_s, sample.n_sentences), [sample.sentence_labels.astype(bool)])

    res["tau"] = _rank_corr(metrics.kendall_tau, p, sample.annotator_scores, cfg.rank_mode)
    res["rho"] = _rank_corr(metrics.spearman_rho, p, sample.annotator_scores, cfg.rank_mode)

    res["rouge1"] = res["rouge2"] = res["rougeL"] = None
    if sample.sentences_text is not None and sample.gt_summary_text:
        cand = metrics.tokenize([tok for k in sel_s for tok in sample.sentences_text[k]])
        ref = metrics.tokenize(sample.gt_summary_text)
        if ref:
            res["rouge1"] = metrics.rouge_n(cand, ref, 1)[2]
            res["rouge2"] = metrics.rouge_n(cand, ref, 2)[2] if len(ref) > 1 else None
            res["rougeL"] = metrics.rouge_l(cand, ref)

    pred_frames = sel_f if cfg.select_mode == "topk" else sel.frames
    res["cos"] = None
    if pred_frames and gt_f.any():
        res["cos"] = metrics.cosine_summary_sim(sample.frame_features[pred_frames], sample.frame_features[gt_f])
    res["selected_frames"] = [int(i) for i in pred_frames]
    res["selected_sentences"] = sel_s
    return res


def aggregate(rows: Sequence[dict]) -> dict:
    out = {"n": len(rows)}
    for k in METRIC_KEYS:
        vals = [r[k] for r in rows if r.get(k) is not None]
        out[k] = float(np.mean(vals)) if vals else None
    return out


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("A2SUMM_THREADS", "1")))
    except ValueError:
        return 1


def evaluate_scores(samples: Sequence[SampleRecord], scores, cfg: RunConfig) -> tuple[list[dict], dict]:
    jobs = list(zip(samples, scores))
    n = _threads()
    if n > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(lambda j: evaluate_sample(j[0], j[1][0], j[1][1], cfg), jobs))
    else:
        rows = [evaluate_sample(s, p, q, cfg) for s, (p, q) in jobs]
    return rows, aggregate(rows)


def evaluate(
    params: ModelParams, mcfg: ModelConfig, samples: Sequence[SampleRecord], cfg: RunConfig
) -> tuple[list[dict], dict]:
    return evaluate_scores(samples, predict(params, mcfg, samples, cfg.align), cfg)


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_report(rows: Sequence[dict], agg: dict, out_dir: str | Path, stem: str = "metrics") -> tuple[Path, Path]:
    """Tab-separated table (one row per sample plus a MEAN row) and a JSON-lines log."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / f"{stem}.tsv"
    log = out_dir / f"{stem}.jsonl"
    lines = ["\t".join(("id",) + METRIC_KEYS)]
    lines += ["\t".join([r["id"]] + [_fmt(r.get(k)) for k in METRIC_KEYS]) for r in rows]
    lines.append("\t".join(["MEAN"] + [_fmt(agg.get(k)) for k in METRIC_KEYS]))
    table.write_text("\n".join(lines) + "\n")
    with log.open("w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
        fh.write(json.dumps({"id": "__aggregate__", **agg}, sort_keys=True) + "\n")
    return table, log

"""Training loop: AdamW with decoupled weight decay over the combined objective."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .config import RunConfig, save_config
from .data import SampleRecord, make_batch
from .evaluate import evaluate
from .losses import objective
from .model import ModelConfig, ModelParams, forward, init_params, save_checkpoint, temperatures


class TrainingError(RuntimeError):
    pass


class AdamW:
    def __init__(self, params: ModelParams, lr: float, weight_decay: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.wd, self.betas, self.eps = lr, weight_decay, betas, eps
        self.t = 0
        self.m = {k: np.zeros(v.shape) for k, v in params.items()}
        self.v = {k: np.zeros(v.shape) for k, v in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            upd = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            w = p.data.astype(np.float64)
            if p.ndim >= 2:
                w = w * (1 - self.lr * self.wd)
            p.data = (w - self.lr * upd).astype(p.data.dtype)


def clip_grad_norm(params: ModelParams, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for _, p in params.items() if p.grad is not None))
    if total > max_norm:
        s = max_norm / (total + 1e-12)
        for _, p in params.items():
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(s)
    return total


def batch_loss(params: ModelParams, mcfg: ModelConfig, cfg: RunConfig, batch, rng=None) -> dict:
    out = forward(batch, params, mcfg, rng)
    t_inter, t_intra = temperatures(params)
    return objective(out, batch, cfg.loss_weights(), t_inter, t_intra)


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    model_config: ModelConfig
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = -math.inf


def _val_score(agg: dict) -> float:
    vals = [agg[k] for k in ("f1_video", "f1_sentence") if agg.get(k) is not None]
    return float(np.mean(vals)) if vals else -math.inf


def train(
    cfg: RunConfig,
    train_samples: Sequence[SampleRecord],
    val_samples: Sequence[SampleRecord] = (),
    out_dir: str | Path | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train from scratch; evaluates on ``val_samples`` after every epoch (epoch 0 = initialization).

    When ``out_dir`` is given, writes ``train_log.jsonl`` (flushed per epoch),
    ``final.a2sm``, ``best.a2sm`` and ``config.json``.
    """
    cfg.validate()
    if not train_samples:
        raise TrainingError("no training samples")
    mcfg = cfg.model_config(train_samples[0].frame_features.shape[1], train_samples[0].sentence_features.shape[1])
    params = init_params(mcfg, cfg.seed)
    opt = AdamW(params, cfg.lr, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 1)
    result = TrainResult(params, params.copy(), mcfg)

    log_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_config(cfg, out_dir / "config.json")
        log_fh = (out_dir / "train_log.jsonl").open("w")

    def record(epoch, sums, count, t0):
        rec = {"epoch": epoch}
        for k in ("cls", "inter", "intra", "total"):
            rec[k] = sums[k] / count if count else None
        if val_samples:
            _, agg = evaluate(params, mcfg, val_samples, cfg)
            rec["val"] = agg
            score = _val_score(agg)
            if score > result.best_score:
                result.best_score, result.best_epoch = score, epoch
                result.best_params = params.copy()
        rec["wall_time"] = time.perf_counter() - t0
        result.log.append(rec)
        if log_fh is not None:
            log_fh.write(json.dumps(rec, sort_keys=True) + "\n")
            log_fh.flush()
        if on_epoch is not None:
            on_epoch(rec)

    try:
        t0 = time.perf_counter()
        record(0, {}, 0, t0)
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(train_samples))
            sums = {"cls": 0.0, "inter": 0.0, "intra": 0.0, "total": 0.0}
            for i in range(0, len(order), cfg.batch_size):
                chunk = [train_samples[j] for j in order[i : i + cfg.batch_size]]
                batch = make_batch(chunk, align=cfg.align)
                params.zero_grad()
                with nx.Tape() as tape:
                    terms = batch_loss(params, mcfg, cfg, batch, rng)
                for k, v in terms.items():
                    if not np.isfinite(v.data).all():
                        raise TrainingError(f"non-finite {k} loss at epoch {epoch}")
                nx.backward(terms["total"], tape)
                clip_grad_norm(params, cfg.grad_clip)
                opt.step()
                for k in sums:
                    sums[k] += float(terms[k].data)
            record(epoch, sums, len(train_samples), t0)
    finally:
        if log_fh is not None:
            log_fh.close()

    if out_dir is not None:
        meta = {"align": cfg.align, "epochs": cfg.epochs, "seed": cfg.seed}
        save_checkpoint(out_dir / "final.a2sm", params, mcfg, meta)
        save_checkpoint(out_dir / "best.a2sm", result.best_params, mcfg, {**meta, "best_epoch": result.best_epoch})
    return result

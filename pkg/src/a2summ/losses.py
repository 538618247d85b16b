"""Focal classification loss and the two contrastive objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .data import Batch
from .numerics import Tensor

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.25
    gamma: float = 2.0
    beta: float = 0.1
    lam: float = 3.0
    r: int = 16
    expansion: int = 4

    def validate(self) -> None:
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha={self.alpha} must lie in (0, 1)")
        if self.gamma < 0 or self.beta < 0 or self.lam < 0:
            raise ValueError("gamma, beta and lam must be non-negative")
        if int(self.r) != self.r or self.r < 1:
            raise ValueError(f"r={self.r} must be an integer >= 1")
        if int(self.expansion) != self.expansion or self.expansion < 0:
            raise ValueError(f"expansion={self.expansion} must be an integer >= 0")


@dataclass
class ContrastiveSets:
    pf: np.ndarray
    hnf: np.ndarray
    ps: np.ndarray
    hns: np.ndarray


def focal_loss(scores: Tensor, labels, alpha: float = 0.25, gamma: float = 2.0, valid=None) -> Tensor:
    """Mean focal loss over the last axis.

    ``scores`` are probabilities; a 2-d input gives one value per row, with
    ``valid`` marking the real (non-padding) entries.
    """
    y = np.asarray(labels, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("focal_loss on empty input")
    if valid is None:
        valid = np.ones(scores.shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if not np.all(valid.any(axis=-1)):
        raise ValueError("focal_loss: a row has no valid entries")
    dt = scores.data.dtype
    p = nx.clip(scores, EPS, 1 - EPS)
    one = Tensor(np.ones(1), dtype=dt)
    q = nx.sub(one, p)
    pos = nx.mul(nx.power(q, gamma), nx.scale(nx.log(p), -alpha))
    neg = nx.mul(nx.power(p, gamma), nx.scale(nx.log(q), -(1 - alpha)))
    per = nx.add(nx.mul(pos, Tensor(y, dtype=dt)), nx.mul(neg, Tensor(1 - y, dtype=dt)))
    return nx.masked_mean(per, valid, axis=-1)


def expand_labels(labels: np.ndarray, expansion: int) -> np.ndarray:
    lab = np.asarray(labels).astype(bool)
    out = lab.copy()
    n = lab.size
    for i in np.flatnonzero(lab):
        out[max(0, i - expansion) : min(n, i + expansion + 1)] = True
    return out


def hard_negatives(scores: np.ndarray, labels: np.ndarray, r: int, expansion: int) -> np.ndarray:
    """Top-``floor(n/r)`` scored indices outside the expanded positives (ties to lower index)."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if not labels.any():
        return np.zeros(0, dtype=np.int64)
    k = scores.size // r
    eligible = np.flatnonzero(~expand_labels(labels, expansion))
    order = eligible[np.lexsort((eligible, -scores[eligible]))]
    return np.sort(order[:k]).astype(np.int64)


def select_contrastive_pairs(
    p: np.ndarray, frame_labels: np.ndarray, q: np.ndarray, sentence_labels: np.ndarray, r: int, expansion: int
) -> ContrastiveSets:
    return ContrastiveSets(
        pf=np.flatnonzero(frame_labels).astype(np.int64),
        hnf=hard_negatives(p, frame_labels, r, expansion),
        ps=np.flatnonzero(sentence_labels).astype(np.int64),
        hns=hard_negatives(q, sentence_labels, r, expansion),
    )


def _inv(tau, dtype) -> Tensor:
    if isinstance(tau, Tensor):
        return nx.power(tau, -1.0)
    return Tensor(np.array([1.0 / tau]), dtype=dtype)


def inter_sample_loss(clsv: Tensor, clst: Tensor, tau) -> Tensor:
    """Symmetric InfoNCE over the batch's video/text CLS cosine similarities."""
    B = clsv.shape[0]
    if B == 0:
        raise ValueError("inter_sample_loss needs at least one sample")
    v = nx.l2_normalize(clsv)
    t = nx.l2_normalize(clst)
    S = nx.mul(nx.matmul(v, nx.transpose(t, (1, 0))), _inv(tau, v.data.dtype))
    ar = np.arange(B)
    diag = nx.gather(S, (ar, ar))
    v2t = nx.mean(nx.sub(nx.logsumexp(S, axis=1), diag))
    t2v = nx.mean(nx.sub(nx.logsumexp(S, axis=0), diag))
    return nx.add(v2t, t2v)


def contrastive_term(anchors: Tensor, positives: Tensor, negatives: Tensor | None, tau) -> Tensor:
    """Mean over (anchor, positive) pairs of -log softmax of the positive against all negatives."""
    a, b = anchors.shape[0], positives.shape[0]
    h = 0 if negatives is None else negatives.shape[0]
    dt = anchors.data.dtype
    if a == 0 or b == 0 or h == 0:
        return Tensor(np.zeros(()), dtype=dt)
    inv = _inv(tau, dt)
    pos = nx.mul(nx.matmul(anchors, nx.transpose(positives, (1, 0))), inv)
    neg = nx.mul(nx.matmul(anchors, nx.transpose(negatives, (1, 0))), inv)
    neg = nx.add(nx.reshape(neg, (a, 1, h)), Tensor(np.zeros((a, b, h)), dtype=dt))
    logits = nx.concat([nx.reshape(pos, (a, b, 1)), neg], axis=2)
    return nx.mean(nx.sub(nx.logsumexp(logits, axis=2), pos))


def intra_sample_loss(
    Z: Tensor, b: int, frame_pos: np.ndarray, sentence_pos: np.ndarray, sets: ContrastiveSets, tau
) -> Tensor:
    """Within-sample contrastive loss between key frames and key sentences of sample ``b``.

    ``frame_pos``/``sentence_pos`` map local indices to token positions in ``Z``.
    """

    def pick(pos_map, local):
        local = np.asarray(local, dtype=np.int64)
        if local.size == 0:
            return None
        return nx.l2_normalize(nx.gather(Z, (np.full(local.size, b), pos_map[local])))

    zf, zs = pick(frame_pos, sets.pf), pick(sentence_pos, sets.ps)
    dt = Z.data.dtype
    if zf is None or zs is None:
        return Tensor(np.zeros(()), dtype=dt)
    video = contrastive_term(zf, zs, pick(frame_pos, sets.hnf), tau)
    text = contrastive_term(zs, zf, pick(sentence_pos, sets.hns), tau)
    return nx.add(video, text)


def total_loss(cls, inter, intra, weights: LossWeights):
    return cls + weights.beta * inter + weights.lam * intra


def objective(out, batch: Batch, weights: LossWeights, tau_inter, tau_intra) -> dict[str, Tensor]:
    """Batch objective: per-sample classification and intra terms summed, plus the batch inter term."""
    fl = focal_loss(out.p, batch.frame_labels, weights.alpha, weights.gamma, batch.frame_valid)
    sl = focal_loss(out.q, batch.sentence_labels, weights.alpha, weights.gamma, batch.sentence_valid)
    cls = nx.sum(nx.add(fl, sl))
    dt = out.Z.data.dtype
    intra = Tensor(np.zeros(()), dtype=dt)
    if weights.lam > 0:
        for b in range(batch.size):
            N, M = batch.n_frames[b], batch.n_sentences[b]
            sets = select_contrastive_pairs(
                out.p.data[b, :N], batch.frame_labels[b, :N], out.q.data[b, :M], batch.sentence_labels[b, :M],
                weights.r, weights.expansion,
            )
            intra = nx.add(intra, intra_sample_loss(out.Z, b, batch.frame_pos[b], batch.sentence_pos[b], sets, tau_intra))
    if weights.beta > 0:
        inter = inter_sample_loss(out.clsv, out.clst, tau_inter)
    else:
        inter = Tensor(np.zeros(()), dtype=dt)
    total = nx.add(cls, nx.add(nx.scale(inter, weights.beta), nx.scale(intra, weights.lam)))
    return {"cls": cls, "inter": inter, "intra": intra, "total": total}

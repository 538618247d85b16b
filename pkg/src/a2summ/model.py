"""Alignment-masked multimodal transformer with modality experts and score heads."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterator

import numpy as np

from . import numerics as nx
from .data import Batch, SampleRecord, make_batch
from .numerics import Tensor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    video_dim: int
    text_dim: int
    dim: int = 64
    heads: int = 4
    layers: int = 2
    max_positions: int = 512
    max_segments: int = 128
    dropout: float = 0.1
    ffn_mult: int = 4

    def validate(self) -> None:
        for f in ("video_dim", "text_dim", "dim", "heads", "max_positions", "max_segments", "ffn_mult"):
            if getattr(self, f) <= 0:
                raise ConfigError(f"model config: {f} must be positive")
        if self.layers < 0:
            raise ConfigError("model config: layers must be >= 0")
        if self.dim % self.heads:
            raise ConfigError(f"model config: heads={self.heads} does not divide dim={self.dim}")
        if not 0 <= self.dropout < 1:
            raise ConfigError("model config: dropout must lie in [0, 1)")


TAU_INIT = 0.07
TAU_MIN, TAU_MAX = 0.01, 1.0


class ModelParams:
    """Ordered name -> Tensor mapping of every learnable array."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k, dtype=v.data.dtype) for k, v in self.items()}
        )

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad, name=k, dtype=dtype) for k, v in self.items()})

    def n_values(self) -> int:
        return sum(t.size for t in self.tensors.values())


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    cfg.validate()
    rng = np.random.default_rng(seed)
    C, H = cfg.dim, cfg.dim * cfg.ffn_mult
    p: dict[str, np.ndarray] = {}

    def linear(name, fan_in, fan_out, bias=True):
        bound = 1.0 / np.sqrt(fan_in)
        p[f"{name}.w"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        if bias:
            p[f"{name}.b"] = np.zeros(fan_out)

    linear("video_proj", cfg.video_dim, C)
    linear("text_proj", cfg.text_dim, C)
    p["cls_video"] = rng.normal(0, 0.02, size=C)
    p["cls_text"] = rng.normal(0, 0.02, size=C)
    p["pos_table"] = rng.normal(0, 0.02, size=(cfg.max_positions + 1, C))
    p["seg_table"] = rng.normal(0, 0.02, size=(cfg.max_segments, C))
    for i in range(cfg.layers):
        b = f"blocks.{i}"
        for ln in ("ln1", "ln2"):
            p[f"{b}.{ln}.g"] = np.ones(C)
            p[f"{b}.{ln}.b"] = np.zeros(C)
        for w in ("wq", "wk", "wv", "wo"):
            linear(f"{b}.{w}", C, C, bias=False)
        for expert in ("video_ffn", "text_ffn"):
            linear(f"{b}.{expert}.fc1", C, H)
            linear(f"{b}.{expert}.fc2", H, C)
    linear("frame_head", C, 1)
    linear("sentence_head", C, 1)
    p["log_tau_inter"] = np.array([np.log(TAU_INIT)])
    p["log_tau_intra"] = np.array([np.log(TAU_INIT)])
    return ModelParams({k: Tensor(v.astype(np.float32), requires_grad=True, name=k, dtype=np.float32) for k, v in p.items()})


@dataclass
class ForwardOutput:
    """Batched model outputs; padded entries of ``p``/``q`` are meaningless."""

    Z: Tensor  # [B, P, C]
    frame_logits: Tensor  # [B, Nmax]
    sentence_logits: Tensor  # [B, Mmax]
    p: Tensor  # [B, Nmax]
    q: Tensor  # [B, Mmax]
    clsv: Tensor  # [B, C]
    clst: Tensor  # [B, C]

    def frame_scores(self, batch: Batch, b: int) -> np.ndarray:
        return self.p.data[b, : batch.n_frames[b]]

    def sentence_scores(self, batch: Batch, b: int) -> np.ndarray:
        return self.q.data[b, : batch.n_sentences[b]]


def _const(x: np.ndarray, like: Tensor) -> Tensor:
    return Tensor(x, dtype=like.data.dtype)


def _linear(x: Tensor, params: ModelParams, name: str) -> Tensor:
    y = nx.matmul(x, params[f"{name}.w"])
    bname = f"{name}.b"
    if bname in params.tensors:
        y = nx.add(y, params[bname])
    return y


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return nx.mul(x, _const(keep, x))


def embed_inputs(batch: Batch, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Token embeddings ``[B, P, C]``: projected features plus position and segment terms."""
    B, P = batch.size, batch.pad_len
    if batch.frames.shape[1] > cfg.max_positions or batch.sentences.shape[1] > cfg.max_positions:
        raise ConfigError(
            f"sequence of {max(batch.frames.shape[1], batch.sentences.shape[1])} exceeds max_positions={cfg.max_positions}"
        )
    if batch.seg_ids.max(initial=0) >= cfg.max_segments:
        raise ConfigError(f"segment id {batch.seg_ids.max()} exceeds max_segments={cfg.max_segments}")
    C = cfg.dim
    ref = params["cls_video"]
    F = _linear(_const(batch.frames, ref), params, "video_proj")
    S = _linear(_const(batch.sentences, ref), params, "text_proj")
    zero = _const(np.zeros((B, 1, C)), ref)
    clsv = nx.add(nx.reshape(params["cls_video"], (1, 1, C)), zero)
    clst = nx.add(nx.reshape(params["cls_text"], (1, 1, C)), zero)
    staging = nx.concat([clsv, F, clst, S, zero], axis=1)
    rows = np.repeat(np.arange(B)[:, None], P, axis=1)
    X = nx.gather(staging, (rows, batch.src_index))
    X = nx.add(X, nx.gather(params["pos_table"], batch.pos_ids))
    X = nx.add(X, nx.gather(params["seg_table"], batch.seg_ids))
    return nx.mul(X, _const(batch.token_valid[..., None].astype(np.float64), ref))


def attention(X: Tensor, mask: np.ndarray, params: ModelParams, prefix: str, heads: int) -> Tensor:
    """Multi-head masked self-attention ``D V`` (before the output projection)."""
    B, P, C = X.shape
    d = C // heads

    def split(t):
        return nx.transpose(nx.reshape(t, (B, P, heads, d)), (0, 2, 1, 3))

    Q = split(nx.matmul(X, params[f"{prefix}.wq.w"]))
    K = split(nx.matmul(X, params[f"{prefix}.wk.w"]))
    V = split(nx.matmul(X, params[f"{prefix}.wv.w"]))
    logits = nx.scale(nx.matmul(Q, nx.transpose(K, (0, 1, 3, 2))), 1.0 / np.sqrt(d))
    D = nx.masked_softmax(logits, mask[:, None, :, :])
    out = nx.matmul(D, V)
    return nx.reshape(nx.transpose(out, (0, 2, 1, 3)), (B, P, C))


def _ffn(x: Tensor, params: ModelParams, name: str, rate: float, rng) -> Tensor:
    h = nx.gelu(_linear(x, params, f"{name}.fc1"))
    h = _dropout(h, rate, rng)
    return _linear(h, params, f"{name}.fc2")


def transformer_block(
    X: Tensor,
    batch: Batch,
    params: ModelParams,
    cfg: ModelConfig,
    i: int,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Pre-norm masked attention with residual, then per-modality expert FFN with residual."""
    b = f"blocks.{i}"
    h = nx.layer_norm(X, params[f"{b}.ln1.g"], params[f"{b}.ln1.b"])
    att = nx.matmul(attention(h, batch.attn_mask, params, b, cfg.heads), params[f"{b}.wo.w"])
    X = nx.add(X, _dropout(att, cfg.dropout, rng))
    h = nx.layer_norm(X, params[f"{b}.ln2.g"], params[f"{b}.ln2.b"])
    mv = _const(batch.video_side[..., None].astype(np.float64), X)
    mt = _const(batch.text_side[..., None].astype(np.float64), X)
    fv = nx.mul(_ffn(h, params, f"{b}.video_ffn", cfg.dropout, rng), mv)
    ft = nx.mul(_ffn(h, params, f"{b}.text_ffn", cfg.dropout, rng), mt)
    return nx.add(X, nx.add(fv, ft))


def predict_scores(Z: Tensor, batch: Batch, params: ModelParams) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Frame and sentence logits and sigmoid scores gathered at their token slots."""
    B = batch.size
    rows_f = np.repeat(np.arange(B)[:, None], batch.frame_pos.shape[1], axis=1)
    rows_s = np.repeat(np.arange(B)[:, None], batch.sentence_pos.shape[1], axis=1)
    Zf = nx.gather(Z, (rows_f, batch.frame_pos))
    Zs = nx.gather(Z, (rows_s, batch.sentence_pos))
    lf = nx.reshape(_linear(Zf, params, "frame_head"), Zf.shape[:2])
    ls = nx.reshape(_linear(Zs, params, "sentence_head"), Zs.shape[:2])
    return lf, ls, nx.sigmoid(lf), nx.sigmoid(ls)


def forward(
    batch: Batch,
    params: ModelParams,
    cfg: ModelConfig,
    rng: np.random.Generator | None = None,
) -> ForwardOutput:
    """Full network.  Pass ``rng`` to enable dropout (training mode)."""
    X = embed_inputs(batch, params, cfg)
    for i in range(cfg.layers):
        X = transformer_block(X, batch, params, cfg, i, rng)
    lf, ls, p, q = predict_scores(X, batch, params)
    B = batch.size
    clsv = nx.gather(X, (np.arange(B), np.zeros(B, dtype=np.int64)))
    clst = nx.gather(X, (np.arange(B), batch.clst_pos))
    return ForwardOutput(X, lf, ls, p, q, clsv, clst)


def forward_sample(sample: SampleRecord, params: ModelParams, cfg: ModelConfig, align: bool = True) -> ForwardOutput:
    return forward(make_batch([sample], align=align), params, cfg)


def temperatures(params: ModelParams) -> tuple[Tensor, Tensor]:
    """Clamped (inter, intra) temperatures from their log parameters."""
    t_inter = nx.clip(nx.exp(params["log_tau_inter"]), TAU_MIN, TAU_MAX)
    t_intra = nx.clip(nx.exp(params["log_tau_intra"]), TAU_MIN, TAU_MAX)
    return t_inter, t_intra


# checkpoint format --------------------------------------------------------------

CKPT_MAGIC = b"A2SM"
CKPT_VERSION = 1


def save_checkpoint(path: str | Path, params: ModelParams, cfg: ModelConfig, meta: dict | None = None) -> None:
    """Write ``A2SM`` header, config JSON, tensor manifest, then raw little-endian float32 data."""
    header = json.dumps({"config": asdict(cfg), "meta": meta or {}}, sort_keys=True, separators=(",", ":")).encode()
    names = list(params)
    arrays = [params[n].data.astype("<f4") for n in names]
    manifest = [struct.pack("<I", len(names))]
    offset = 0
    for n, a in zip(names, arrays):
        nb = n.encode()
        manifest.append(struct.pack("<I", len(nb)) + nb + struct.pack("<I", a.ndim))
        manifest.append(struct.pack(f"<{a.ndim}I", *a.shape))
        manifest.append(struct.pack("<Q", offset))
        offset += a.nbytes
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(header)), header, *manifest]
    parts += [a.tobytes() for a in arrays]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, ModelConfig, dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise ConfigError(f"checkpoint {path}: bad magic {buf[:4]!r}")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != CKPT_VERSION:
        raise ConfigError(f"checkpoint {path}: unsupported version {version}")
    off = 12
    head = json.loads(buf[off : off + hlen].decode())
    off += hlen
    known = {f.name for f in fields(ModelConfig)}
    cfg = ModelConfig(**{k: v for k, v in head["config"].items() if k in known})
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    entries = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off : off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<I", buf, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        (data_off,) = struct.unpack_from("<Q", buf, off)
        off += 8
        entries.append((name, shape, data_off))
    tensors = {}
    for name, shape, data_off in entries:
        n = int(np.prod(shape))
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=off + data_off).reshape(shape).astype(np.float32)
        tensors[name] = Tensor(arr, requires_grad=True, name=name, dtype=np.float32)
    return ModelParams(tensors), cfg, head.get("meta", {})

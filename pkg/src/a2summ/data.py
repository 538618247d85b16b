"""Sample records, on-disk dataset format, synthetic generator and batching.

Dataset layout on disk::

    <root>/manifest.jsonl      header line, then one {"id", "path", "split"} per sample
    <root>/samples/<id>.a2ds   one binary record per sample

The binary record layout is documented in ``docs/formats.md``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .alignmask import AlignmentError, SegmentWindow, TokenLayout, build_mask, position_ids, segment_ids, validate_windows

MAGIC = b"A2DS"
VERSION = 1
SPLITS = ("train", "val", "test")

FLAG_ANNOTATORS = 1
FLAG_SEGMENTATION = 2
FLAG_TEXT = 4
FLAG_SUMMARY_TEXT = 8

# magic, version, N, M, D_v, D_t, flags, n_windows, n_annotators, n_boundaries
_HEADER = struct.Struct("<4s9I")


class DataError(ValueError):
    pass


@dataclass
class SampleRecord:
    id: str
    frame_features: np.ndarray
    sentence_features: np.ndarray
    windows: list[SegmentWindow]
    frame_labels: np.ndarray
    sentence_labels: np.ndarray
    annotator_scores: np.ndarray | None = None
    segmentation: np.ndarray | None = None
    sentences_text: list[list[str]] | None = None
    gt_summary_text: list[str] | None = None

    @property
    def n_frames(self) -> int:
        return self.frame_features.shape[0]

    @property
    def n_sentences(self) -> int:
        return self.sentence_features.shape[0]

    @property
    def layout(self) -> TokenLayout:
        return TokenLayout(self.n_frames, self.n_sentences)

    def validate(self, video_dim: int | None = None, text_dim: int | None = None) -> None:
        def fail(fieldname, msg):
            raise DataError(f"sample {self.id!r}: field {fieldname}: {msg}")

        F, S = self.frame_features, self.sentence_features
        if F.ndim != 2:
            fail("frame_features", f"expected 2-d array, got shape {F.shape}")
        if S.ndim != 2:
            fail("sentence_features", f"expected 2-d array, got shape {S.shape}")
        if video_dim is not None and F.shape[1] != video_dim:
            fail("frame_features", f"width {F.shape[1]} != declared {video_dim}")
        if text_dim is not None and S.shape[1] != text_dim:
            fail("sentence_features", f"width {S.shape[1]} != declared {text_dim}")
        if not np.all(np.isfinite(F)):
            fail("frame_features", "non-finite values")
        if not np.all(np.isfinite(S)):
            fail("sentence_features", "non-finite values")
        N, M = self.n_frames, self.n_sentences
        for name, lab, n in (("frame_labels", self.frame_labels, N), ("sentence_labels", self.sentence_labels, M)):
            if lab.shape != (n,):
                fail(name, f"shape {lab.shape} != ({n},)")
            if not np.all((lab == 0) | (lab == 1)):
                fail(name, "labels must be 0/1")
        try:
            validate_windows(self.layout, self.windows)
        except AlignmentError as e:
            fail("windows", str(e))
        if self.annotator_scores is not None:
            A = self.annotator_scores
            if A.ndim != 2 or A.shape[1] != N:
                fail("annotator_scores", f"shape {A.shape} incompatible with N={N}")
            if not np.all(np.isfinite(A)):
                fail("annotator_scores", "non-finite values")
        if self.segmentation is not None:
            b = self.segmentation
            if b.ndim != 1 or b.size < 2 or b[0] != 0 or b[-1] != N or np.any(np.diff(b) <= 0):
                fail("segmentation", f"boundaries must ascend strictly from 0 to {N}")
        if self.sentences_text is not None and len(self.sentences_text) != M:
            fail("sentences_text", f"{len(self.sentences_text)} sentences for M={M}")


# binary record -------------------------------------------------------------------


def write_sample(path: Path, rec: SampleRecord) -> None:
    N, M = rec.n_frames, rec.n_sentences
    flags = 0
    A = 0
    nb = 0
    if rec.annotator_scores is not None:
        flags |= FLAG_ANNOTATORS
        A = rec.annotator_scores.shape[0]
    if rec.segmentation is not None:
        flags |= FLAG_SEGMENTATION
        nb = rec.segmentation.size
    if rec.sentences_text is not None:
        flags |= FLAG_TEXT
    if rec.gt_summary_text is not None:
        flags |= FLAG_SUMMARY_TEXT
    parts = [
        _HEADER.pack(
            MAGIC, VERSION, N, M, rec.frame_features.shape[1], rec.sentence_features.shape[1],
            flags, len(rec.windows), A, nb,
        ),
        rec.frame_features.astype("<f4").tobytes(),
        rec.sentence_features.astype("<f4").tobytes(),
    ]
    if A:
        parts.append(rec.annotator_scores.astype("<f4").tobytes())
    win = np.array([[w.sentence_index, w.t_s, w.t_e] for w in rec.windows], dtype="<i4").reshape(-1, 3)
    parts += [
        win.tobytes(),
        rec.frame_labels.astype("<i4").tobytes(),
        rec.sentence_labels.astype("<i4").tobytes(),
    ]
    if nb:
        parts.append(rec.segmentation.astype("<i4").tobytes())
    if flags & (FLAG_TEXT | FLAG_SUMMARY_TEXT):
        blob = json.dumps(
            {"sentences": rec.sentences_text, "summary": rec.gt_summary_text}, separators=(",", ":")
        ).encode()
        parts += [struct.pack("<I", len(blob)), blob]
    Path(path).write_bytes(b"".join(parts))


def read_sample(path: Path, sample_id: str) -> SampleRecord:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise DataError(f"sample {sample_id!r}: file {path}: truncated header")
    magic, version, N, M, Dv, Dt, flags, nw, A, nb = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DataError(f"sample {sample_id!r}: file {path}: bad magic {magic!r}")
    if version != VERSION:
        raise DataError(f"sample {sample_id!r}: file {path}: unsupported version {version}")
    off = _HEADER.size

    def take(dtype, count, shape):
        nonlocal off
        nbytes = np.dtype(dtype).itemsize * count
        if off + nbytes > len(buf):
            raise DataError(f"sample {sample_id!r}: file {path}: truncated body")
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(shape).copy()
        off += nbytes
        return arr

    F = take("<f4", N * Dv, (N, Dv)).astype(np.float32)
    S = take("<f4", M * Dt, (M, Dt)).astype(np.float32)
    ann = take("<f4", A * N, (A, N)).astype(np.float32) if flags & FLAG_ANNOTATORS else None
    win = take("<i4", nw * 3, (nw, 3))
    fl = take("<i4", N, (N,)).astype(np.int64)
    sl = take("<i4", M, (M,)).astype(np.int64)
    seg = take("<i4", nb, (nb,)).astype(np.int64) if flags & FLAG_SEGMENTATION else None
    sentences = summary = None
    if flags & (FLAG_TEXT | FLAG_SUMMARY_TEXT):
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        meta = json.loads(buf[off : off + n].decode())
        off += n
        sentences, summary = meta["sentences"], meta["summary"]
    if off != len(buf):
        raise DataError(f"sample {sample_id!r}: file {path}: {len(buf) - off} trailing bytes")
    windows = [SegmentWindow(int(k), int(s), int(e)) for k, s, e in win]
    return SampleRecord(sample_id, F, S, windows, fl, sl, ann, seg, sentences, summary)


# manifest ------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    id: str
    path: str
    split: str


@dataclass
class Manifest:
    dataset: str
    video_dim: int
    text_dim: int
    entries: list[ManifestEntry] = field(default_factory=list)

    def write(self, path: Path) -> None:
        lines = [json.dumps({"dataset": self.dataset, "video_dim": self.video_dim, "text_dim": self.text_dim, "version": VERSION})]
        lines += [json.dumps({"id": e.id, "path": e.path, "split": e.split}) for e in self.entries]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path: Path) -> "Manifest":
        text = Path(path).read_text().splitlines()
        rows = [json.loads(line) for line in text if line.strip()]
        if not rows:
            raise DataError(f"manifest {path}: empty")
        head = rows[0]
        try:
            m = cls(head["dataset"], int(head["video_dim"]), int(head["text_dim"]))
        except KeyError as e:
            raise DataError(f"manifest {path}: header missing {e}") from None
        seen = set()
        for row in rows[1:]:
            e = ManifestEntry(str(row["id"]), str(row["path"]), str(row["split"]))
            if e.id in seen:
                raise DataError(f"manifest {path}: duplicate id {e.id!r}")
            if e.split not in SPLITS:
                raise DataError(f"manifest {path}: sample {e.id!r}: unknown split {e.split!r}")
            seen.add(e.id)
            m.entries.append(e)
        return m


def manifest_path(root_or_manifest: str | Path) -> Path:
    p = Path(root_or_manifest)
    return p / "manifest.jsonl" if p.is_dir() else p


def load_and_validate(manifest: str | Path, splits: Sequence[str] | None = None) -> list[SampleRecord]:
    """Load every sample listed in the manifest (optionally only some splits) and validate it."""
    mpath = manifest_path(manifest)
    if not mpath.exists():
        raise DataError(f"manifest {mpath}: missing file")
    m = Manifest.read(mpath)
    out = []
    for e in m.entries:
        if splits is not None and e.split not in splits:
            continue
        p = mpath.parent / e.path
        if not p.exists():
            raise DataError(f"sample {e.id!r}: field path: missing file {p}")
        rec = read_sample(p, e.id)
        rec.validate(m.video_dim, m.text_dim)
        out.append(rec)
    return out


def load_splits(manifest: str | Path) -> dict[str, list[str]]:
    m = Manifest.read(manifest_path(manifest))
    out: dict[str, list[str]] = {s: [] for s in SPLITS}
    for e in m.entries:
        out[e.split].append(e.id)
    return out


def write_dataset(root: Path, name: str, records: Sequence[SampleRecord], splits: Sequence[str]) -> Path:
    root = Path(root)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    m = Manifest(name, records[0].frame_features.shape[1], records[0].sentence_features.shape[1])
    for rec, split in zip(records, splits):
        rel = f"samples/{rec.id}.a2ds"
        write_sample(root / rel, rec)
        m.entries.append(ManifestEntry(rec.id, rel, split))
    m.write(root / "manifest.jsonl")
    return root / "manifest.jsonl"


# synthetic generator --------------------------------------------------------------


@dataclass
class GenConfig:
    name: str = "synthetic"
    n_train: int = 200
    n_val: int = 50
    n_test: int = 50
    n_min: int = 40
    n_max: int = 80
    m_min: int = 6
    m_max: int = 12
    video_dim: int = 64
    text_dim: int = 48
    latent_dim: int = 16
    n_topics: int = 8
    key_fraction: float = 0.3
    noise: float = 0.1
    salient_strength: float = 1.0
    salient_global: float = 0.5
    one_sided: float = 0.5
    mismatch: float = 0.0
    n_annotators: int = 3
    annotator_noise: float = 0.1
    gaps: bool = False
    words_per_sentence: int = 8
    vocab_size: int = 400

    @property
    def samples(self) -> int:
        return self.n_train + self.n_val + self.n_test

    def validate(self) -> None:
        if self.samples <= 0:
            raise DataError("gen config: samples must be positive")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise DataError("gen config: split sizes must be non-negative")
        if not 0 < self.key_fraction <= 1:
            raise DataError(f"gen config: key_fraction {self.key_fraction} outside (0, 1]")
        if not 1 <= self.m_min <= self.m_max:
            raise DataError("gen config: need 1 <= m_min <= m_max")
        if not self.m_max <= self.n_min <= self.n_max:
            raise DataError("gen config: need m_max <= n_min <= n_max (one frame per window at least)")
        if self.noise < 0 or self.annotator_noise < 0:
            raise DataError("gen config: noise must be non-negative")
        if not all(0 <= v <= 1 for v in (self.salient_global, self.one_sided, self.mismatch)):
            raise DataError("gen config: salient_global, one_sided and mismatch must lie in [0, 1]")
        if self.mismatch > 0 and self.n_topics < 2:
            raise DataError("gen config: mismatch needs at least 2 topics")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def gen_synthetic(cfg: GenConfig, seed: int) -> list[tuple[SampleRecord, str]]:
    """Draw a dataset of aligned video/text samples with planted key windows.

    Each window gets a topic latent; key windows additionally get a salient
    direction that is a mix of a dataset-wide direction and a per-sample one.
    With probability ``one_sided`` a key window shows the salient signal in only
    one (random) modality, so recovering it from the other side needs the
    aligned counterpart.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    d = cfg.latent_dim
    proj_v = rng.normal(size=(d, cfg.video_dim)) / np.sqrt(d)
    proj_t = rng.normal(size=(d, cfg.text_dim)) / np.sqrt(d)
    topics = _unit(rng.normal(size=(cfg.n_topics, d)))
    global_dir = _unit(rng.normal(size=d))
    words = _vocabulary(rng, cfg.vocab_size)
    topic_text = [list(rng.choice(words, size=cfg.words_per_sentence)) for _ in range(cfg.n_topics)]

    # shot boundaries come from their own stream so they never perturb the features
    shot_rng = np.random.default_rng([seed, 1])
    splits = ["train"] * cfg.n_train + ["val"] * cfg.n_val + ["test"] * cfg.n_test
    out = []
    for idx, split in enumerate(splits):
        N = int(rng.integers(cfg.n_min, cfg.n_max + 1))
        M = int(rng.integers(cfg.m_min, cfg.m_max + 1))
        cuts = np.sort(rng.choice(np.arange(1, N), size=M - 1, replace=False))
        bounds = np.concatenate([[0], cuts, [N]])
        windows = []
        for k in range(M):
            s, e = int(bounds[k]), int(bounds[k + 1])
            if cfg.gaps and e - s >= 3:
                s += int(rng.integers(0, 2))
                e -= int(rng.integers(0, 2))
            windows.append(SegmentWindow(k, s, e))
        n_key = max(1, int(round(cfg.key_fraction * M)))
        key = np.zeros(M, dtype=bool)
        key[rng.choice(M, size=n_key, replace=False)] = True
        local_dir = _unit(rng.normal(size=d))
        salient = _unit(cfg.salient_global * global_dir + (1 - cfg.salient_global) * local_dir)
        topic_ids = rng.integers(0, cfg.n_topics, size=M)

        frame_lat = np.zeros((N, d))
        sent_lat = np.zeros((M, d))
        frame_labels = np.zeros(N, dtype=np.int64)
        for w in windows:
            base = topics[topic_ids[w.sentence_index]]
            fv = tv = base
            if cfg.mismatch > 0 and not key[w.sentence_index] and rng.random() < cfg.mismatch:
                other = (topic_ids[w.sentence_index] + rng.integers(1, cfg.n_topics)) % cfg.n_topics
                fv = topics[other]
            if key[w.sentence_index]:
                boost = cfg.salient_strength * salient
                side = rng.random()
                show_v = show_t = True
                if side < cfg.one_sided:
                    show_v, show_t = (True, False) if rng.random() < 0.5 else (False, True)
                fv = base + boost if show_v else base
                tv = base + boost if show_t else base
                frame_labels[w.t_s : w.t_e] = 1
            frame_lat[w.t_s : w.t_e] = fv
            sent_lat[w.sentence_index] = tv
        frame_lat += cfg.noise * rng.normal(size=frame_lat.shape)
        sent_lat += cfg.noise * rng.normal(size=sent_lat.shape)
        F = (frame_lat @ proj_v).astype(np.float32)
        S = (sent_lat @ proj_t).astype(np.float32)

        ann = np.clip(frame_labels[None, :] + cfg.annotator_noise * rng.normal(size=(cfg.n_annotators, N)), 0, 1)
        sentences = [list(topic_text[t]) for t in topic_ids]
        summary = [tok for k in range(M) if key[k] for tok in sentences[k]]
        rec = SampleRecord(
            id=f"{cfg.name}_{idx:05d}",
            frame_features=F,
            sentence_features=S,
            windows=windows,
            frame_labels=frame_labels,
            sentence_labels=key.astype(np.int64),
            annotator_scores=ann.astype(np.float32) if cfg.n_annotators else None,
            segmentation=_shots(bounds, shot_rng),
            sentences_text=sentences,
            gt_summary_text=summary,
        )
        rec.validate(cfg.video_dim, cfg.text_dim)
        out.append((rec, split))
    return out


def _shots(bounds: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Split every window span into shots of 2-4 frames (the last one may be shorter)."""
    cuts = [0]
    for a, b in zip(bounds[:-1], bounds[1:]):
        pos = int(a)
        while pos < b:
            pos = min(int(b), pos + int(rng.integers(2, 5)))
            cuts.append(pos)
    return np.array(cuts, dtype=np.int64)


def _vocabulary(rng: np.random.Generator, size: int) -> list[str]:
    consonants, vowels = "bcdfghklmnprstvz", "aeiou"
    seen: set[str] = set()
    words = []
    while len(words) < size:
        n = int(rng.integers(2, 4))
        w = "".join(consonants[rng.integers(len(consonants))] + vowels[rng.integers(len(vowels))] for _ in range(n))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def generate_dataset(cfg: GenConfig, seed: int, root: str | Path) -> Path:
    pairs = gen_synthetic(cfg, seed)
    return write_dataset(Path(root), cfg.name, [r for r, _ in pairs], [s for _, s in pairs])


# batching ------------------------------------------------------------------------


@dataclass
class Batch:
    ids: list[str]
    frames: np.ndarray  # [B, Nmax, D_v]
    sentences: np.ndarray  # [B, Mmax, D_t]
    n_frames: np.ndarray
    n_sentences: np.ndarray
    attn_mask: np.ndarray  # [B, P, P]
    token_valid: np.ndarray  # [B, P]
    video_side: np.ndarray  # [B, P]
    text_side: np.ndarray  # [B, P]
    pos_ids: np.ndarray  # [B, P]
    seg_ids: np.ndarray  # [B, P]
    src_index: np.ndarray  # [B, P] into [CLSV, F(Nmax), CLST, S(Mmax), zero]
    frame_pos: np.ndarray  # [B, Nmax]
    sentence_pos: np.ndarray  # [B, Mmax]
    clst_pos: np.ndarray  # [B]
    frame_valid: np.ndarray
    sentence_valid: np.ndarray
    frame_labels: np.ndarray
    sentence_labels: np.ndarray

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def pad_len(self) -> int:
        return self.attn_mask.shape[1]


def make_batch(
    samples: Sequence[SampleRecord],
    pad_len: int | None = None,
    pad_frames: int | None = None,
    pad_sentences: int | None = None,
    align: bool = True,
) -> Batch:
    """Pad samples to common sizes and build per-sample masks and index maps.

    ``align=False`` replaces the alignment mask with global attention and drops
    segment ids (every token gets the "no segment" id).
    """
    if not samples:
        raise DataError("make_batch needs at least one sample")
    B = len(samples)
    Nmax = max(max(s.n_frames for s in samples), pad_frames or 0)
    Mmax = max(max(s.n_sentences for s in samples), pad_sentences or 0)
    P = max(max(s.n_frames + s.n_sentences + 2 for s in samples), pad_len or 0)
    Dv = samples[0].frame_features.shape[1]
    Dt = samples[0].sentence_features.shape[1]
    zero_row = Nmax + Mmax + 2

    frames = np.zeros((B, Nmax, Dv), dtype=np.float32)
    sentences = np.zeros((B, Mmax, Dt), dtype=np.float32)
    attn = np.zeros((B, P, P), dtype=bool)
    token_valid = np.zeros((B, P), dtype=bool)
    video_side = np.zeros((B, P), dtype=bool)
    text_side = np.zeros((B, P), dtype=bool)
    pos = np.zeros((B, P), dtype=np.int64)
    seg = np.zeros((B, P), dtype=np.int64)
    src = np.full((B, P), zero_row, dtype=np.int64)
    frame_pos = np.zeros((B, Nmax), dtype=np.int64)
    sent_pos = np.zeros((B, Mmax), dtype=np.int64)
    clst_pos = np.zeros(B, dtype=np.int64)
    fvalid = np.zeros((B, Nmax), dtype=bool)
    svalid = np.zeros((B, Mmax), dtype=bool)
    flab = np.zeros((B, Nmax), dtype=np.int64)
    slab = np.zeros((B, Mmax), dtype=np.int64)

    for b, s in enumerate(samples):
        N, M = s.n_frames, s.n_sentences
        T = N + M + 2
        lay = TokenLayout(N, M, P)
        frames[b, :N] = s.frame_features
        sentences[b, :M] = s.sentence_features
        attn[b] = build_mask(lay, s.windows, align=align)
        token_valid[b, :T] = True
        v, t = lay.modality_mask()
        video_side[b], text_side[b] = v, t
        pos[b, :T] = position_ids(lay)
        if align:
            seg[b, :T] = segment_ids(lay, s.windows)
        src[b, 0] = 0
        src[b, 1 : N + 1] = 1 + np.arange(N)
        src[b, N + 1] = Nmax + 1
        src[b, N + 2 : T] = Nmax + 2 + np.arange(M)
        frame_pos[b, :N] = lay.frame_positions
        sent_pos[b, :M] = lay.sentence_positions
        clst_pos[b] = lay.clst
        fvalid[b, :N] = True
        svalid[b, :M] = True
        flab[b, :N] = s.frame_labels
        slab[b, :M] = s.sentence_labels

    return Batch(
        ids=[s.id for s in samples],
        frames=frames,
        sentences=sentences,
        n_frames=np.array([s.n_frames for s in samples]),
        n_sentences=np.array([s.n_sentences for s in samples]),
        attn_mask=attn,
        token_valid=token_valid,
        video_side=video_side,
        text_side=text_side,
        pos_ids=pos,
        seg_ids=seg,
        src_index=src,
        frame_pos=frame_pos,
        sentence_pos=sent_pos,
        clst_pos=clst_pos,
        frame_valid=fvalid,
        sentence_valid=svalid,
        frame_labels=flab,
        sentence_labels=slab,
    )

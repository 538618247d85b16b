"""Token layout, segment ids and the alignment-guided attention mask.

Global token order for one sample is ``[CLSV, F_0..F_{N-1}, CLST, S_0..S_{M-1}]``
followed by padding up to ``pad_len``.  Windows are half-open ``[t_s, t_e)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentWindow:
    sentence_index: int
    t_s: int
    t_e: int


@dataclass(frozen=True)
class TokenLayout:
    n_frames: int
    n_sentences: int
    pad_len: int | None = None

    def __post_init__(self):
        if self.n_frames < 0 or self.n_sentences < 0:
            raise AlignmentError("negative sequence length")
        if self.pad_len is None:
            object.__setattr__(self, "pad_len", self.length)
        elif self.pad_len < self.length:
            raise AlignmentError(f"pad_len {self.pad_len} < real length {self.length}")

    @property
    def length(self) -> int:
        return self.n_frames + self.n_sentences + 2

    @property
    def clsv(self) -> int:
        return 0

    @property
    def clst(self) -> int:
        return self.n_frames + 1

    def frame(self, i: int) -> int:
        return 1 + i

    def sentence(self, k: int) -> int:
        return self.n_frames + 2 + k

    @property
    def frame_positions(self) -> np.ndarray:
        return np.arange(1, self.n_frames + 1)

    @property
    def sentence_positions(self) -> np.ndarray:
        return np.arange(self.n_frames + 2, self.length)

    def describe(self, pos: int) -> tuple[str, int, bool] | None:
        """Map a global position to ``(modality, local index, is_cls)``; None for padding."""
        if pos < 0 or pos >= self.pad_len:
            raise IndexError(pos)
        if pos >= self.length:
            return None
        if pos == 0:
            return ("video", -1, True)
        if pos <= self.n_frames:
            return ("video", pos - 1, False)
        if pos == self.clst:
            return ("text", -1, True)
        return ("text", pos - self.n_frames - 2, False)

    def position(self, modality: str, local: int, is_cls: bool) -> int:
        if modality == "video":
            return self.clsv if is_cls else self.frame(local)
        return self.clst if is_cls else self.sentence(local)

    def modality_mask(self) -> tuple[np.ndarray, np.ndarray]:
        """Boolean (video-side, text-side) membership over ``pad_len`` positions."""
        video = np.zeros(self.pad_len, dtype=bool)
        text = np.zeros(self.pad_len, dtype=bool)
        video[: self.n_frames + 1] = True
        text[self.n_frames + 1 : self.length] = True
        return video, text


def validate_windows(layout: TokenLayout, windows: Iterable[SegmentWindow]) -> None:
    prev = -1
    for w in windows:
        if not 0 <= w.sentence_index < layout.n_sentences:
            raise AlignmentError(f"window sentence_index {w.sentence_index} outside [0, {layout.n_sentences})")
        if not 0 <= w.t_s <= w.t_e <= layout.n_frames:
            raise AlignmentError(
                f"window for sentence {w.sentence_index} is [{w.t_s}, {w.t_e}), outside [0, {layout.n_frames}]"
            )
        if w.t_s < prev:
            raise AlignmentError("windows must be sorted by start frame")
        prev = w.t_s


def build_mask(layout: TokenLayout, windows: Sequence[SegmentWindow], align: bool = True) -> np.ndarray:
    """Boolean ``pad_len x pad_len`` attention permission matrix.

    With ``align=False`` every real token may attend to every real token
    (plain global attention), which is the no-alignment ablation.
    """
    validate_windows(layout, windows)
    P, T, N = layout.pad_len, layout.length, layout.n_frames
    mask = np.zeros((P, P), dtype=bool)
    if not align:
        mask[:T, :T] = True
        return mask
    mask[: N + 1, : N + 1] = True
    mask[N + 1 : T, N + 1 : T] = True
    for w in windows:
        s = layout.sentence(w.sentence_index)
        mask[s, 1 + w.t_s : 1 + w.t_e] = True
        mask[1 + w.t_s : 1 + w.t_e, s] = True
    return mask


def segment_ids(layout: TokenLayout, windows: Sequence[SegmentWindow]) -> np.ndarray:
    """Segment id per real token (length ``layout.length``).

    Sentence k has id k+1; a frame takes the id of the lowest-index window
    covering it, or 0 when uncovered; CLS tokens are 0.
    """
    validate_windows(layout, windows)
    ids = np.zeros(layout.length, dtype=np.int64)
    frame_ids = np.zeros(layout.n_frames, dtype=np.int64)
    for w in sorted(windows, key=lambda w: w.sentence_index, reverse=True):
        frame_ids[w.t_s : w.t_e] = w.sentence_index + 1
    ids[1 : layout.n_frames + 1] = frame_ids
    ids[layout.n_frames + 2 :] = np.arange(1, layout.n_sentences + 1)
    return ids


def position_ids(layout: TokenLayout) -> np.ndarray:
    """Per-modality local positions: CLS at 0, frames 1..N, sentences 1..M."""
    ids = np.zeros(layout.length, dtype=np.int64)
    ids[1 : layout.n_frames + 1] = np.arange(1, layout.n_frames + 1)
    ids[layout.n_frames + 2 :] = np.arange(1, layout.n_sentences + 1)
    return ids

"""Per-window diarization: binarize posteriors, find local speakers, emit segments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .backend import Backend
from .features import Window


@dataclass(frozen=True)
class LocalSpeaker:
    window_index: int
    slot: int
    active_frames: tuple[int, ...]
    nonoverlap_frames: tuple[int, ...]
    used_overlap_fallback: bool = False

    @property
    def key(self) -> tuple[int, int]:
        return (self.window_index, self.slot)


@dataclass(frozen=True)
class Segment:
    speaker: Hashable
    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"segment start {self.start} must precede end {self.end}")


@dataclass
class LocalResult:
    window: Window
    posteriors: np.ndarray
    labels: np.ndarray
    speakers: list[LocalSpeaker] = field(default_factory=list)


def median_filter_1d(x: np.ndarray, length: int) -> np.ndarray:
    """Running median along axis 0 with edge replication."""
    if length == 1 or len(x) == 0:
        return x.copy()
    half = length // 2
    padded = np.pad(x, [(half, half)] + [(0, 0)] * (x.ndim - 1), mode="edge")
    view = np.lib.stride_tricks.sliding_window_view(padded, length, axis=0)
    return np.median(view, axis=-1).astype(x.dtype)


def binarize_and_filter(posteriors: np.ndarray, threshold: float = 0.5, median_len: int = 11) -> np.ndarray:
    """Threshold (active iff p >= threshold) then median-filter each slot."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    if median_len < 1 or median_len % 2 == 0:
        raise ValueError("median_len must be a positive odd integer")
    labels = (np.asarray(posteriors) >= threshold).astype(np.int8)
    return median_filter_1d(labels, median_len)


def detect_local_speakers(labels: np.ndarray, window_index: int = 0, min_nonoverlap: int = 3) -> list[LocalSpeaker]:
    """One :class:`LocalSpeaker` per slot with any activity.

    A speaker whose overlap-free frames number fewer than ``min_nonoverlap``
    falls back to all of its active frames.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    overlapped = labels.sum(axis=1) >= 2
    speakers = []
    for slot in range(labels.shape[1]):
        active = np.flatnonzero(labels[:, slot])
        if active.size == 0:
            continue
        clean = active[~overlapped[active]]
        fallback = clean.size < min_nonoverlap
        speakers.append(LocalSpeaker(
            window_index,
            slot,
            tuple(active.tolist()),
            tuple((active if fallback else clean).tolist()),
            fallback,
        ))
    return speakers


def segments_from_labels(
    labels: np.ndarray, window_start_s: float, frame_period: float, window_index: int | None = None
) -> list[Segment]:
    """Maximal runs of activity per slot; frame t spans [t*fp, (t+1)*fp) past the window start.

    Speakers are keyed by slot, or by ``(window_index, slot)`` when a window
    index is supplied.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    segments = []
    for slot in range(labels.shape[1]):
        col = np.concatenate([[0], labels[:, slot].astype(np.int8), [0]])
        edges = np.diff(col)
        starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
        key = slot if window_index is None else (window_index, slot)
        for s, e in zip(starts, ends):
            segments.append(Segment(key, window_start_s + s * frame_period, window_start_s + e * frame_period))
    segments.sort(key=lambda seg: (seg.start, str(seg.speaker)))
    return segments


def run_local(
    windows: Sequence[Window],
    backend: Backend,
    threshold: float = 0.5,
    median_len: int = 11,
    min_nonoverlap: int = 3,
) -> list[LocalResult]:
    """Local EEND over every window, in window order."""
    posteriors = backend.infer_batch([w.features for w in windows])
    results = []
    for window, post in zip(windows, posteriors):
        labels = binarize_and_filter(post, threshold, median_len)
        speakers = detect_local_speakers(labels, window.index, min_nonoverlap)
        results.append(LocalResult(window, post, labels, speakers))
    return results

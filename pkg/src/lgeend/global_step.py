"""Cross-window speaker rescoring and affinity construction.

Every speaker found in one window is paired with every speaker found in a
later window. The two speakers' frames are concatenated into a new chunk and
passed back through the backend; the cosine similarity of the two halves'
mean posteriors is the pair's affinity. Speakers sharing a window get zero
affinity (cannot-link).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .backend import Backend, padded_length
from .features import FeatureSequence, concat_sequences
from .local_step import LocalResult, LocalSpeaker

SpeakerKey = tuple[int, int]
PairKey = tuple[SpeakerKey, SpeakerKey]


class GlobalStepError(RuntimeError):
    def __init__(self, pair: PairKey, cause: Exception):
        super().__init__(f"scoring pair {pair} failed: {cause}")
        self.pair = pair


# ---------------------------------------------------------------------------
# Frame selection strategies


@dataclass(frozen=True)
class All:
    def select(self, frames, key=()):
        return list(frames)

    def __str__(self):
        return "all"


@dataclass(frozen=True)
class FirstN:
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("N must be >= 1")

    def select(self, frames, key=()):
        return list(frames[: self.n])

    def __str__(self):
        return f"first:{self.n}"


@dataclass(frozen=True)
class Subsample:
    factor: int

    def __post_init__(self):
        if self.factor < 1:
            raise ValueError("factor must be >= 1")

    def select(self, frames, key=()):
        return list(frames[:: self.factor])

    def __str__(self):
        return f"sub:{self.factor}"


@dataclass(frozen=True)
class RandomN:
    """Up to ``n`` frames drawn without replacement, returned in temporal order.

    The generator is seeded from ``seed`` and the speaker key, so a speaker's
    selection does not depend on which pair or batch asks for it.
    """

    n: int
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("N must be >= 1")

    def select(self, frames, key=()):
        frames = list(frames)
        if len(frames) <= self.n:
            return frames
        rng = np.random.default_rng([self.seed, *key])
        picked = np.sort(rng.choice(len(frames), size=self.n, replace=False))
        return [frames[i] for i in picked]

    def __str__(self):
        return f"random:{self.n}"


FrameSelectStrategy = Union[All, FirstN, Subsample, RandomN]


def parse_strategy(text: str, seed: int = 0) -> FrameSelectStrategy:
    """Parse ``all``, ``first:N``, ``sub:F`` or ``random:N``."""
    kind, _, arg = text.strip().lower().partition(":")
    if kind == "all" and not arg:
        return All()
    if kind == "first":
        return FirstN(int(arg))
    if kind == "sub":
        return Subsample(int(arg))
    if kind == "random":
        return RandomN(int(arg), seed)
    raise ValueError(f"unknown frame selection {text!r}")


def select_frames(frames: Sequence[int], strategy: FrameSelectStrategy, key: tuple = ()) -> list[int]:
    if len(frames) == 0:
        raise ValueError("no frames to select from")
    return strategy.select(frames, key)


# ---------------------------------------------------------------------------
# Pair chunks


@dataclass
class PairChunk:
    left: LocalSpeaker
    right: LocalSpeaker
    features: FeatureSequence
    boundary_M: int
    right_count_N: int

    @property
    def key(self) -> PairKey:
        return (self.left.key, self.right.key)


def build_pair_chunks(local_results: Sequence[LocalResult], strategy: FrameSelectStrategy = All()) -> list[PairChunk]:
    """One chunk per unordered pair of speakers from different windows.

    The earlier window's speaker forms the first block. Each speaker
    contributes its overlap-free frames (or its fallback set), thinned by
    ``strategy``.
    """
    blocks = {}
    for res in local_results:
        for spk in res.speakers:
            picked = select_frames(spk.nonoverlap_frames, strategy, spk.key)
            blocks[spk.key] = res.window.features.take(picked)

    ordered = sorted(local_results, key=lambda r: r.window.index)
    chunks = []
    for a, res_j in enumerate(ordered):
        for res_k in ordered[a + 1:]:
            for m in res_j.speakers:
                for n in res_k.speakers:
                    left, right = blocks[m.key], blocks[n.key]
                    chunks.append(PairChunk(m, n, concat_sequences([left, right]), len(left), len(right)))
    return chunks


def max_pair_chunks(n_windows: int, s_local: int) -> int:
    """Upper bound on the number of pair chunks."""
    return n_windows * (n_windows - 1) // 2 * s_local**2


def score_pair(posteriors: np.ndarray, boundary_M: int) -> float:
    """Cosine similarity between the mean posteriors of the two blocks."""
    z = np.asarray(posteriors, dtype=np.float64)
    if not 1 <= boundary_M < len(z):
        raise ValueError(f"boundary {boundary_M} out of range for {len(z)} rows")
    zm = z[:boundary_M].mean(axis=0)
    zn = z[boundary_M:].mean(axis=0)
    norm = np.linalg.norm(zm) * np.linalg.norm(zn)
    if norm == 0.0:
        return 0.0
    return float(np.clip(zm @ zn / norm, 0.0, 1.0))


def plan_batches(chunks: Sequence[PairChunk], batch_size: int) -> list[list[int]]:
    """Split chunk indices into batches of ``batch_size``.

    Chunks are ordered by padded length first so that each batch is close to
    uniform in shape.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = sorted(range(len(chunks)), key=lambda i: (padded_length(len(chunks[i].features)), chunks[i].key))
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def _score_batch(backend: Backend, chunks: Sequence[PairChunk], batch: list[int]):
    try:
        posts = backend.infer_batch([chunks[i].features for i in batch])
    except Exception as exc:
        if len(batch) == 1:
            raise GlobalStepError(chunks[batch[0]].key, exc) from exc
        # isolate the offending pair
        for i in batch:
            try:
                backend.infer(chunks[i].features)
            except Exception as inner:
                raise GlobalStepError(chunks[i].key, inner) from inner
        raise
    return [(chunks[i].key, score_pair(p, chunks[i].boundary_M)) for i, p in zip(batch, posts)]


def run_global(
    backend: Backend, chunks: Sequence[PairChunk], batch_size: int = 500, workers: int = 1
) -> list[tuple[PairKey, float]]:
    """Score every chunk once; the result is sorted by pair key.

    Batching and the worker count change throughput only.
    """
    batches = plan_batches(chunks, batch_size)
    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _score_batch(backend, chunks, b), batches))
    else:
        parts = [_score_batch(backend, chunks, b) for b in batches]
    return sorted(item for part in parts for item in part)


# ---------------------------------------------------------------------------
# Affinity matrix


@dataclass
class AffinityMatrix:
    matrix: np.ndarray
    index_map: list[SpeakerKey]

    @property
    def dim(self) -> int:
        return len(self.index_map)


def assemble_affinity(
    scores: Union[Mapping[PairKey, float], Iterable[tuple[PairKey, float]]],
    speakers: Iterable[LocalSpeaker],
) -> AffinityMatrix:
    """Fill the symmetric speaker affinity matrix.

    Rows follow window-major, slot-minor order. Same-window pairs are zero and
    the diagonal is one.
    """
    table = dict(scores.items() if isinstance(scores, Mapping) else scores)
    keys = sorted({s.key for s in speakers})
    index = {k: i for i, k in enumerate(keys)}
    S = np.eye(len(keys))
    for a in range(len(keys)):
        for b in range(a + 1, len(keys)):
            ka, kb = keys[a], keys[b]
            if ka[0] == kb[0]:
                continue
            if (ka, kb) in table:
                value = table[(ka, kb)]
            elif (kb, ka) in table:
                value = table[(kb, ka)]
            else:
                raise KeyError(f"no score for speaker pair {ka} / {kb}")
            S[index[ka], index[kb]] = S[index[kb], index[ka]] = value
    return AffinityMatrix(S, keys)


def expected_chunk_count(speaker_counts: Sequence[int]) -> int:
    total = 0
    for j in range(len(speaker_counts)):
        for k in range(j + 1, len(speaker_counts)):
            total += speaker_counts[j] * speaker_counts[k]
    return total


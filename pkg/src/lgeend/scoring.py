"""RTTM interchange and diarization error rate.

DER is computed by exact interval arithmetic: the timeline is cut at every
segment and collar boundary, and each elementary interval is scored once.
The reference-to-hypothesis speaker mapping is the one-to-one assignment
that maximizes total overlap time (Hungarian algorithm).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class RttmError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class UndefinedDerError(ValueError):
    """No reference speech is left to score."""


class Turn(NamedTuple):
    speaker: str
    start: float
    end: float


@dataclass
class Annotation:
    recording_id: str
    segments: list[Turn] = field(default_factory=list)

    def __post_init__(self):
        self.segments = [Turn(str(s), float(a), float(b)) for s, a, b in self.segments]
        for seg in self.segments:
            if not seg.start < seg.end:
                raise ValueError(f"segment {seg} has start >= end")

    @property
    def speakers(self) -> list[str]:
        return sorted({s.speaker for s in self.segments})

    def normalized(self) -> "Annotation":
        """Millisecond-rounded, sorted by (start, speaker): the form RTTM round-trips to."""
        segs = [Turn(s.speaker, round(s.start, 3), round(s.end, 3)) for s in self.segments]
        return Annotation(self.recording_id, sorted(segs, key=lambda t: (t.start, t.speaker, t.end)))

    def total_speech(self) -> float:
        return sum(s.end - s.start for s in self.segments)


def merge_turns(turns: Iterable[Turn]) -> list[Turn]:
    """Union overlapping or abutting turns of the same speaker."""
    by_speaker: dict[str, list[Turn]] = {}
    for t in turns:
        by_speaker.setdefault(t.speaker, []).append(t)
    merged = []
    for spk, items in by_speaker.items():
        items.sort(key=lambda t: t.start)
        cur_start, cur_end = items[0].start, items[0].end
        for t in items[1:]:
            if t.start <= cur_end:
                cur_end = max(cur_end, t.end)
            else:
                merged.append(Turn(spk, cur_start, cur_end))
                cur_start, cur_end = t.start, t.end
        merged.append(Turn(spk, cur_start, cur_end))
    merged.sort(key=lambda t: (t.start, t.speaker))
    return merged


# ---------------------------------------------------------------------------
# RTTM


def parse_rttm(text: str) -> list[Annotation]:
    """Parse SPEAKER lines into one :class:`Annotation` per recording (file order)."""
    recordings: dict[str, Annotation] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith((";;", "#")):
            continue
        fields = stripped.split()
        if fields[0] != "SPEAKER":
            continue
        if len(fields) < 9:
            raise RttmError(lineno, f"expected at least 9 fields, found {len(fields)}")
        try:
            tbeg, tdur = float(fields[3]), float(fields[4])
        except ValueError as exc:
            raise RttmError(lineno, f"bad time field ({exc})") from None
        if tdur < 0 or tbeg < 0:
            raise RttmError(lineno, "negative onset or duration")
        if tdur == 0:
            continue
        ann = recordings.setdefault(fields[1], Annotation(fields[1]))
        ann.segments.append(Turn(fields[7], round(tbeg, 3), round(tbeg + tdur, 3)))
    return list(recordings.values())


def emit_rttm(annotations: Annotation | Sequence[Annotation]) -> str:
    if isinstance(annotations, Annotation):
        annotations = [annotations]
    lines = []
    for ann in annotations:
        for seg in ann.normalized().segments:
            lines.append(
                f"SPEAKER {ann.recording_id} 1 {seg.start:.3f} {seg.end - seg.start:.3f} "
                f"<NA> <NA> {seg.speaker} <NA> <NA>"
            )
    return "".join(line + "\n" for line in lines)


# ---------------------------------------------------------------------------
# Assignment


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix; returns column per row.

    Shortest augmenting path with row/column potentials, O(n^3).
    """
    C = np.asarray(cost, dtype=np.float64)
    n = C.shape[0]
    if C.shape != (n, n):
        raise ValueError("cost matrix must be square")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)  # owner[j]: row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = C[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    assignment = np.empty(n, dtype=np.int64)
    assignment[owner[1:] - 1] = np.arange(n)
    return assignment


def optimal_assignment(overlap: np.ndarray) -> dict[int, int]:
    """One-to-one row-to-column mapping maximizing the summed overlap."""
    W = np.asarray(overlap, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError("overlap must be a 2-D matrix")
    if not np.all(np.isfinite(W)):
        raise ValueError("overlap entries must be finite")
    R, H = W.shape
    if R == 0 or H == 0:
        return {}
    n = max(R, H)
    padded = np.zeros((n, n))
    padded[:R, :H] = W
    cols = hungarian(padded.max() - padded)
    return {r: int(cols[r]) for r in range(R) if cols[r] < H}


# ---------------------------------------------------------------------------
# DER


@dataclass
class DerReport:
    miss_s: float
    falarm_s: float
    confusion_s: float
    scored_speech_s: float
    mapping: dict = field(default_factory=dict)

    @property
    def der(self) -> float:
        return (self.miss_s + self.falarm_s + self.confusion_s) / self.scored_speech_s

    def to_json(self) -> str:
        data = asdict(self)
        data["der"] = self.der
        return json.dumps(data, indent=2)


def _activity(turns: list[Turn], speakers: list[str], mids: np.ndarray) -> np.ndarray:
    act = np.zeros((len(mids), len(speakers)), dtype=bool)
    col = {s: i for i, s in enumerate(speakers)}
    for t in turns:
        lo, hi = np.searchsorted(mids, [t.start, t.end])
        act[lo:hi, col[t.speaker]] = True
    return act


def compute_der(
    reference: Annotation, hypothesis: Annotation, collar_s: float = 0.25, score_overlap: bool = True
) -> DerReport:
    """Diarization error rate with a no-score collar around reference boundaries.

    Args:
        reference: ground truth.
        hypothesis: system output for the same recording.
        collar_s: half-width of the excluded zone around each reference
            segment start and end.
        score_overlap: when False, regions with two or more reference
            speakers are excluded as well.

    Raises:
        UndefinedDerError: nothing of the reference survives the exclusions.
    """
    if reference.recording_id != hypothesis.recording_id:
        raise ValueError(
            f"recording mismatch: {reference.recording_id!r} vs {hypothesis.recording_id!r}"
        )
    ref = merge_turns(reference.segments)
    hyp = merge_turns(hypothesis.segments)
    ref_spk = sorted({t.speaker for t in ref})
    hyp_spk = sorted({t.speaker for t in hyp})

    ref_edges = [b for t in ref for b in (t.start, t.end)]
    collars = [(b - collar_s, b + collar_s) for b in ref_edges] if collar_s > 0 else []
    points = set(ref_edges)
    points.update(b for t in hyp for b in (t.start, t.end))
    points.update(x for zone in collars for x in zone)
    cuts = np.array(sorted(points))
    if cuts.size < 2:
        raise UndefinedDerError("no reference speech to score")
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    dur = np.diff(cuts)

    R = _activity(ref, ref_spk, mids)
    H = _activity(hyp, hyp_spk, mids)
    scored = np.ones(len(mids), dtype=bool)
    if collars:
        lo = np.array([z[0] for z in collars])
        hi = np.array([z[1] for z in collars])
        order = np.argsort(lo)
        lo, hi = lo[order], np.maximum.accumulate(hi[order])
        # a midpoint is inside some zone iff the latest-starting zone before it ends after it
        k = np.searchsorted(lo, mids, side="right") - 1
        inside = (k >= 0) & (hi[np.maximum(k, 0)] > mids)
        scored &= ~inside
    n_ref = R.sum(axis=1)
    if not score_overlap:
        scored &= n_ref < 2
    w = dur * scored

    overlap = (R * w[:, None]).T.astype(np.float64) @ H.astype(np.float64)
    mapping = optimal_assignment(overlap) if ref_spk and hyp_spk else {}
    n_hyp = H.sum(axis=1)
    n_correct = np.zeros(len(mids))
    for r, h in mapping.items():
        n_correct += R[:, r] & H[:, h]

    scored_speech = float(np.sum(w * n_ref))
    if scored_speech <= 0.0:
        raise UndefinedDerError("no reference speech left after collar removal")
    return DerReport(
        miss_s=float(np.sum(w * np.maximum(n_ref - n_hyp, 0))),
        falarm_s=float(np.sum(w * np.maximum(n_hyp - n_ref, 0))),
        confusion_s=float(np.sum(w * (np.minimum(n_ref, n_hyp) - n_correct))),
        scored_speech_s=scored_speech,
        mapping={ref_spk[r]: hyp_spk[h] for r, h in mapping.items()},
    )


def format_der_table(rows: Sequence[tuple[str, DerReport]]) -> str:
    header = f"{'recording':<24}{'DER%':>8}{'miss%':>8}{'fa%':>8}{'conf%':>8}{'scored_s':>12}"
    lines = [header, "-" * len(header)]
    tot = [0.0, 0.0, 0.0, 0.0]
    for name, rep in rows:
        s = rep.scored_speech_s
        lines.append(
            f"{name:<24}{100 * rep.der:>8.2f}{100 * rep.miss_s / s:>8.2f}"
            f"{100 * rep.falarm_s / s:>8.2f}{100 * rep.confusion_s / s:>8.2f}{s:>12.2f}"
        )
        for i, v in enumerate((rep.miss_s, rep.falarm_s, rep.confusion_s, s)):
            tot[i] += v
    if len(rows) > 1:
        s = tot[3]
        lines.append("-" * len(header))
        lines.append(
            f"{'OVERALL':<24}{100 * sum(tot[:3]) / s:>8.2f}{100 * tot[0] / s:>8.2f}"
            f"{100 * tot[1] / s:>8.2f}{100 * tot[2] / s:>8.2f}{s:>12.2f}"
        )
    return "\n".join(lines)

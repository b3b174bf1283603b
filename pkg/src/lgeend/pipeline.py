"""End-to-end local-global diarization, RTF measurement and benchmark sweeps."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Iterable, Optional, Sequence, TextIO

from .backend import Backend, BackendConfig, OracleBackend, make_backend
from .clustering import Auto, Oracle, SpeakerCount, spectral_cluster
from .features import FeatureSequence, split_windows
from .global_step import (
    AffinityMatrix,
    FrameSelectStrategy,
    assemble_affinity,
    build_pair_chunks,
    parse_strategy,
    run_global,
)
from .local_step import run_local, segments_from_labels
from .scoring import Annotation, DerReport, Turn, compute_der, merge_turns

log = logging.getLogger(__name__)

BENCH_COLUMNS = ("strategy", "batch_size", "rtf", "der")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage


def parse_speakers(text: str) -> SpeakerCount:
    """``auto``, ``auto:K`` or ``oracle:M``."""
    kind, _, arg = text.strip().lower().partition(":")
    if kind == "auto":
        return Auto(int(arg)) if arg else Auto()
    if kind == "oracle" and arg:
        return Oracle(int(arg))
    raise ValueError(f"unknown speaker-count mode {text!r}")


def format_speakers(mode: SpeakerCount) -> str:
    return f"oracle:{mode.m}" if isinstance(mode, Oracle) else f"auto:{mode.k_max}"


@dataclass
class PipelineConfig:
    window_T: int = 300
    threshold: float = 0.5
    median_len: int = 11
    s_local: int = 3
    min_nonoverlap: int = 3
    frame_select: str = "all"
    batch_size: int = 500
    speakers: str = "auto:10"
    backend: str = "oracle"
    seed: int = 0
    workers: int = 1
    layers: int = 6
    heads: int = 8
    hidden: int = 256
    ffn: int = 1024
    epsilon_oracle: float = 0.01

    def __post_init__(self):
        if self.window_T < 1:
            raise ValueError("window_T must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.min_nonoverlap < 0:
            raise ValueError("min_nonoverlap must be >= 0")
        # fail early on malformed strings
        self.strategy
        self.speaker_mode

    @property
    def strategy(self) -> FrameSelectStrategy:
        return parse_strategy(self.frame_select, self.seed)

    @property
    def speaker_mode(self) -> SpeakerCount:
        return parse_speakers(self.speakers)

    def backend_config(self, in_dim: int = 23) -> BackendConfig:
        return BackendConfig(self.s_local, self.layers, self.heads, self.hidden, self.ffn,
                             in_dim, self.seed, self.epsilon_oracle)

    def make_backend(self, in_dim: int = 23) -> Backend:
        return make_backend(self.backend, self.backend_config(in_dim))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def updated(self, **overrides) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


@dataclass
class Diagnostics:
    n_windows: int = 0
    speakers_per_window: list[int] = field(default_factory=list)
    n_chunks: int = 0
    s_global: int = 0
    n_clusters: int = 0
    fallback_speakers: int = 0
    global_step_skipped: bool = False
    timings: dict[str, float] = field(default_factory=dict)
    affinity: Optional[AffinityMatrix] = None
    cluster_of: dict = field(default_factory=dict)


def _stage(name: str, fn: Callable, timings: dict):
    t0 = time.perf_counter()
    try:
        return fn()
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - t0


def diarize(
    features: FeatureSequence,
    config: PipelineConfig = PipelineConfig(),
    backend: Optional[Backend] = None,
    recording_id: str = "rec",
) -> tuple[Annotation, Diagnostics]:
    """Local EEND per window, global pairwise rescoring, then spectral clustering.

    When only one window or at most one local speaker exists the global step
    is skipped and slot numbers serve as speaker ids.
    """
    if backend is None:
        backend = config.make_backend(features.dim if len(features) else 23)
    diag = Diagnostics()
    t_start = time.perf_counter()
    timings = diag.timings

    windows = split_windows(features, config.window_T)
    diag.n_windows = len(windows)
    local = _stage("local", lambda: run_local(
        windows, backend, config.threshold, config.median_len, config.min_nonoverlap), timings) if windows else []
    diag.speakers_per_window = [len(r.speakers) for r in local]
    speakers = [s for r in local for s in r.speakers]
    diag.s_global = len(speakers)
    diag.fallback_speakers = sum(s.used_overlap_fallback for s in speakers)

    if len(windows) <= 1 or len(speakers) <= 1:
        diag.global_step_skipped = True
        cluster_of = {s.key: s.slot for s in speakers}
    else:
        chunks = _stage("chunking", lambda: build_pair_chunks(local, config.strategy), timings)
        diag.n_chunks = len(chunks)
        scores = _stage("global", lambda: run_global(backend, chunks, config.batch_size, config.workers), timings)
        affinity = _stage("affinity", lambda: assemble_affinity(scores, speakers), timings)
        diag.affinity = affinity
        mode = config.speaker_mode
        if isinstance(mode, Oracle):
            mode = Oracle(min(mode.m, affinity.dim))
        assignment = _stage("clustering", lambda: spectral_cluster(affinity, mode, config.seed), timings)
        cluster_of = {k: int(c) for k, c in zip(affinity.index_map, assignment.labels)}
    diag.cluster_of = cluster_of
    diag.n_clusters = len(set(cluster_of.values()))

    turns = []
    for res in local:
        segs = segments_from_labels(res.labels, res.window.start_time, features.frame_period, res.window.index)
        turns.extend(Turn(f"speaker_{cluster_of[seg.speaker]}", seg.start, seg.end) for seg in segs)
    annotation = Annotation(recording_id, merge_turns(turns))
    timings["total"] = time.perf_counter() - t_start
    log.debug("diarized %s: W=%d C=%d S_global=%d M=%d", recording_id, diag.n_windows,
              diag.n_chunks, diag.s_global, diag.n_clusters)
    return annotation, diag


def threshold_sweep(
    features: FeatureSequence,
    reference: Annotation,
    config: PipelineConfig = PipelineConfig(),
    backend: Optional[Backend] = None,
    thresholds: Sequence[float] = (0.3, 0.4, 0.5, 0.6, 0.7),
    collar_s: float = 0.25,
) -> list[tuple[float, DerReport]]:
    """DER for each local binarization threshold; pick the best with ``min(..., key=der)``."""
    out = []
    for th in thresholds:
        hyp, _ = diarize(features, config.updated(threshold=th), backend, reference.recording_id)
        out.append((th, compute_der(reference, hyp, collar_s)))
    return out


@dataclass
class RtfReport:
    wall_s: float
    rtf: float
    result: object = None


def measure_rtf(run_fn: Callable[[], object], audio_duration_s: float) -> RtfReport:
    """Wall time of ``run_fn()`` divided by the audio duration."""
    if audio_duration_s <= 0:
        raise ValueError("audio duration must be positive")
    t0 = time.perf_counter()
    result = run_fn()
    wall = time.perf_counter() - t0
    return RtfReport(wall, wall / audio_duration_s, result)


def bench_sweep(
    configs: Sequence[PipelineConfig],
    scenarios: Sequence,
    collar_s: float = 0.25,
) -> list[dict]:
    """One row per config: pooled RTF and DER over all scenarios.

    The backend is built before timing starts; only ``diarize`` is timed.
    Scenario identities are passed through only to the oracle backend.
    """
    rows = []
    if not scenarios:
        return rows
    for cfg in configs:
        backend = cfg.make_backend(scenarios[0].features.dim)
        keep = isinstance(backend, OracleBackend)
        wall = dur = err = scored = 0.0
        for sc in scenarios:
            feats = sc.features if keep else sc.features.without_identities()
            rep = measure_rtf(lambda: diarize(feats, cfg, backend, sc.reference.recording_id), feats.duration)
            hyp, _ = rep.result
            der = compute_der(sc.reference, hyp, collar_s)
            wall += rep.wall_s
            dur += feats.duration
            err += der.miss_s + der.falarm_s + der.confusion_s
            scored += der.scored_speech_s
        rows.append({
            "strategy": str(cfg.strategy),
            "batch_size": cfg.batch_size,
            "rtf": wall / dur,
            "der": err / scored,
        })
    return rows


def write_bench_csv(rows: Iterable[dict], out: Optional[TextIO] = None) -> str:
    buf = out if out is not None else io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in BENCH_COLUMNS})
    return buf.getvalue() if out is None else ""

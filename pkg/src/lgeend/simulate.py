"""Synthetic multi-speaker conversations in feature space.

Each speaker alternates pauses and utterances on an independent timeline.
A frame's feature vector is the mean signature of the speakers active at
that frame plus Gaussian noise, so the pipeline downstream of the frontend
can be exercised end to end with known ground truth.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .features import FeatureSequence, load_features, save_features
from .scoring import Annotation, Turn, emit_rttm, parse_rttm

SIGNATURE_RADIUS = 3.0
MIN_SIGNATURE_DISTANCE = 2.0
MAX_REJECTIONS = 1000


def default_beta(n_speakers: int) -> float:
    """Mean pause length in seconds.

    2 s for one or two speakers and 9 s for three. Beyond three the pause
    grows as ``4n - 3`` so the expected number of simultaneous talkers stays
    at the three-speaker level (mean utterance 3 s).
    """
    if n_speakers <= 2:
        return 2.0
    return 4.0 * n_speakers - 3.0


@dataclass(frozen=True)
class SimConfig:
    n_speakers: int = 2
    duration_s: float = 300.0
    beta_s: Optional[float] = None
    utt_min_s: float = 1.0
    utt_max_s: float = 5.0
    signature_noise: float = 0.3
    seed: int = 0
    dim: int = 23
    frame_period: float = 0.1

    def __post_init__(self):
        if not 1 <= self.n_speakers <= 6:
            raise ValueError("n_speakers must lie in [1, 6]")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.utt_min_s > self.utt_max_s:
            raise ValueError("utt_min_s must not exceed utt_max_s")
        if self.beta_s is not None and self.beta_s <= 0:
            raise ValueError("beta_s must be positive")

    @property
    def beta(self) -> float:
        return default_beta(self.n_speakers) if self.beta_s is None else self.beta_s


@dataclass
class Scenario:
    config: SimConfig
    reference: Annotation
    features: FeatureSequence
    speaker_signatures: dict[str, np.ndarray]


class SimulationError(RuntimeError):
    pass


def speaker_name(i: int) -> str:
    return f"spk{i}"


def sample_signatures(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Points on the radius-3 sphere, pairwise at least 2 apart (rejection sampling)."""
    out = []
    tries = 0
    while len(out) < n:
        v = rng.standard_normal(dim)
        v *= SIGNATURE_RADIUS / np.linalg.norm(v)
        if all(np.linalg.norm(v - u) >= MIN_SIGNATURE_DISTANCE for u in out):
            out.append(v)
            continue
        tries += 1
        if tries >= MAX_REJECTIONS:
            raise SimulationError(f"could not place {n} signatures in {dim} dims")
    return np.array(out)


def speaker_timeline(config: SimConfig, rng: np.random.Generator) -> list[tuple[float, float]]:
    """Alternating pause/utterance intervals for one speaker, starting with a pause."""
    turns = []
    t = rng.exponential(config.beta)
    while t < config.duration_s:
        end = min(t + rng.uniform(config.utt_min_s, config.utt_max_s), config.duration_s)
        turns.append((round(t, 3), round(end, 3)))
        t = end + rng.exponential(config.beta)
    return [(a, b) for a, b in turns if a < b]


def generate_scenario(config: SimConfig) -> Scenario:
    rng = np.random.default_rng(config.seed)
    signatures = sample_signatures(config.n_speakers, config.dim, rng)
    names = [speaker_name(i) for i in range(config.n_speakers)]

    turns = []
    for name in names:
        turns.extend(Turn(name, a, b) for a, b in speaker_timeline(config, rng))
    turns.sort(key=lambda t: (t.start, t.speaker))
    reference = Annotation(f"sim{config.seed}", turns)

    fp = config.frame_period
    n_frames = int(np.floor(config.duration_s / fp + 1e-9))
    centers = (np.arange(n_frames) + 0.5) * fp
    active = np.zeros((n_frames, config.n_speakers), dtype=bool)
    col = {n: i for i, n in enumerate(names)}
    for t in turns:
        lo, hi = np.searchsorted(centers, [t.start, t.end])
        active[lo:hi, col[t.speaker]] = True

    counts = active.sum(axis=1, keepdims=True)
    mean_sig = (active.astype(np.float64) @ signatures) / np.maximum(counts, 1)
    frames = mean_sig + config.signature_noise * rng.standard_normal((n_frames, config.dim))
    identities = tuple(frozenset(names[j] for j in np.flatnonzero(row)) for row in active)
    features = FeatureSequence(frames.reshape(n_frames, config.dim), fp, 0.0, identities)
    return Scenario(config, reference, features, dict(zip(names, signatures)))


def scenario_to_inputs(scenario: Scenario, keep_identities: bool = True) -> tuple[FeatureSequence, Annotation]:
    """Pipeline input and scoring reference; identities are kept only for the oracle path."""
    feats = scenario.features if keep_identities else scenario.features.without_identities()
    return feats, scenario.reference


def overlap_fraction(scenario: Scenario) -> float:
    """Share of speech frames with two or more active speakers."""
    counts = np.array([len(i) for i in scenario.features.hidden_identities])
    speech = np.count_nonzero(counts >= 1)
    return float(np.count_nonzero(counts >= 2) / speech) if speech else 0.0


def save_scenario(scenario: Scenario, directory: str | Path) -> Path:
    """Write features, reference RTTM, identities and config into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_features(scenario.features, d / "features.f32")
    (d / "reference.rttm").write_text(emit_rttm(scenario.reference))
    ids = [sorted(s) for s in scenario.features.hidden_identities]
    (d / "identities.json").write_text(json.dumps(ids))
    meta = {
        "recording_id": scenario.reference.recording_id,
        "config": asdict(scenario.config),
        "signatures": {k: v.tolist() for k, v in scenario.speaker_signatures.items()},
    }
    (d / "scenario.json").write_text(json.dumps(meta, indent=2) + "\n")
    return d


def load_scenario(directory: str | Path) -> Scenario:
    d = Path(directory)
    meta = json.loads((d / "scenario.json").read_text())
    feats = load_features(d / "features.f32")
    ids_path = d / "identities.json"
    if ids_path.exists():
        ids = tuple(frozenset(s) for s in json.loads(ids_path.read_text()))
        feats = replace(feats, hidden_identities=ids)
    refs = parse_rttm((d / "reference.rttm").read_text())
    reference = refs[0] if refs else Annotation(meta["recording_id"])
    return Scenario(
        SimConfig(**meta["config"]),
        reference,
        feats,
        {k: np.array(v) for k, v in meta["signatures"].items()},
    )

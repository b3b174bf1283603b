"""Log-Mel frontend, frame decimation and fixed-length windowing."""

from __future__ import annotations

import json
import math
import wave
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

Identities = tuple[frozenset, ...]


class EmptyInputError(ValueError):
    """Audio too short to yield a single analysis frame."""


@dataclass
class FeatureSequence:
    """Time-major feature matrix at a fixed frame period.

    ``hidden_identities`` holds the ground-truth speaker set of every frame
    when the sequence comes from the simulator. Only the oracle backend
    reads it.
    """

    frames: np.ndarray
    frame_period: float
    start_time: float = 0.0
    hidden_identities: Optional[Identities] = None

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim == 1 and frames.size == 0:
            frames = frames.reshape(0, 0)
        if frames.ndim != 2:
            raise ValueError(f"frames must be 2-D (T, F), got shape {frames.shape}")
        self.frames = frames
        if not self.frame_period > 0:
            raise ValueError("frame_period must be positive")
        if self.start_time < 0:
            raise ValueError("start_time must be non-negative")
        if self.hidden_identities is not None:
            ids = tuple(frozenset(s) for s in self.hidden_identities)
            if len(ids) != len(frames):
                raise ValueError(
                    f"hidden_identities has {len(ids)} entries for {len(frames)} frames"
                )
            self.hidden_identities = ids

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration(self) -> float:
        return len(self) * self.frame_period

    def take(self, indices: Sequence[int]) -> "FeatureSequence":
        """Gather frames (and identities) by index; timing is kept from self."""
        idx = np.asarray(indices, dtype=np.int64)
        ids = None
        if self.hidden_identities is not None:
            ids = tuple(self.hidden_identities[i] for i in idx)
        return FeatureSequence(self.frames[idx], self.frame_period, self.start_time, ids)

    def without_identities(self) -> "FeatureSequence":
        return replace(self, hidden_identities=None)


def concat_sequences(parts: Sequence[FeatureSequence]) -> FeatureSequence:
    if not parts:
        raise ValueError("nothing to concatenate")
    frames = np.concatenate([p.frames for p in parts], axis=0)
    ids = None
    if all(p.hidden_identities is not None for p in parts):
        ids = tuple(i for p in parts for i in p.hidden_identities)
    return FeatureSequence(frames, parts[0].frame_period, parts[0].start_time, ids)


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate_hz: int = 8000
    fft_window_s: float = 0.025
    fft_hop_s: float = 0.010
    n_mels: int = 23
    log_floor: float = 1e-10
    subsample_factor: int = 10

    def __post_init__(self):
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.subsample_factor < 1:
            raise ValueError("subsample_factor must be >= 1")
        if self.fft_hop_s > self.fft_window_s:
            raise ValueError("fft_hop_s must not exceed fft_window_s")

    @property
    def win_length(self) -> int:
        return int(round(self.fft_window_s * self.sample_rate_hz))

    @property
    def hop_length(self) -> int:
        return int(round(self.fft_hop_s * self.sample_rate_hz))

    @property
    def n_fft(self) -> int:
        return 1 << (self.win_length - 1).bit_length()


@dataclass
class Window:
    index: int
    features: FeatureSequence

    @property
    def length_frames(self) -> int:
        return len(self.features)

    @property
    def start_time(self) -> float:
        return self.features.start_time


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, sample_rate_hz: int) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    edges = np.linspace(0.0, hz_to_mel(sample_rate_hz / 2.0), n_mels + 2)
    return mel_to_hz(edges[1:-1])


def mel_filterbank(n_mels: int, n_fft: int, sample_rate_hz: int) -> np.ndarray:
    """HTK-style triangular filters spanning 0 Hz to Nyquist, shape (n_mels, n_fft//2+1)."""
    mel_edges = np.linspace(0.0, hz_to_mel(sample_rate_hz / 2.0), n_mels + 2)
    bin_mel = hz_to_mel(np.arange(n_fft // 2 + 1) * sample_rate_hz / n_fft)
    left, center, right = mel_edges[:-2, None], mel_edges[1:-1, None], mel_edges[2:, None]
    rising = (bin_mel[None, :] - left) / (center - left)
    falling = (right - bin_mel[None, :]) / (right - center)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def compute_logmel(
    samples: np.ndarray, config: FrontendConfig = FrontendConfig(), sample_rate_hz: int | None = None
) -> FeatureSequence:
    """Log-Mel filterbank features at the analysis hop (10 ms by default).

    Args:
        samples: mono PCM samples (any real dtype).
        config: frontend settings.
        sample_rate_hz: rate of ``samples`` if known; must equal the config's.

    Raises:
        EmptyInputError: fewer samples than one analysis window.
    """
    if sample_rate_hz is not None and sample_rate_hz != config.sample_rate_hz:
        raise ValueError(
            f"sample rate {sample_rate_hz} Hz does not match frontend {config.sample_rate_hz} Hz"
        )
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected mono samples")
    win, hop, n_fft = config.win_length, config.hop_length, config.n_fft
    if x.size < win:
        raise EmptyInputError(f"{x.size} samples is shorter than one {win}-sample window")

    n_frames = (x.size - win) // hop + 1
    framed = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    spec = np.fft.rfft(framed * np.hamming(win), n=n_fft, axis=1)
    power = spec.real**2 + spec.imag**2
    mel = power @ mel_filterbank(config.n_mels, n_fft, config.sample_rate_hz).T
    logmel = np.log(np.maximum(mel, config.log_floor))
    return FeatureSequence(logmel, frame_period=hop / config.sample_rate_hz)


def subsample(features: FeatureSequence, factor: int) -> FeatureSequence:
    """Keep every ``factor``-th frame starting at frame 0."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return features
    ids = None
    if features.hidden_identities is not None:
        ids = features.hidden_identities[::factor]
    return FeatureSequence(
        features.frames[::factor],
        features.frame_period * factor,
        features.start_time,
        ids,
    )


def split_windows(features: FeatureSequence, T: int) -> list[Window]:
    """Tile the sequence with consecutive windows of ``T`` frames (last may be short)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    windows = []
    for i in range(math.ceil(len(features) / T)):
        part = features.take(range(i * T, min((i + 1) * T, len(features))))
        part.start_time = features.start_time + i * T * features.frame_period
        windows.append(Window(i, part))
    return windows


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a 16-bit mono PCM WAV file; samples scaled to [-1, 1)."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, rate


def write_wav(path: str | Path, samples: np.ndarray, sample_rate_hz: int) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate_hz)
        wf.writeframes(pcm.tobytes())


def wav_to_features(path: str | Path, config: FrontendConfig = FrontendConfig()) -> FeatureSequence:
    samples, rate = read_wav(path)
    return subsample(compute_logmel(samples, config, rate), config.subsample_factor)


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_features(features: FeatureSequence, path: str | Path) -> None:
    """Write raw little-endian float32 frames plus a JSON header beside them."""
    path = Path(path)
    features.frames.astype("<f4").tofile(path)
    header = {
        "frames": len(features),
        "dim": features.dim,
        "frame_period_s": features.frame_period,
        "start_time_s": features.start_time,
    }
    _sidecar(path).write_text(json.dumps(header, indent=2) + "\n")


def load_features(path: str | Path) -> FeatureSequence:
    path = Path(path)
    header = json.loads(_sidecar(path).read_text())
    data = np.fromfile(path, dtype="<f4")
    expected = header["frames"] * header["dim"]
    if data.size != expected:
        raise ValueError(f"{path}: {data.size} values on disk, header declares {expected}")
    return FeatureSequence(
        data.reshape(header["frames"], header["dim"]).astype(np.float64),
        header["frame_period_s"],
        header["start_time_s"],
    )

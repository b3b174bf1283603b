"""Frame-posterior estimators ("EEND models") and training-side utilities.

Two backends implement the same contract: given a chunk of feature frames,
return one row of speaker-activity posteriors per frame.

* :class:`OracleBackend` derives ideal posteriors from the simulator's hidden
  speaker identities. Slots follow first appearance inside each chunk, so the
  cross-window permutation ambiguity of a real model is preserved.
* :class:`TransformerBackend` runs a self-attention encoder in numpy with
  seeded random or file-loaded weights. It exists for throughput work; it is
  never trained here.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .features import FeatureSequence

PAD_MULTIPLE = 16
# cap on attention-score elements held at once by one forward call
ATTENTION_BUDGET = 1 << 21
PIT_CLAMP = 1e-7


class BackendError(ValueError):
    pass


class CapacityError(BackendError):
    """A chunk holds more distinct speakers than the backend has output slots."""


@dataclass(frozen=True)
class BackendConfig:
    s_local: int = 3
    layers: int = 6
    heads: int = 8
    hidden: int = 256
    ffn: int = 1024
    in_dim: int = 23
    seed: int = 0
    epsilon_oracle: float = 0.01

    def __post_init__(self):
        if self.s_local < 1:
            raise ValueError("s_local must be >= 1")
        if self.hidden % self.heads:
            raise ValueError(f"hidden={self.hidden} is not divisible by heads={self.heads}")


class Backend:
    """Interface shared by all posterior estimators.

    Implementations are immutable after construction, so ``infer`` and
    ``infer_batch`` may be called from several threads at once.
    """

    s_local: int
    in_dim: Optional[int] = None

    def infer(self, chunk: FeatureSequence) -> np.ndarray:
        return self.infer_batch([chunk])[0]

    def infer_batch(self, chunks: Sequence[FeatureSequence]) -> list[np.ndarray]:
        raise NotImplementedError

    def _check(self, chunk: FeatureSequence) -> None:
        if len(chunk) == 0:
            raise BackendError("empty chunk")
        if self.in_dim is not None and chunk.dim != self.in_dim:
            raise BackendError(f"chunk has dim {chunk.dim}, backend expects {self.in_dim}")


def oracle_infer(chunk: FeatureSequence, s_local: int = 3, epsilon: float = 0.01) -> np.ndarray:
    """Ideal posteriors from hidden identities.

    Each identity takes the next free slot the first time it appears in the
    chunk (identities sharing a frame are ordered by name). Active slots get
    ``1 - epsilon``, the rest ``epsilon``.
    """
    if chunk.hidden_identities is None:
        raise BackendError("oracle backend needs hidden identities on the chunk")
    # distinct identity sets in first-appearance order give the slot order
    patterns = dict.fromkeys(chunk.hidden_identities)
    slots: dict = {}
    rows = np.full((len(patterns), s_local), epsilon)
    for p, ids in enumerate(patterns):
        patterns[ids] = p
        for spk in sorted(ids, key=str):
            if spk not in slots:
                if len(slots) == s_local:
                    raise CapacityError(
                        f"chunk holds more than {s_local} distinct speakers (next: {spk!r})"
                    )
                slots[spk] = len(slots)
            rows[p, slots[spk]] = 1.0 - epsilon
    return rows[[patterns[ids] for ids in chunk.hidden_identities]]


class OracleBackend(Backend):
    def __init__(self, s_local: int = 3, epsilon: float = 0.01):
        if not 0 <= epsilon < 0.5:
            raise ValueError("epsilon must lie in [0, 0.5)")
        self.s_local = s_local
        self.epsilon = epsilon

    def infer_batch(self, chunks):
        out = []
        for chunk in chunks:
            self._check(chunk)
            out.append(oracle_infer(chunk, self.s_local, self.epsilon))
        return out

    def __repr__(self):
        return f"OracleBackend(s_local={self.s_local}, epsilon={self.epsilon})"


# ---------------------------------------------------------------------------
# Transformer encoder


def init_weights(config: BackendConfig, seed: Optional[int] = None) -> dict[str, np.ndarray]:
    """Seeded random weights, scaled by 1/sqrt(fan_in) so activations stay O(1)."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    H, F, S = config.hidden, config.in_dim, config.s_local

    def dense(fan_in, fan_out):
        return (rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)).astype(np.float32)

    w = {"input.weight": dense(F, H), "input.bias": np.zeros(H, np.float32)}
    for i in range(config.layers):
        p = f"layers.{i}."
        for name in ("q", "k", "v", "o"):
            w[p + f"attn.w{name}"] = dense(H, H)
            w[p + f"attn.b{name}"] = np.zeros(H, np.float32)
        w[p + "norm1.gamma"] = np.ones(H, np.float32)
        w[p + "norm1.beta"] = np.zeros(H, np.float32)
        w[p + "ff.w1"] = dense(H, config.ffn)
        w[p + "ff.b1"] = np.zeros(config.ffn, np.float32)
        w[p + "ff.w2"] = dense(config.ffn, H)
        w[p + "ff.b2"] = np.zeros(H, np.float32)
        w[p + "norm2.gamma"] = np.ones(H, np.float32)
        w[p + "norm2.beta"] = np.zeros(H, np.float32)
    w["output.weight"] = dense(H, S)
    w["output.bias"] = np.zeros(S, np.float32)
    return w


def _layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def _attention(x, w, p, heads, key_mask):
    B, L, H = x.shape
    d = H // heads

    def split(t):
        return t.reshape(B, L, heads, d).transpose(0, 2, 1, 3)

    q = split(x @ w[p + "attn.wq"] + w[p + "attn.bq"])
    k = split(x @ w[p + "attn.wk"] + w[p + "attn.bk"])
    v = split(x @ w[p + "attn.wv"] + w[p + "attn.bv"])
    scores = (q @ k.transpose(0, 1, 3, 2)) * np.float32(1.0 / np.sqrt(d))
    if key_mask is not None:
        scores += np.where(key_mask, np.float32(0.0), np.float32(-np.inf))[:, None, None, :]
    scores = scores - scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(B, L, H)
    return ctx @ w[p + "attn.wo"] + w[p + "attn.bo"]


def num_layers(weights: dict[str, np.ndarray]) -> int:
    return len({k.split(".")[1] for k in weights if k.startswith("layers.")})


def transformer_forward(
    frames: np.ndarray,
    weights: dict[str, np.ndarray],
    heads: int,
    key_mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Encoder forward pass without positional encoding.

    Args:
        frames: (T, F) or (B, T, F) inputs.
        weights: tensors named as produced by :func:`init_weights`.
        heads: number of attention heads.
        key_mask: optional (B, T) boolean, False on padded frames.

    Returns:
        Posteriors in [0, 1] with the same leading shape as ``frames``.
    """
    x = np.asarray(frames, dtype=np.float32)
    single = x.ndim == 2
    if single:
        x = x[None]
    if not np.all(np.isfinite(x)):
        raise BackendError("non-finite input frames")
    x = x @ weights["input.weight"] + weights["input.bias"]
    for i in range(num_layers(weights)):
        p = f"layers.{i}."
        x = _layer_norm(x + _attention(x, weights, p, heads, key_mask),
                        weights[p + "norm1.gamma"], weights[p + "norm1.beta"])
        h = np.maximum(x @ weights[p + "ff.w1"] + weights[p + "ff.b1"], 0.0)
        x = _layer_norm(x + (h @ weights[p + "ff.w2"] + weights[p + "ff.b2"]),
                        weights[p + "norm2.gamma"], weights[p + "norm2.beta"])
    logits = x @ weights["output.weight"] + weights["output.bias"]
    post = 1.0 / (1.0 + np.exp(-logits))
    return post[0] if single else post


def padded_length(n: int) -> int:
    return -(-n // PAD_MULTIPLE) * PAD_MULTIPLE


class TransformerBackend(Backend):
    """Numpy self-attention EEND encoder.

    Chunks are padded to a multiple of ``PAD_MULTIPLE`` frames and grouped by
    padded length inside a batch. A chunk's posteriors therefore depend only
    on the chunk, never on what it was batched with.
    """

    def __init__(self, weights: dict[str, np.ndarray], heads: int):
        for name, tensor in weights.items():
            if not np.all(np.isfinite(tensor)):
                raise BackendError(f"non-finite values in weight {name!r}")
        self.weights = {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in weights.items()}
        self.heads = heads
        self.in_dim, hidden = self.weights["input.weight"].shape
        self.s_local = self.weights["output.weight"].shape[1]
        if hidden % heads:
            raise BackendError(f"hidden={hidden} not divisible by heads={heads}")

    @classmethod
    def random(cls, config: BackendConfig, seed: Optional[int] = None) -> "TransformerBackend":
        return cls(init_weights(config, seed), config.heads)

    @classmethod
    def from_file(cls, path: str | Path) -> "TransformerBackend":
        weights, meta = load_weights(path)
        return cls(weights, int(meta.get("heads", 8)))

    def infer_batch(self, chunks):
        for chunk in chunks:
            self._check(chunk)
        out: list[Optional[np.ndarray]] = [None] * len(chunks)
        groups: dict[int, list[int]] = {}
        for i, chunk in enumerate(chunks):
            groups.setdefault(padded_length(len(chunk)), []).append(i)
        for L, members in groups.items():
            step = max(1, ATTENTION_BUDGET // (self.heads * L * L))
            for lo in range(0, len(members), step):
                part = members[lo:lo + step]
                x = np.zeros((len(part), L, self.in_dim), np.float32)
                mask = np.zeros((len(part), L), bool)
                for row, i in enumerate(part):
                    n = len(chunks[i])
                    x[row, :n] = chunks[i].frames
                    mask[row, :n] = True
                post = transformer_forward(x, self.weights, self.heads, mask)
                for row, i in enumerate(part):
                    out[i] = post[row, :len(chunks[i])].astype(np.float64)
        return out

    def __repr__(self):
        return (f"TransformerBackend(layers={num_layers(self.weights)}, "
                f"hidden={self.weights['input.weight'].shape[1]}, heads={self.heads})")


def save_weights(weights: dict[str, np.ndarray], path: str | Path, heads: int) -> None:
    """Raw little-endian float32 blob with a JSON sidecar indexing each tensor."""
    path = Path(path)
    entries, offset = [], 0
    with open(path, "wb") as fh:
        for name, tensor in weights.items():
            arr = np.ascontiguousarray(tensor, dtype="<f4")
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    header = {"heads": heads, "dtype": "float32", "tensors": entries}
    path.with_suffix(".json").write_text(json.dumps(header, indent=2) + "\n")


def load_weights(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    blob = np.fromfile(path, dtype="<f4")
    weights = {}
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + size > blob.size:
            raise BackendError(f"{path}: tensor {entry['name']!r} runs past end of file")
        weights[entry["name"]] = blob[start:start + size].reshape(entry["shape"])
    return weights, header


def make_backend(spec: str, config: BackendConfig = BackendConfig()) -> Backend:
    """Build a backend from ``oracle``, ``transformer:<path>`` or ``transformer:random:<seed>``."""
    if spec == "oracle":
        return OracleBackend(config.s_local, config.epsilon_oracle)
    kind, _, rest = spec.partition(":")
    if kind == "transformer" and rest:
        if rest.startswith("random:"):
            return TransformerBackend.random(config, int(rest.split(":", 1)[1]))
        return TransformerBackend.from_file(rest)
    raise ValueError(f"unknown backend spec {spec!r}")


# ---------------------------------------------------------------------------
# Training-side utilities (forward computation only)


def pit_loss(posteriors: np.ndarray, labels: np.ndarray) -> float:
    """Permutation-invariant mean binary cross-entropy.

    The minimum over all assignments of label columns to posterior columns.
    """
    p = np.asarray(posteriors, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 2:
        raise ValueError(f"shape mismatch: posteriors {p.shape}, labels {y.shape}")
    T, S = p.shape
    p = np.clip(p, PIT_CLAMP, 1.0 - PIT_CLAMP)
    log_p, log_q = np.log(p), np.log1p(-p)
    # cost[i, j]: mean BCE of label column i against posterior column j
    cost = -(y.T @ log_p + (1.0 - y).T @ log_q) / T
    best = min(
        sum(cost[i, perm[i]] for i in range(S))
        for perm in itertools.permutations(range(S))
    )
    return float(max(best / S, 0.0))


FeaturesLike = Union[np.ndarray, FeatureSequence]


def concat_adaptation_reformat(
    features: FeaturesLike, labels: np.ndarray, rng: np.random.Generator
) -> tuple[FeaturesLike, np.ndarray, bool]:
    """Rebuild an utterance as two concatenated single-speaker blocks.

    Overlapped frames are discarded, the remaining frames are grouped into
    one block per speaker, and two speaker blocks picked by ``rng`` are
    concatenated. Labels are re-indexed so the first block's speaker is
    column 0 and the second's is column 1.

    Returns:
        ``(features, labels, reformatted)``. When fewer than two speakers
        have non-overlapped frames the inputs come back untouched with
        ``reformatted=False``.
    """
    seq = features if isinstance(features, FeatureSequence) else None
    frames = seq.frames if seq is not None else np.asarray(features)
    y = np.asarray(labels)
    if len(frames) != len(y):
        raise ValueError("labels are not aligned with features")
    single = y.sum(axis=1) == 1
    speakers = [s for s in range(y.shape[1]) if np.any(single & (y[:, s] == 1))]
    if len(speakers) < 2:
        return features, labels, False

    first, second = rng.choice(speakers, size=2, replace=False)
    blocks = [np.flatnonzero(single & (y[:, s] == 1)) for s in (first, second)]
    order = np.concatenate(blocks)
    new_labels = np.zeros((len(order), y.shape[1]), dtype=y.dtype)
    new_labels[: len(blocks[0]), 0] = 1
    new_labels[len(blocks[0]):, 1] = 1
    if seq is not None:
        return seq.take(order), new_labels, True
    return frames[order], new_labels, True


def reformat_batch(batch, rng: np.random.Generator, fraction: float = 0.5):
    """Apply :func:`concat_adaptation_reformat` to ``fraction`` of a batch of (features, labels)."""
    batch = list(batch)
    chosen = set(rng.choice(len(batch), size=int(len(batch) * fraction), replace=False).tolist())
    out = []
    for i, (feats, labs) in enumerate(batch):
        if i in chosen:
            feats, labs, _ = concat_adaptation_reformat(feats, labs, rng)
        out.append((feats, labs))
    return out

"""Spectral clustering of the speaker affinity matrix.

The affinity is turned into a symmetric-normalized Laplacian, the speaker
count is read off the largest gap in its ascending spectrum, and k-means on
the row-normalized bottom eigenvectors yields the global labels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

DEGREE_GUARD = 1e-8
SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class Oracle:
    """Use a known number of clusters."""

    m: int


@dataclass(frozen=True)
class Auto:
    """Estimate the number of clusters by max eigengap, at most ``k_max``."""

    k_max: int = 10


SpeakerCount = Union[Oracle, Auto]


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    num_clusters: int
    eigenvalues: Optional[np.ndarray] = None


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings covering every (p, q) once, as n-1 rounds of disjoint pairs."""
    players = list(range(n + (n % 2)))
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            p, q = map(np.array, zip(*pairs))
            rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def symmetric_eig(matrix: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once. Pairs are scheduled in
    round-robin rounds of disjoint (p, q), so a whole round is applied with
    vectorized row/column updates.

    Args:
        matrix: symmetric (n, n) array.
        tol: stop once the off-diagonal Frobenius norm drops below
            ``tol * ||A||_F``.
        max_sweeps: sweep limit.

    Returns:
        Eigenvalues in ascending order and the matching orthonormal
        eigenvectors as columns.
    """
    A = np.array(matrix, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    scale = np.abs(A).max() if A.size else 0.0
    if not np.allclose(A, A.T, rtol=0.0, atol=SYMMETRY_TOL * max(scale, 1.0)):
        raise ValueError("matrix is not symmetric")
    n = A.shape[0]
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    norm = np.linalg.norm(A)
    if n < 2 or norm == 0.0:
        return np.diag(A).copy(), V

    rounds = _round_robin(n)
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        if np.sqrt(np.sum(A[off_mask] ** 2)) <= tol * norm:
            break
        for P, Q in rounds:
            apq = A[P, Q]
            active = apq != 0.0
            if not np.any(active):
                continue
            P, Q, apq = P[active], Q[active], apq[active]
            theta = (A[Q, Q] - A[P, P]) / (2.0 * apq)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            rp, rq = A[P, :].copy(), A[Q, :].copy()
            A[P, :] = c[:, None] * rp - s[:, None] * rq
            A[Q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = A[:, P].copy(), A[:, Q].copy()
            A[:, P] = cp * c - cq * s
            A[:, Q] = cp * s + cq * c
            A[P, Q] = A[Q, P] = 0.0
            vp, vq = V[:, P].copy(), V[:, Q].copy()
            V[:, P] = vp * c - vq * s
            V[:, Q] = vp * s + vq * c
    else:
        if np.sqrt(np.sum(A[off_mask] ** 2)) > tol * norm:
            warnings.warn(f"Jacobi did not converge in {max_sweeps} sweeps", RuntimeWarning)

    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def normalized_laplacian(affinity: np.ndarray, delta: float = DEGREE_GUARD) -> np.ndarray:
    """``I - D^-1/2 S D^-1/2`` with a small guard added to every degree."""
    S = np.asarray(affinity, dtype=np.float64)
    d = S.sum(axis=1) + delta
    inv = 1.0 / np.sqrt(d)
    return np.eye(len(S)) - inv[:, None] * S * inv[None, :]


def estimate_num_clusters(eigenvalues: np.ndarray, k_max: int = 10, tie_tol: float = 1e-10) -> int:
    """Position of the largest gap between consecutive ascending eigenvalues.

    Only gaps after the first ``min(k_max, n-1)`` eigenvalues compete. Gaps
    equal within ``tie_tol`` resolve to the larger count, so a run of
    numerically identical eigenvalues longer than ``k_max`` yields ``k_max``.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if lam.size == 0:
        raise ValueError("no eigenvalues")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    limit = min(k_max, lam.size - 1)
    if limit < 1:
        return 1
    gaps = np.diff(lam)[:limit]
    return int(np.flatnonzero(gaps >= gaps.max() - tie_tol)[-1]) + 1


# ---------------------------------------------------------------------------
# k-means


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _assign(X, centers):
    d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(X)), labels]


def _lloyd(X, centers, max_iter):
    k = len(centers)
    labels, dist = _assign(X, centers)
    for _ in range(max_iter):
        for j in range(k):
            if not np.any(labels == j):
                # refill an empty cluster with the worst-fit point of a multi-member cluster
                counts = np.bincount(labels, minlength=k)
                movable = np.flatnonzero(counts[labels] > 1)
                steal = movable[np.argmax(dist[movable])]
                labels[steal], dist[steal] = j, 0.0
        centers = np.array([X[labels == j].mean(axis=0) for j in range(k)])
        new_labels, dist = _assign(X, centers)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    inertia = float(np.sum((X - centers[labels]) ** 2))
    return labels, centers, inertia


def kmeans_fit(points: np.ndarray, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 100):
    """Best of ``n_init`` k-means++ seeded Lloyd runs.

    Returns:
        ``(labels, centers, inertia)`` of the run with the lowest
        sum of squared distances.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(X, _kmeans_pp(X, k, rng), max_iter)
        if best is None or run[2] < best[2]:
            best = run
    return best


def kmeans(points: np.ndarray, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 100) -> np.ndarray:
    return kmeans_fit(points, k, seed, n_init, max_iter)[0]


def relabel_by_first_occurrence(labels: np.ndarray) -> np.ndarray:
    mapping: dict[int, int] = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        out[i] = mapping.setdefault(int(lab), len(mapping))
    return out


def spectral_cluster(affinity, speakers: SpeakerCount = Auto(), seed: int = 0) -> ClusterAssignment:
    """Cluster speakers from their affinity matrix.

    Args:
        affinity: (n, n) array or an object with a ``matrix`` attribute.
        speakers: :class:`Oracle` for a known count, :class:`Auto` to
            estimate it.
        seed: k-means seed.
    """
    S = np.asarray(getattr(affinity, "matrix", affinity), dtype=np.float64)
    n = len(S)
    if n == 0:
        return ClusterAssignment(np.zeros(0, dtype=np.int64), 0)
    if isinstance(speakers, Oracle) and not 1 <= speakers.m <= n:
        raise ValueError(f"oracle cluster count {speakers.m} not in [1, {n}]")

    eigvals, eigvecs = symmetric_eig(normalized_laplacian(S))
    if isinstance(speakers, Oracle):
        m = speakers.m
    else:
        m = estimate_num_clusters(eigvals, speakers.k_max)
    if m == 1:
        return ClusterAssignment(np.zeros(n, dtype=np.int64), 1, eigvals)

    emb = eigvecs[:, :m].copy()
    norms = np.linalg.norm(emb, axis=1)
    zero = norms < 1e-12
    emb[~zero] /= norms[~zero, None]
    emb[zero] = np.eye(m)[0]
    labels = relabel_by_first_occurrence(kmeans(emb, m, seed))
    return ClusterAssignment(labels, int(labels.max()) + 1, eigvals)

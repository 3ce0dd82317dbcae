"""Unsupervised partitioning of system-state embeddings into runtime states.

k-means over unit vectors (squared Euclidean, k-means++ seeding, 10 restarts,
assignment-stable convergence) for each candidate K; the K with the best mean
silhouette wins, ties going to the smaller K. Centroids are re-normalized to
unit length after every update so the geometry stays cosine-compatible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePartition, DimensionMismatch, InsufficientData
from .fusion import SystemStateEmbedding

N_RESTARTS = 10
MAX_ITERS = 100


@dataclass
class StatePartition:
    k: int
    centroids: np.ndarray          # (K, d), unit rows
    sizes: list[int]
    silhouette_by_k: dict[int, float]
    seed: int


def _pairwise_sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # (N, K) squared Euclidean distances.
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _renormalize(c: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(c, axis=1, keepdims=True)
    return np.where(norms > 0, c / np.maximum(norms, 1e-300), c)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = _pairwise_sq_dists(x, np.stack(centers)).min(axis=1)
        total = float(d2.sum())
        if total == 0.0:
            centers.append(x[int(rng.integers(n))])
            continue
        r = rng.uniform() * total
        idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
        centers.append(x[min(idx, n - 1)])
    return np.stack(centers)


def _kmeans_once(x: np.ndarray, k: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, float]:
    centroids = _renormalize(_kmeans_pp_init(x, k, rng))
    assign_prev = None
    for _ in range(MAX_ITERS):
        d2 = _pairwise_sq_dists(x, centroids)
        assignment = d2.argmin(axis=1)
        # Empty clusters grab the point currently farthest from its centroid.
        taken: set[int] = set()
        for ck in range(k):
            if np.any(assignment == ck):
                continue
            dist_own = d2[np.arange(len(x)), assignment].copy()
            dist_own[list(taken)] = -1.0
            far = int(dist_own.argmax())
            taken.add(far)
            assignment[far] = ck
            centroids[ck] = x[far]
        if assign_prev is not None and np.array_equal(assignment, assign_prev):
            break
        assign_prev = assignment.copy()
        for ck in range(k):
            members = x[assignment == ck]
            if len(members):
                centroids[ck] = members.mean(axis=0)
        centroids = _renormalize(centroids)
    d2 = _pairwise_sq_dists(x, centroids)
    assignment = d2.argmin(axis=1)
    inertia = float(d2[np.arange(len(x)), assignment].sum())
    return centroids, assignment, inertia


def _kmeans(x: np.ndarray, k: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    best = None
    for restart in range(N_RESTARTS):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([seed, k, restart])))
        centroids, assignment, inertia = _kmeans_once(x, k, rng)
        if best is None or inertia < best[2]:
            best = (centroids, assignment, inertia)
    return best[0], best[1]


def silhouette(embeddings: list[SystemStateEmbedding] | np.ndarray,
               assignments: np.ndarray | list[int]) -> float:
    """Mean silhouette with Euclidean distance; singleton clusters and the
    a=b=0 case both contribute 0.
    """
    x = _as_matrix(embeddings)
    labels = np.asarray(assignments)
    ids = np.unique(labels)
    if len(ids) < 2:
        raise DegeneratePartition("silhouette needs at least 2 clusters")
    n = x.shape[0]
    if n != len(labels):
        raise DimensionMismatch("one assignment per embedding required")
    dists = np.sqrt(np.maximum(_pairwise_sq_dists(x, x), 0.0))
    scores = np.zeros(n)
    masks = {int(c): labels == c for c in ids}
    for i in range(n):
        own = masks[int(labels[i])]
        n_own = int(own.sum())
        if n_own <= 1:
            continue  # singleton convention
        a = dists[i, own].sum() / (n_own - 1)
        b = min(dists[i, masks[int(c)]].mean() for c in ids if c != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def _as_matrix(embeddings) -> np.ndarray:
    if isinstance(embeddings, np.ndarray):
        return embeddings
    return np.stack([e.vector for e in embeddings])


def partition(embeddings: list[SystemStateEmbedding], k_min: int, k_max: int,
              seed: int) -> StatePartition:
    """Cluster the embeddings for each K in [k_min, k_max] and keep the K
    with the highest mean silhouette (ties: smaller K). Deterministic given
    the seed; input order is irrelevant (canonical sort by window_id).
    """
    ordered = sorted(embeddings, key=lambda e: (e.window.start, e.window_id))
    n = len(ordered)
    if not (1 <= k_min <= k_max <= n):
        raise InsufficientData(
            f"need 1 <= k_min <= k_max <= N, got [{k_min}, {k_max}] with N={n}")
    x = _as_matrix(ordered)

    best_k = None
    best_score = None
    results = {}
    scores: dict[int, float] = {}
    for k in range(k_min, k_max + 1):
        centroids, assignment = _kmeans(x, k, seed)
        # K=1 cannot be scored; rank it below every real clustering.
        score = -1.0 if k == 1 else silhouette(x, assignment)
        results[k] = (centroids, assignment)
        scores[k] = score
        if best_score is None or score > best_score:
            best_k, best_score = k, score
    centroids, assignment = results[best_k]
    sizes = [int((assignment == ck).sum()) for ck in range(best_k)]
    return StatePartition(best_k, centroids, sizes, scores, seed)


def assign(part: StatePartition, z: SystemStateEmbedding | np.ndarray) -> int:
    """Nearest centroid by Euclidean distance; ties resolve to the lowest
    cluster index.
    """
    vec = z.vector if isinstance(z, SystemStateEmbedding) else np.asarray(z)
    if vec.shape != (part.centroids.shape[1],):
        raise DimensionMismatch(
            f"embedding dim {vec.shape} vs centroid dim {part.centroids.shape[1]}")
    d2 = ((part.centroids - vec[None, :]) ** 2).sum(axis=1)
    return int(d2.argmin())


def assign_all(part: StatePartition,
               embeddings: list[SystemStateEmbedding]) -> np.ndarray:
    if not embeddings:
        return np.zeros(0, dtype=int)
    x = _as_matrix(embeddings)
    if x.shape[1] != part.centroids.shape[1]:
        raise DimensionMismatch("embedding dim does not match centroids")
    return _pairwise_sq_dists(x, part.centroids).argmin(axis=1)


def purity(assignments: np.ndarray | list[int],
           truth: list[int]) -> float:
    """Fraction of points whose cluster's majority truth label matches their
    own truth label.
    """
    labels = np.asarray(assignments)
    if len(labels) != len(truth) or len(labels) == 0:
        raise DimensionMismatch("assignments and truth must align and be non-empty")
    truth_arr = np.asarray(truth)
    correct = 0
    for ck in np.unique(labels):
        members = truth_arr[labels == ck]
        _, counts = np.unique(members, return_counts=True)
        correct += int(counts.max())
    return correct / len(labels)

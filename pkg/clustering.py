"""
Seeded Lloyd's k-means shared by the geographic sampler and the
product-quantization codebook trainer.
"""

import warnings
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from errors import ValidationError


@dataclass
class KMeansFit:
    assignments: np.ndarray  # (n,) cluster index per row
    centroids: np.ndarray  # (k, d)
    sse_history: List[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def sse(self) -> float:
        return self.sse_history[-1] if self.sse_history else float("nan")


CHUNK_ELEMENTS = 1 << 22


def squared_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances between rows of X and rows of C."""
    n, k = len(X), len(C)
    out = np.empty((n, k), dtype=np.float64)
    step = max(1, CHUNK_ELEMENTS // max(1, k * C.shape[1]))
    for start in range(0, n, step):
        diff = X[start:start + step, None, :] - C[None, :, :]
        out[start:start + step] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def _initial_centroids(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # Prefer k distinct rows; duplicates only when there are fewer than k distinct rows
    _, first_index = np.unique(X, axis=0, return_index=True)
    first_index = np.sort(first_index)
    if len(first_index) >= k:
        chosen = rng.choice(first_index, size=k, replace=False)
    else:
        rest = np.setdiff1d(np.arange(len(X)), first_index)
        extra = rng.choice(rest, size=k - len(first_index), replace=False)
        chosen = np.concatenate([first_index, extra])
    return X[np.sort(chosen)].copy()


def _reseed_empty(X, assignments, dist_to_own, k):
    """Move the farthest point of a multi-member cluster into each empty cluster."""
    counts = np.bincount(assignments, minlength=k)
    for j in np.flatnonzero(counts == 0):
        donors = counts[assignments] > 1
        candidates = np.where(donors, dist_to_own, -np.inf)
        i = int(np.argmax(candidates))
        counts[assignments[i]] -= 1
        assignments[i] = j
        counts[j] = 1
        dist_to_own[i] = 0.0
    return assignments


def _lloyd_step(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """One assign-then-update pass; scikit-learn relocates empty clusters to far points."""
    model = KMeans(n_clusters=len(centroids), init=centroids, n_init=1, max_iter=1, algorithm="lloyd")
    with warnings.catch_warnings():
        # Fewer distinct points than clusters is handled by _reseed_empty
        warnings.simplefilter("ignore", ConvergenceWarning)
        model.fit(X)
    return model.cluster_centers_.astype(np.float64)


def _assign(X: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, float]:
    """Nearest-centroid assignments with no cluster left empty, and the SSE of the nearest distances."""
    d2 = squared_distances(X, centroids)
    assignments = np.argmin(d2, axis=1)
    dist_to_own = d2[np.arange(len(X)), assignments].copy()
    sse = float(dist_to_own.sum())
    return _reseed_empty(X, assignments, dist_to_own, len(centroids)), sse


def lloyd_kmeans(X: np.ndarray, k: int, seed: int, max_iters: int = 100, tol: float = 0.0) -> KMeansFit:
    """
    Lloyd's algorithm in Euclidean space on top of sklearn's KMeans.

    Initialization samples k distinct rows with a seeded generator. Each
    iteration is one warm-started sklearn Lloyd pass, so the SSE of every
    iterate is recorded. Stops after max_iters or when no centroid moved by
    tol or more. Final assignments go to the nearest centroid (ties to the
    lowest index) with no cluster left empty.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValidationError("k-means needs a non-empty 2D array of points")
    n = len(X)
    if not 1 <= k <= n:
        raise ValidationError(f"k must be in [1, {n}], got {k}")
    if max_iters < 1:
        raise ValidationError("max_iters must be positive")
    if not np.isfinite(X).all():
        raise ValidationError("k-means input contains non-finite values")

    rng = np.random.default_rng(seed)
    centroids = _initial_centroids(X, k, rng)
    fit = KMeansFit(assignments=np.zeros(n, dtype=np.int64), centroids=centroids)

    for it in range(1, max_iters + 1):
        new_centroids = _lloyd_step(X, centroids)
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids

        assignments, sse = _assign(X, centroids)
        fit.sse_history.append(sse)
        fit.assignments = assignments
        fit.centroids = centroids
        fit.iterations = it
        if shift < tol or shift == 0.0:
            break
    return fit

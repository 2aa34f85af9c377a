"""
Exact and product-quantized k-nearest-neighbor search over embedding
vectors.

Distances are squared Euclidean everywhere. Result lists are sorted by
distance, ties by ascending id, so rankings are fully deterministic.
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from clustering import lloyd_kmeans
from errors import ValidationError

logger = logging.getLogger(__name__)

DEFAULT_K_CENTROIDS = 256
MAX_DEFAULT_M = 16


class Neighbor(NamedTuple):
    id: int
    distance: float


def as_matrix(vectors, name="vectors") -> np.ndarray:
    X = np.asarray(vectors, dtype=np.float32)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValidationError(f"{name} must be a 2D array with a positive dimension")
    if not np.isfinite(X).all():
        raise ValidationError(f"{name} contain non-finite entries")
    return X


def as_vector(v, dim: Optional[int] = None, name="query") -> np.ndarray:
    q = np.asarray(v, dtype=np.float32).reshape(-1)
    if not np.isfinite(q).all():
        raise ValidationError(f"{name} contains non-finite entries")
    if dim is not None and q.shape[0] != dim:
        raise ValidationError(f"{name} has dimension {q.shape[0]}, expected {dim}")
    return q


def l2_normalize(X: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization; zero rows are left as they are."""
    X = np.asarray(X, dtype=np.float32)
    norms = np.linalg.norm(X.astype(np.float64), axis=-1, keepdims=True)
    return (X / np.where(norms > 0, norms, 1.0)).astype(np.float32)


def _rank(distances: np.ndarray, ids: np.ndarray, k: int) -> List[Neighbor]:
    order = np.lexsort((ids, distances))[:k]
    return [Neighbor(int(ids[i]), float(distances[i])) for i in order]


def _check_k(k: int, n: int):
    if not 1 <= k <= n:
        raise ValidationError(f"k must be in [1, {n}], got {k}")


def exact_knn(query, dataset, k: int, ids: Optional[Sequence[int]] = None) -> List[Neighbor]:
    """The k true nearest rows of dataset by squared Euclidean distance."""
    X = as_matrix(dataset, "dataset")
    q = as_vector(query, X.shape[1])
    _check_k(k, len(X))
    ids = np.arange(len(X)) if ids is None else np.asarray(ids)
    diff = X.astype(np.float64) - q.astype(np.float64)
    return _rank((diff * diff).sum(axis=1), ids, k)


@dataclass(frozen=True)
class PQConfig:
    m: Optional[int] = None
    k_centroids: int = DEFAULT_K_CENTROIDS
    train_iters: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.m is not None and self.m < 1:
            raise ValidationError(f"m must be positive, got {self.m}")
        if not 2 <= self.k_centroids <= 256:
            raise ValidationError(f"k_centroids must be in [2, 256], got {self.k_centroids}")
        if self.train_iters < 1:
            raise ValidationError("train_iters must be positive")

    def subspaces(self, dim: int) -> int:
        """m for this dimension: the configured value, else dim/4 capped at 16 (and dividing dim)."""
        if self.m is not None:
            if dim % self.m:
                raise ValidationError(f"m={self.m} does not divide dim={dim}")
            return self.m
        m = min(max(dim // 4, 1), MAX_DEFAULT_M)
        while dim % m:
            m -= 1
        return m


@dataclass(frozen=True)
class PQCodebook:
    tables: np.ndarray  # (m, k_centroids, dim / m)

    @property
    def m(self) -> int:
        return self.tables.shape[0]

    @property
    def k_centroids(self) -> int:
        return self.tables.shape[1]

    @property
    def sub_dim(self) -> int:
        return self.tables.shape[2]

    @property
    def dim(self) -> int:
        return self.m * self.sub_dim

    @property
    def code_dtype(self):
        return np.uint8 if self.k_centroids <= 256 else np.uint16


def train_codebook(training_vectors, cfg: PQConfig) -> PQCodebook:
    """Seeded k-means on each of the m coordinate slices."""
    X = as_matrix(training_vectors, "training vectors").astype(np.float64)
    n, dim = X.shape
    m = cfg.subspaces(dim)
    if cfg.k_centroids > n:
        raise ValidationError(f"k_centroids={cfg.k_centroids} exceeds the {n} training vectors")
    sub = dim // m
    tables = np.empty((m, cfg.k_centroids, sub), dtype=np.float64)
    for j in range(m):
        fit = lloyd_kmeans(X[:, j * sub:(j + 1) * sub], cfg.k_centroids, cfg.seed + j, cfg.train_iters)
        tables[j] = fit.centroids
    logger.debug("trained PQ codebook m=%d k=%d on %d vectors", m, cfg.k_centroids, n)
    return PQCodebook(tables)


def encode_many(X, cb: PQCodebook) -> np.ndarray:
    """(n, m) codes; each entry the nearest centroid of its slice, ties to the lowest index."""
    X = as_matrix(X).astype(np.float64)
    if X.shape[1] != cb.dim:
        raise ValidationError(f"vectors have dimension {X.shape[1]}, codebook expects {cb.dim}")
    codes = np.empty((len(X), cb.m), dtype=cb.code_dtype)
    for j in range(cb.m):
        part = X[:, j * cb.sub_dim:(j + 1) * cb.sub_dim]
        diff = part[:, None, :] - cb.tables[j][None, :, :]
        codes[:, j] = np.argmin(np.einsum("nkd,nkd->nk", diff, diff), axis=1)
    return codes


def encode(v, cb: PQCodebook) -> np.ndarray:
    return encode_many(as_vector(v, cb.dim), cb)[0]


def decode(code, cb: PQCodebook) -> np.ndarray:
    code = np.asarray(code)
    return np.concatenate([cb.tables[j, code[..., j]] for j in range(cb.m)], axis=-1)


def distance_tables(query, cb: PQCodebook) -> np.ndarray:
    """(m, k_centroids) squared distances from each query slice to each centroid."""
    q = as_vector(query, cb.dim).astype(np.float64).reshape(cb.m, 1, cb.sub_dim)
    diff = cb.tables - q
    return (diff * diff).sum(axis=2)


def adc_knn(query, codes, cb: PQCodebook, k: int, ids: Optional[Sequence[int]] = None) -> List[Neighbor]:
    """Asymmetric-distance search: m table lookups summed per code."""
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.shape[1] != cb.m:
        raise ValidationError(f"codes must have shape (n, {cb.m}), got {codes.shape}")
    if len(codes) and codes.max() >= cb.k_centroids:
        raise ValidationError("code index out of range for this codebook")
    _check_k(k, len(codes))
    tables = distance_tables(query, cb)
    distances = np.zeros(len(codes), dtype=np.float64)
    for j in range(cb.m):
        distances += tables[j, codes[:, j]]
    ids = np.arange(len(codes)) if ids is None else np.asarray(ids)
    return _rank(distances, ids, k)


def recall_at_k(approx: Sequence[Neighbor], exact: Sequence[Neighbor]) -> float:
    """Share of the exact neighbor ids that the approximate list also returned."""
    if not exact:
        raise ValidationError("recall needs a non-empty exact result")
    truth = {nb.id for nb in exact}
    return len(truth & {nb.id for nb in approx}) / len(truth)


class ExactIndex:
    """Brute-force search over the raw vectors"""

    kind = "exact"

    def __init__(self, vectors):
        self.vectors = as_matrix(vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.vectors)

    def search(self, query, k: int) -> List[Neighbor]:
        return exact_knn(query, self.vectors, k)


class PQIndex:
    """Product-quantized codes searched with asymmetric distances"""

    kind = "pq"

    def __init__(self, codebook: PQCodebook, codes: np.ndarray):
        self.codebook = codebook
        self.codes = np.asarray(codes, dtype=codebook.code_dtype)

    @classmethod
    def build(cls, vectors, cfg: PQConfig) -> "PQIndex":
        X = as_matrix(vectors)
        codebook = train_codebook(X, cfg)
        return cls(codebook, encode_many(X, codebook))

    @property
    def dim(self) -> int:
        return self.codebook.dim

    def __len__(self):
        return len(self.codes)

    @property
    def code_bytes(self) -> int:
        return self.codes.nbytes

    def search(self, query, k: int) -> List[Neighbor]:
        return adc_knn(query, self.codes, self.codebook, k)


def evaluate_recall(vectors, queries, cfg: PQConfig, k: int = 10) -> float:
    """Mean recall@k of a PQ index built on vectors against exact search, logged as a report line."""
    queries = as_matrix(queries, "queries")
    if len(queries) == 0:
        raise ValidationError("recall needs at least one query")
    index, exact = PQIndex.build(vectors, cfg), ExactIndex(vectors)
    recall = float(np.mean([recall_at_k(index.search(q, k), exact.search(q, k)) for q in queries]))
    logger.info(
        "PQ recall@%d m=%d k_centroids=%d over %d queries: %.3f",
        k, index.codebook.m, cfg.k_centroids, len(queries), recall,
    )
    return recall

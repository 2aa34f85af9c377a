"""
Well-spread geographic sampling with k-means, and geography-based
train/test splitting on a lat/lon grid.

K-means runs on raw degrees (lat, lon as 2D Euclidean). At city scale the
longitude shrink with latitude is accepted; it is not geodesic clustering.
"""

import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Hashable, List, Sequence, Tuple

import numpy as np

from clustering import KMeansFit, lloyd_kmeans
from errors import ValidationError
from geo_core import GeoPoint, GridCellId, cell_of, haversine_km_array

logger = logging.getLogger(__name__)

DEFAULT_CELL_DEG = 0.01
DEFAULT_TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class SamplingConfig:
    k: int
    seed: int = 0
    max_iters: int = 100
    tol: float = 1e-9

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"K must be positive, got {self.k}")
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be positive, got {self.max_iters}")
        if self.tol < 0:
            raise ValidationError(f"tol must be non-negative, got {self.tol}")


@dataclass(frozen=True)
class SplitConfig:
    cell_deg: float = DEFAULT_CELL_DEG
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    seed: int = 0

    def __post_init__(self):
        if not self.cell_deg > 0:
            raise ValidationError(f"cell_deg must be positive, got {self.cell_deg}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


class Partition(str, Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: List[GeoPoint]
    fit: KMeansFit


def _as_array(points: Sequence[GeoPoint]) -> np.ndarray:
    return np.array([(p.lat, p.lon) for p in points], dtype=np.float64).reshape(-1, 2)


def kmeans(points: Sequence[GeoPoint], cfg: SamplingConfig) -> KMeansResult:
    """Lloyd's k-means on (lat, lon) degrees."""
    if not points:
        raise ValidationError("cannot cluster an empty point set")
    if cfg.k > len(points):
        raise ValidationError(f"K={cfg.k} exceeds the number of points ({len(points)})")
    fit = lloyd_kmeans(_as_array(points), cfg.k, cfg.seed, cfg.max_iters, cfg.tol)
    centroids = [GeoPoint(lat, lon) for lat, lon in fit.centroids]
    return KMeansResult(fit.assignments, centroids, fit)


def spread_indices(points: Sequence[GeoPoint], cfg: SamplingConfig) -> List[int]:
    """Input index of each cluster's medoid, ascending."""
    result = kmeans(points, cfg)
    X = _as_array(points)
    chosen = []
    for j, centroid in enumerate(result.fit.centroids):
        members = np.flatnonzero(result.assignments == j)
        d2 = ((X[members] - centroid) ** 2).sum(axis=1)
        chosen.append(int(members[np.argmin(d2)]))
    return sorted(chosen)


def sample_spread(points: Sequence[GeoPoint], cfg: SamplingConfig) -> List[GeoPoint]:
    """One medoid per k-means cluster, in input order."""
    return [points[i] for i in spread_indices(points, cfg)]


def random_indices(n: int, k: int, seed: int) -> List[int]:
    """k distinct positions out of n, ascending."""
    if not 1 <= k <= n:
        raise ValidationError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    return [int(i) for i in np.sort(rng.choice(n, size=k, replace=False))]


def sample_random(points: Sequence[GeoPoint], k: int, seed: int) -> List[GeoPoint]:
    """Uniform random baseline: k distinct input points, in input order."""
    return [points[i] for i in random_indices(len(points), k, seed)]


def min_pairwise_km(points: Sequence[GeoPoint]) -> float:
    """Smallest great-circle distance between any two points."""
    if len(points) < 2:
        return float("inf")
    X = _as_array(points)
    i, j = np.triu_indices(len(X), k=1)
    return float(haversine_km_array(X[i, 0], X[i, 1], X[j, 0], X[j, 1]).min())


def cell_partition(cell: GridCellId, cfg: SplitConfig) -> Partition:
    """Seeded hash of (cell, seed) mapped to [0, 1) and compared to the train fraction."""
    key = f"{cfg.seed}:{cell.row}:{cell.col}".encode()
    u = int(hashlib.md5(key).hexdigest()[:13], 16) / float(16 ** 13)
    return Partition.TRAIN if u < cfg.train_fraction else Partition.TEST


def grid_split(records: Sequence[Tuple[Hashable, GeoPoint]], cfg: SplitConfig) -> Dict[Hashable, Partition]:
    """
    Assign every record the partition of its grid cell.

    Cells are decided independently, so adding records never flips the
    partition of an existing cell.
    """
    cache: Dict[GridCellId, Partition] = {}
    assignment = {}
    for record_id, location in records:
        cell = cell_of(location, cfg.cell_deg)
        if cell not in cache:
            cache[cell] = cell_partition(cell, cfg)
        assignment[record_id] = cache[cell]
    logger.debug("split %d records over %d cells", len(assignment), len(cache))
    return assignment


def audit_split(
    records: Sequence[Tuple[Hashable, GeoPoint]], assignment: Dict[Hashable, Partition], cell_deg: float
) -> List[GridCellId]:
    """Cells holding records from both partitions (empty for a leakage-free split)."""
    seen: Dict[GridCellId, set] = {}
    for record_id, location in records:
        seen.setdefault(cell_of(location, cell_deg), set()).add(assignment[record_id])
    return sorted(cell for cell, parts in seen.items() if len(parts) > 1)

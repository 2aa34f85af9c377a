"""
Retrieval-based GPS inference and the accuracy-at-radius evaluation harness.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from errors import InvariantError, ValidationError
from geo_core import GeoPoint, haversine_km, km_to_deg_lat, km_to_deg_lon, spherical_mean
from vector_index import ExactIndex, Neighbor, PQConfig, PQIndex, as_matrix, as_vector

logger = logging.getLogger(__name__)

DEFAULT_NN_CHOICES = (1, 5, 9)
RADII_KM = (1.0, 25.0, 200.0)
AGGREGATIONS = ("mean", "per_neighbor")


@dataclass
class GeoRecord:
    id: str
    location: GeoPoint
    embedding: np.ndarray
    label: Optional[str] = None


@dataclass
class GeoEstimate:
    predicted: GeoPoint
    neighbors: List[Neighbor]


@dataclass
class EvalRow:
    nn: int
    mean_distance_error_km: float
    accuracy: Dict[float, float]  # radius km -> share of queries with error < radius
    queries: int

    @property
    def acc_1km(self) -> float:
        return self.accuracy[1.0]

    @property
    def acc_25km(self) -> float:
        return self.accuracy[25.0]

    @property
    def acc_200km(self) -> float:
        return self.accuracy[200.0]


@dataclass
class EvalReport:
    rows: List[EvalRow]
    per_label: Dict[str, List[EvalRow]] = field(default_factory=dict)

    def row(self, nn: int) -> EvalRow:
        for row in self.rows:
            if row.nn == nn:
                return row
        raise KeyError(nn)

    def check_monotone(self):
        """Accuracy must not decrease as the radius grows."""
        for row in self.rows:
            values = [row.accuracy[r] for r in sorted(row.accuracy)]
            if any(a > b for a, b in zip(values, values[1:])):
                raise InvariantError(f"accuracy decreases with radius at nn={row.nn}: {values}")


class GeoIndex:
    """GeoRecords searchable by embedding, with an exact or PQ backend."""

    def __init__(self, records: Sequence[GeoRecord], backend: Union[ExactIndex, PQIndex]):
        if len(records) != len(backend):
            raise ValidationError("backend size does not match the number of records")
        self.records = list(records)
        self.backend = backend

    @classmethod
    def build(cls, records: Sequence[GeoRecord], pq: Optional[PQConfig] = None) -> "GeoIndex":
        if not records:
            raise ValidationError("cannot index an empty record set")
        X = as_matrix([r.embedding for r in records], "embeddings")
        backend = ExactIndex(X) if pq is None else PQIndex.build(X, pq)
        logger.info("built %s index over %d records", backend.kind, len(records))
        return cls(records, backend)

    def __len__(self):
        return len(self.records)

    def search(self, query, k: int) -> List[Neighbor]:
        return self.backend.search(query, k)


def localize(query, index: GeoIndex, nn: int) -> GeoEstimate:
    """Mean location (on the sphere) of the nn nearest index records."""
    if not 1 <= nn <= len(index):
        raise ValidationError(f"nn must be in [1, {len(index)}], got {nn}")
    neighbors = index.search(as_vector(query, index.backend.dim), nn)
    predicted = spherical_mean([index.records[nb.id].location for nb in neighbors])
    return GeoEstimate(predicted, neighbors)


def _summarize(errors_by_query: List[List[float]], nn: int) -> EvalRow:
    flat = [e for errs in errors_by_query for e in errs]
    accuracy = {r: sum(1 for e in flat if e < r) / len(flat) for r in RADII_KM}
    return EvalRow(nn, math.fsum(flat) / len(flat), accuracy, len(errors_by_query))


def evaluate(
    queries: Sequence[GeoRecord],
    index: GeoIndex,
    nn_choices: Sequence[int] = DEFAULT_NN_CHOICES,
    aggregation: str = "mean",
) -> EvalReport:
    """
    Distance error and accuracy at 1/25/200 km for each nn choice.

    Args:
        aggregation: "mean" scores the averaged prediction of the top nn
            neighbors; "per_neighbor" scores each of them on its own.
    """
    if not queries:
        raise ValidationError("evaluation needs at least one query")
    if aggregation not in AGGREGATIONS:
        raise ValidationError(f"aggregation must be one of {AGGREGATIONS}, got {aggregation!r}")
    nn_choices = sorted(set(nn_choices))
    if not nn_choices or nn_choices[0] < 1 or nn_choices[-1] > len(index):
        raise ValidationError(f"nn choices must lie in [1, {len(index)}], got {nn_choices}")

    overlap = {q.id for q in queries} & {r.id for r in index.records}
    if overlap:
        logger.warning("%d query ids are also in the index (e.g. %s)", len(overlap), sorted(overlap)[0])

    errors = {nn: [] for nn in nn_choices}
    for query in queries:
        # One search at the largest nn; smaller nn reuse its prefix
        neighbors = index.search(as_vector(query.embedding, index.backend.dim), nn_choices[-1])
        for nn in nn_choices:
            top = neighbors[:nn]
            if aggregation == "mean":
                predicted = spherical_mean([index.records[nb.id].location for nb in top])
                errors[nn].append([haversine_km(predicted, query.location)])
            else:
                errors[nn].append([haversine_km(index.records[nb.id].location, query.location) for nb in top])

    report = EvalReport([_summarize(errors[nn], nn) for nn in nn_choices])
    labels = sorted({q.label for q in queries if q.label is not None})
    for label in labels:
        positions = [i for i, q in enumerate(queries) if q.label == label]
        report.per_label[label] = [_summarize([errors[nn][i] for i in positions], nn) for nn in nn_choices]
    report.check_monotone()
    return report


def report_frame(reports: Dict[str, EvalReport]) -> pd.DataFrame:
    """One row per (descriptor, nn) with the distance error and accuracy columns."""
    rows = []
    for descriptor, report in reports.items():
        for row in report.rows:
            rows.append(
                {
                    "descriptor": descriptor,
                    "nn": row.nn,
                    "dist_error_km": row.mean_distance_error_km,
                    "acc_1km": row.acc_1km,
                    "acc_25km": row.acc_25km,
                    "acc_200km": row.acc_200km,
                }
            )
    return pd.DataFrame(rows, columns=["descriptor", "nn", "dist_error_km", "acc_1km", "acc_25km", "acc_200km"])


def per_label_frame(report: EvalReport) -> pd.DataFrame:
    rows = []
    for label, label_rows in report.per_label.items():
        for row in label_rows:
            rows.append(
                {
                    "label": label,
                    "nn": row.nn,
                    "queries": row.queries,
                    "dist_error_km": row.mean_distance_error_km,
                    "acc_1km": row.acc_1km,
                    "acc_25km": row.acc_25km,
                    "acc_200km": row.acc_200km,
                }
            )
    return pd.DataFrame(rows, columns=["label", "nn", "queries", "dist_error_km", "acc_1km", "acc_25km", "acc_200km"])


@dataclass(frozen=True)
class CitySpec:
    name: str
    center: GeoPoint
    count: int


# Four capitals far enough apart that a wrong city costs more than 200 km
DEFAULT_CITIES = (
    CitySpec("paris", GeoPoint(48.8566, 2.3522), 500),
    CitySpec("berlin", GeoPoint(52.5200, 13.4050), 500),
    CitySpec("madrid", GeoPoint(40.4168, -3.7038), 500),
    CitySpec("rome", GeoPoint(41.9028, 12.4964), 500),
)


def _city_directions(n_cities: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    gauss = rng.standard_normal((dim, max(n_cities, 1)))
    if n_cities <= dim:
        q, _ = np.linalg.qr(gauss)
        return q[:, :n_cities].T
    return (gauss / np.linalg.norm(gauss, axis=0)).T


def synth_dataset(
    cities: Sequence[Union[CitySpec, Tuple[GeoPoint, int]]],
    embed_dim: int,
    spread_km: float,
    embed_noise: float,
    seed: int,
) -> List[GeoRecord]:
    """
    Synthetic geotagged embeddings, a desk-scale stand-in for street imagery.

    Each city gets a fixed unit direction (orthonormal when there are no
    more cities than dimensions). Its records scatter around the city
    center with std spread_km and carry the direction plus Gaussian noise
    of std embed_noise. Record ids are consecutive integers as strings.
    """
    specs = [c if isinstance(c, CitySpec) else CitySpec(f"city{i}", c[0], c[1]) for i, c in enumerate(cities)]
    if embed_dim < 1:
        raise ValidationError("embed_dim must be positive")
    if spread_km < 0 or embed_noise < 0:
        raise ValidationError("spread and noise must be non-negative")
    if any(s.count < 0 for s in specs):
        raise ValidationError("city counts must be non-negative")

    rng = np.random.default_rng(seed)
    directions = _city_directions(len(specs), embed_dim, rng)
    records = []
    for spec, direction in zip(specs, directions):
        if spec.count == 0:
            continue
        lat_std = km_to_deg_lat(spread_km)
        lon_std = km_to_deg_lon(spread_km, spec.center.lat)
        lats = np.clip(spec.center.lat + rng.standard_normal(spec.count) * lat_std, -90.0, 90.0)
        lons = spec.center.lon + rng.standard_normal(spec.count) * lon_std
        noise = rng.standard_normal((spec.count, embed_dim)) * embed_noise
        embeddings = (direction[None, :] + noise).astype(np.float32)
        for lat, lon, emb in zip(lats, lons, embeddings):
            records.append(GeoRecord(str(len(records)), GeoPoint(lat, lon), emb, spec.name))
    return records

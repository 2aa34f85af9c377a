"""
Geographic primitives: coordinates, great-circle distance, spherical
averaging and grid cells.
"""

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from errors import DegenerateMeanError, ValidationError

EARTH_RADIUS_KM = 6371.0
KM_PER_DEG_LAT = math.pi * EARTH_RADIUS_KM / 180.0

# Resultant norms below this are treated as cancelling out
MIN_RESULTANT = 1e-9


def normalize_lon(lon: float) -> float:
    """Map a longitude into (-180, 180]; -180 becomes +180."""
    if -180.0 < lon <= 180.0:
        return lon
    lon = math.fmod(lon + 180.0, 360.0)
    if lon <= 0.0:
        lon += 360.0
    return lon - 180.0


@dataclass(frozen=True)
class GeoPoint:
    """A WGS-84 coordinate in degrees"""

    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise ValidationError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= lat <= 90.0:
            raise ValidationError(f"latitude {lat} outside [-90, 90]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", normalize_lon(lon))


class GridCellId(NamedTuple):
    row: int
    col: int


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km on a sphere of radius 6371 km."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    h = min(1.0, max(0.0, h))
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


def haversine_km_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorized haversine_km over broadcastable degree arrays."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=np.float64)) for x in (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def to_unit_vector(p: GeoPoint):
    lat, lon = math.radians(p.lat), math.radians(p.lon)
    return (math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat))


def spherical_mean(points: Iterable[GeoPoint]) -> GeoPoint:
    """
    Average of points as the normalized sum of their 3D unit vectors.

    Correct across the antimeridian, unlike an arithmetic lat/lon mean.
    Components are summed with math.fsum so the result does not depend on
    the order of the input.

    Raises:
        ValidationError: empty input
        DegenerateMeanError: the vectors cancel out (e.g. exact antipodes)
    """
    vectors = [to_unit_vector(p) for p in points]
    if not vectors:
        raise ValidationError("spherical_mean needs at least one point")
    x = math.fsum(v[0] for v in vectors)
    y = math.fsum(v[1] for v in vectors)
    z = math.fsum(v[2] for v in vectors)
    if math.sqrt(x * x + y * y + z * z) <= MIN_RESULTANT:
        raise DegenerateMeanError(f"mean of {len(vectors)} points is undefined: vectors cancel")
    lat = math.degrees(math.atan2(z, math.hypot(x, y)))
    lon = math.degrees(math.atan2(y, x))
    return GeoPoint(max(-90.0, min(90.0, lat)), lon)


def cell_of(p: GeoPoint, cell_deg: float) -> GridCellId:
    """Grid cell of a point: (floor(lat / cell_deg), floor(lon / cell_deg))."""
    if not cell_deg > 0:
        raise ValidationError(f"cell size must be positive, got {cell_deg}")
    return GridCellId(math.floor(p.lat / cell_deg), math.floor(p.lon / cell_deg))


def km_to_deg_lat(km: float) -> float:
    return km / KM_PER_DEG_LAT


def km_to_deg_lon(km: float, at_lat: float) -> float:
    # Clamp keeps the conversion finite near the poles
    return km / (KM_PER_DEG_LAT * max(math.cos(math.radians(at_lat)), 1e-6))

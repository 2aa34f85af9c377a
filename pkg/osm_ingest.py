"""
OSM XML ingestion: parse node/way elements and pull out street nodes, i.e.
nodes referenced by at least one highway-tagged way, optionally clipped to
a city polygon.
"""

import io
import logging
import math
import os
from dataclasses import dataclass, field
from typing import BinaryIO, Dict, List, Optional, Sequence, Tuple, Union

from lxml import etree

from errors import OsmParseError, OsmRecordError, ValidationError
from geo_core import GeoPoint

logger = logging.getLogger(__name__)

HIGHWAY_KEY = "highway"


@dataclass(frozen=True)
class OsmNode:
    id: int
    location: GeoPoint


@dataclass(frozen=True)
class OsmWay:
    id: int
    node_refs: Tuple[int, ...]
    tags: Dict[str, str] = field(default_factory=dict)

    @property
    def is_highway(self) -> bool:
        return HIGHWAY_KEY in self.tags


@dataclass(frozen=True)
class Polygon:
    """
    A closed ring of (lat, lon) vertices, stored without the closing vertex.

    Vertices are planar coordinates for the ray-casting test and are not
    longitude-normalized, so a ring may use both -180 and 180.
    """

    vertices: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        ring = [(float(lat), float(lon)) for lat, lon in self.vertices]
        if len(ring) > 1 and ring[0] == ring[-1]:
            ring = ring[:-1]
        if len(ring) < 3:
            raise ValidationError(f"polygon needs at least 3 vertices, got {len(ring)}")
        for lat, lon in ring:
            if not (math.isfinite(lat) and math.isfinite(lon)):
                raise ValidationError(f"non-finite polygon vertex ({lat}, {lon})")
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise ValidationError(f"polygon vertex ({lat}, {lon}) out of range")
        object.__setattr__(self, "vertices", tuple(ring))

    @classmethod
    def whole_world(cls) -> "Polygon":
        return cls(((-90.0, -180.0), (-90.0, 180.0), (90.0, 180.0), (90.0, -180.0)))


@dataclass
class ExtractionReport:
    ways_examined: int = 0
    highway_ways: int = 0
    dangling_refs: List[Tuple[int, int]] = field(default_factory=list)  # (way id, node id)
    outside_boundary: int = 0

    @property
    def warnings(self) -> List[str]:
        return [f"way {way_id} references unknown node {node_id}" for way_id, node_id in self.dangling_refs]


def _int_attr(elem, name, what):
    raw = elem.get(name)
    if raw is None:
        raise OsmRecordError(f"{what} element on line {elem.sourceline} has no '{name}' attribute")
    try:
        return int(raw)
    except ValueError:
        raise OsmRecordError(f"{what} element on line {elem.sourceline} has non-integer {name}={raw!r}")


def _parse_node(elem) -> OsmNode:
    node_id = _int_attr(elem, "id", "node")
    missing = [name for name in ("lat", "lon") if elem.get(name) is None]
    if missing:
        raise OsmRecordError(f"node {node_id} is missing {', '.join(missing)}", node_id=node_id)
    try:
        location = GeoPoint(float(elem.get("lat")), float(elem.get("lon")))
    except ValueError as e:
        raise OsmRecordError(f"node {node_id} has an invalid location: {e}", node_id=node_id)
    return OsmNode(node_id, location)


def _parse_way(elem) -> OsmWay:
    way_id = _int_attr(elem, "id", "way")
    refs = tuple(_int_attr(nd, "ref", "nd") for nd in elem.iterchildren("nd"))
    tags = {}
    for tag in elem.iterchildren("tag"):
        key = tag.get("k")
        if key is not None:
            tags[key] = tag.get("v", "")
    return OsmWay(way_id, refs, tags)


def _release(elem):
    """Free a parsed element along with every sibling parsed before it."""
    elem.clear()
    while elem.getprevious() is not None:
        del elem.getparent()[0]


def parse_osm(document: Union[bytes, str, os.PathLike, BinaryIO]) -> Tuple[List[OsmNode], List[OsmWay]]:
    """
    Parse the node/way/nd/tag subset of an OSM XML document.

    Args:
        document: raw bytes, a path, or a binary file object

    Returns:
        (nodes, ways) in document order. Other elements are ignored.

    Raises:
        OsmParseError: malformed XML (message carries the line)
        OsmRecordError: a node without lat/lon, bad ids, duplicate node ids
    """
    if isinstance(document, (str, os.PathLike)) and os.path.getsize(document) == 0:
        return [], []
    if isinstance(document, bytes):
        if not document.strip():
            return [], []
        document = io.BytesIO(document)
    nodes, ways = [], []
    seen_ids = set()
    try:
        for _, elem in etree.iterparse(document, events=("end",), tag=("node", "way")):
            if elem.tag == "node":
                node = _parse_node(elem)
                if node.id in seen_ids:
                    raise OsmRecordError(f"duplicate node id {node.id}", node_id=node.id)
                seen_ids.add(node.id)
                nodes.append(node)
            else:
                way = _parse_way(elem)
                if not way.node_refs:
                    logger.warning("way %d has no node references; skipped", way.id)
                else:
                    ways.append(way)
            _release(elem)
    except etree.XMLSyntaxError as e:
        raise OsmParseError(f"malformed OSM XML: {e.msg}", line=e.lineno)
    return nodes, ways


def point_in_polygon(p: GeoPoint, poly: Polygon) -> bool:
    """
    Even-odd ray casting with lat/lon treated as planar (x = lon, y = lat).

    Points on an edge or vertex count as inside.
    """
    x, y = p.lon, p.lat
    ring = poly.vertices
    n = len(ring)
    if n < 3:
        raise ValidationError("polygon needs at least 3 vertices")

    for i in range(n):
        y1, x1 = ring[i]
        y2, x2 = ring[(i + 1) % n]
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if abs(cross) <= 1e-12 and min(x1, x2) <= x <= max(x1, x2) and min(y1, y2) <= y <= max(y1, y2):
            return True

    inside = False
    j = n - 1
    for i in range(n):
        yi, xi = ring[i]
        yj, xj = ring[j]
        if (yi > y) != (yj > y):
            x_cross = xi + (y - yi) * (xj - xi) / (yj - yi)
            if x < x_cross:
                inside = not inside
        j = i
    return inside


def select_street_nodes(
    nodes: Sequence[OsmNode], ways: Sequence[OsmWay], boundary: Optional[Polygon] = None
) -> Tuple[List[OsmNode], ExtractionReport]:
    """Street nodes (ascending id, deduplicated) plus a report of what was skipped."""
    by_id = {node.id: node for node in nodes}
    report = ExtractionReport()
    street_ids = set()
    for way in ways:
        report.ways_examined += 1
        if not way.is_highway:
            continue
        report.highway_ways += 1
        for ref in way.node_refs:
            if ref in by_id:
                street_ids.add(ref)
            else:
                report.dangling_refs.append((way.id, ref))

    selected = []
    for node_id in sorted(street_ids):
        node = by_id[node_id]
        if boundary is not None and not point_in_polygon(node.location, boundary):
            report.outside_boundary += 1
            continue
        selected.append(node)

    if report.dangling_refs:
        logger.warning("%d dangling node references skipped", len(report.dangling_refs))
    return selected, report


def extract_street_nodes(
    nodes: Sequence[OsmNode], ways: Sequence[OsmWay], boundary: Optional[Polygon] = None
) -> List[GeoPoint]:
    """Locations of nodes on highway-tagged ways, ascending by node id."""
    selected, _ = select_street_nodes(nodes, ways, boundary)
    return [node.location for node in selected]

import pytest
from lxml import etree

from errors import OsmParseError, OsmRecordError, ValidationError
from geo_core import GeoPoint
from osm_ingest import (
    OsmNode,
    OsmWay,
    Polygon,
    _release,
    extract_street_nodes,
    parse_osm,
    point_in_polygon,
    select_street_nodes,
)

UNIT_SQUARE = Polygon(((0, 0), (0, 1), (1, 1), (1, 0)))


def _node(i, lat, lon):
    return OsmNode(i, GeoPoint(lat, lon))


def test_parse_empty_document():
    assert parse_osm(b"<osm/>") == ([], [])
    assert parse_osm(b"") == ([], [])


def test_parse_fixture(osm_fixture):
    nodes, ways = parse_osm(osm_fixture)
    assert [n.id for n in nodes] == [1, 2, 3]
    assert nodes[0].location == GeoPoint(48.8566, 2.3522)
    assert len(ways) == 1
    assert ways[0].node_refs == (1, 2)
    assert ways[0].tags == {"highway": "residential"}


def test_parse_from_path(tmp_path, osm_fixture):
    path = tmp_path / "city.osm"
    path.write_bytes(osm_fixture)
    nodes, ways = parse_osm(str(path))
    assert len(nodes) == 3 and len(ways) == 1


def test_way_without_tags_has_empty_map():
    _, ways = parse_osm(b'<osm><node id="1" lat="0" lon="0"/><way id="5"><nd ref="1"/></way></osm>')
    assert ways[0].tags == {}
    assert not ways[0].is_highway


def test_unknown_elements_ignored():
    doc = b'<osm><bounds minlat="0"/><node id="1" lat="1" lon="2"><tag k="a" v="b"/></node><relation id="9"/></osm>'
    nodes, ways = parse_osm(doc)
    assert [n.id for n in nodes] == [1] and ways == []


def test_release_drops_parsed_siblings():
    root = etree.fromstring(b'<osm><bounds/><node id="1"/><way id="2"><nd ref="1"/></way><relation/></osm>')
    way = root[2]
    _release(way)
    assert [child.tag for child in root] == ["way", "relation"]
    assert len(way) == 0 and way.get("id") is None


def test_interleaved_elements_survive_streaming():
    doc = (
        b"<osm><bounds/>"
        + b"".join(b'<node id="%d" lat="0.%d" lon="1"/><relation id="%d"/>' % (i, i, i) for i in range(1, 50))
        + b'<way id="7"><nd ref="1"/><nd ref="49"/><tag k="highway" v="primary"/></way></osm>'
    )
    nodes, ways = parse_osm(doc)
    assert [n.id for n in nodes] == list(range(1, 50))
    assert ways[0].node_refs == (1, 49) and ways[0].is_highway

def test_malformed_xml_reports_line():
    with pytest.raises(OsmParseError) as info:
        parse_osm(b'<osm>\n<node id="1" lat="0" lon="0">\n</osm>')
    assert info.value.line is not None
    assert "line" in str(info.value)


def test_node_without_location_names_the_node():
    with pytest.raises(OsmRecordError) as info:
        parse_osm(b'<osm><node id="42" lat="1.0"/></osm>')
    assert info.value.node_id == 42
    assert "42" in str(info.value) and "lon" in str(info.value)


def test_duplicate_node_ids_rejected():
    with pytest.raises(OsmRecordError):
        parse_osm(b'<osm><node id="1" lat="0" lon="0"/><node id="1" lat="1" lon="1"/></osm>')


def test_extract_fixture(osm_fixture):
    nodes, ways = parse_osm(osm_fixture)
    assert extract_street_nodes(nodes, ways) == [GeoPoint(48.8566, 2.3522), GeoPoint(48.8570, 2.3530)]


def test_no_highway_ways_gives_nothing():
    nodes = [_node(1, 0, 0), _node(2, 1, 1)]
    ways = [OsmWay(7, (1, 2), {"building": "yes"})]
    assert extract_street_nodes(nodes, ways) == []


def test_boundary_filter():
    nodes = [_node(1, 0.5, 0.5), _node(2, 2, 2)]
    ways = [OsmWay(7, (2, 1), {"highway": "primary"})]
    assert extract_street_nodes(nodes, ways, UNIT_SQUARE) == [GeoPoint(0.5, 0.5)]


def test_dangling_refs_are_reported_not_fatal():
    nodes = [_node(1, 0, 0)]
    ways = [OsmWay(7, (1, 99), {"highway": "service"})]
    selected, report = select_street_nodes(nodes, ways)
    assert [n.id for n in selected] == [1]
    assert report.dangling_refs == [(7, 99)]
    assert len(report.warnings) == 1


def test_output_sorted_and_deduplicated():
    nodes = [_node(5, 0, 5), _node(3, 0, 3), _node(4, 0, 4)]
    ways = [OsmWay(1, (5, 3), {"highway": "a"}), OsmWay(2, (3, 4, 5), {"highway": "b"})]
    selected, _ = select_street_nodes(nodes, ways)
    assert [n.id for n in selected] == [3, 4, 5]


def test_non_highway_way_changes_nothing(osm_fixture):
    nodes, ways = parse_osm(osm_fixture)
    before = extract_street_nodes(nodes, ways)
    after = extract_street_nodes(nodes, ways + [OsmWay(11, (3,), {"landuse": "park"})])
    assert before == after


def test_whole_world_boundary_is_noop(osm_fixture):
    nodes, ways = parse_osm(osm_fixture)
    assert extract_street_nodes(nodes, ways, Polygon.whole_world()) == extract_street_nodes(nodes, ways)


def test_point_in_polygon_cases():
    assert point_in_polygon(GeoPoint(0.5, 0.5), UNIT_SQUARE)
    assert not point_in_polygon(GeoPoint(40, 40), UNIT_SQUARE)
    assert point_in_polygon(GeoPoint(1, 1), UNIT_SQUARE)
    assert point_in_polygon(GeoPoint(0.5, 0), UNIT_SQUARE)


def test_polygon_closing_vertex_dropped():
    ring = Polygon(((0, 0), (0, 1), (1, 1), (0, 0)))
    assert len(ring.vertices) == 3


def test_polygon_needs_three_vertices():
    with pytest.raises(ValidationError):
        Polygon(((0, 0), (1, 1)))

import logging

import numpy as np
import pytest

from errors import InvariantError, ValidationError
from geo_core import GeoPoint, haversine_km, km_to_deg_lat
from geo_localizer import (
    DEFAULT_CITIES,
    CitySpec,
    EvalReport,
    EvalRow,
    GeoIndex,
    GeoRecord,
    evaluate,
    localize,
    per_label_frame,
    report_frame,
    synth_dataset,
)
from geo_sampling import Partition, SplitConfig, grid_split
from vector_index import PQConfig


def _record(rid, lat, lon, emb, label=None):
    return GeoRecord(rid, GeoPoint(lat, lon), np.asarray(emb, dtype=np.float32), label)


@pytest.fixture
def two_landmarks():
    return GeoIndex.build([_record("a", 0, 0, [1, 0]), _record("b", 10, 10, [0, 1])])


def test_nn_one_returns_nearest_location(two_landmarks):
    estimate = localize([0.9, 0.1], two_landmarks, 1)
    assert estimate.predicted == GeoPoint(0, 0)
    assert [nb.id for nb in estimate.neighbors] == [0]


def test_nn_two_averages_on_the_sphere():
    index = GeoIndex.build([_record("a", 0, 0, [1, 0]), _record("b", 0, 2, [0, 1])])
    estimate = localize([0.5, 0.5], index, 2)
    assert estimate.predicted.lat == pytest.approx(0.0, abs=1e-9)
    assert estimate.predicted.lon == pytest.approx(1.0)


def test_localize_rejects_bad_nn(two_landmarks):
    with pytest.raises(ValidationError):
        localize([1, 0], two_landmarks, 3)
    with pytest.raises(ValidationError):
        localize([1, 0], two_landmarks, 0)


def test_evaluate_arithmetic(two_landmarks):
    queries = [
        _record("q1", km_to_deg_lat(0.5), 0, [1, 0]),
        _record("q2", 10 + km_to_deg_lat(100.0), 10, [0, 1]),
    ]
    row = evaluate(queries, two_landmarks, nn_choices=[1]).row(1)
    assert row.mean_distance_error_km == pytest.approx(50.25, rel=1e-6)
    assert row.acc_1km == 0.5
    assert row.acc_25km == 0.5
    assert row.acc_200km == 1.0
    assert row.queries == 2


def test_per_neighbor_scores_every_neighbor():
    index = GeoIndex.build([_record("a", 0, 0, [1, 0]), _record("b", 0, 2, [0, 1])])
    query = [_record("q", 0, 1, [0.5, 0.5])]
    averaged = evaluate(query, index, [2], aggregation="mean").row(2)
    separate = evaluate(query, index, [2], aggregation="per_neighbor").row(2)
    assert averaged.mean_distance_error_km == pytest.approx(0.0, abs=1e-6)
    assert separate.mean_distance_error_km == pytest.approx(haversine_km(GeoPoint(0, 0), GeoPoint(0, 1)))
    assert separate.acc_200km == 1.0 and separate.acc_25km == 0.0


def test_evaluate_validation(two_landmarks):
    q = [_record("q", 0, 0, [1, 0])]
    with pytest.raises(ValidationError):
        evaluate([], two_landmarks)
    with pytest.raises(ValidationError):
        evaluate(q, two_landmarks, [1, 5])
    with pytest.raises(ValidationError):
        evaluate(q, two_landmarks, [1], aggregation="median")


def test_overlapping_ids_warn(two_landmarks, caplog):
    with caplog.at_level(logging.WARNING, logger="geo_localizer"):
        evaluate([_record("a", 0, 0, [1, 0])], two_landmarks, [1])
    assert "also in the index" in caplog.text


def test_monotone_check_catches_decreasing_accuracy():
    report = EvalReport([EvalRow(1, 10.0, {1.0: 0.5, 25.0: 0.4, 200.0: 1.0}, 2)])
    with pytest.raises(InvariantError):
        report.check_monotone()


def _split_cities(seed, cities=DEFAULT_CITIES, dim=16):
    records = synth_dataset(cities, embed_dim=dim, spread_km=2.0, embed_noise=0.1, seed=seed)
    return records[::2], records[1::2]


def test_synthetic_cities_localize_within_25km():
    small = [CitySpec(c.name, c.center, 60) for c in DEFAULT_CITIES]
    index_records, queries = _split_cities(11, small)
    report = evaluate(queries, GeoIndex.build(index_records), (1, 5, 9))
    assert report.row(1).acc_25km >= 0.9
    assert report.row(1).acc_200km == 1.0
    for row in report.rows:
        assert row.acc_1km <= row.acc_25km <= row.acc_200km
    assert set(report.per_label) == {"paris", "berlin", "madrid", "rome"}


def test_grid_split_cities_localize_within_25km():
    records = synth_dataset(DEFAULT_CITIES, embed_dim=16, spread_km=2.0, embed_noise=0.1, seed=5)
    split = grid_split([(r.id, r.location) for r in records], SplitConfig(0.01, 0.8, seed=5))
    index_records = [r for r in records if split[r.id] is Partition.TRAIN]
    queries = [r for r in records if split[r.id] is Partition.TEST]
    assert queries and index_records
    report = evaluate(queries, GeoIndex.build(index_records), (1, 5, 9))
    assert report.row(1).acc_25km >= 0.9
    for row in report.rows:
        assert row.acc_1km <= row.acc_25km <= row.acc_200km


def test_pq_backend_localizes_synthetic_cities():
    small = [CitySpec(c.name, c.center, 60) for c in DEFAULT_CITIES]
    index_records, queries = _split_cities(12, small)
    index = GeoIndex.build(index_records, PQConfig(m=4, k_centroids=16, seed=12))
    assert evaluate(queries, index, [1]).row(1).acc_200km == 1.0


def test_synth_is_seeded():
    a = synth_dataset(DEFAULT_CITIES[:2], 8, 1.0, 0.2, seed=3)
    b = synth_dataset(DEFAULT_CITIES[:2], 8, 1.0, 0.2, seed=3)
    assert [r.location for r in a] == [r.location for r in b]
    assert all(np.array_equal(x.embedding, y.embedding) for x, y in zip(a, b))
    assert [r.id for r in a] == [str(i) for i in range(len(a))]


def test_city_with_no_records_is_absent():
    cities = [CitySpec("here", GeoPoint(0, 0), 5), CitySpec("nowhere", GeoPoint(30, 30), 0)]
    records = synth_dataset(cities, 4, 1.0, 0.1, seed=0)
    assert len(records) == 5
    assert {r.label for r in records} == {"here"}


def test_synth_validation():
    with pytest.raises(ValidationError):
        synth_dataset(DEFAULT_CITIES, 0, 1.0, 0.1, seed=0)
    with pytest.raises(ValidationError):
        synth_dataset(DEFAULT_CITIES, 4, -1.0, 0.1, seed=0)


def test_report_frames():
    small = [CitySpec(c.name, c.center, 20) for c in DEFAULT_CITIES[:2]]
    index_records, queries = _split_cities(5, small, dim=8)
    report = evaluate(queries, GeoIndex.build(index_records), (1, 5))
    frame = report_frame({"synthetic": report})
    assert list(frame.columns) == ["descriptor", "nn", "dist_error_km", "acc_1km", "acc_25km", "acc_200km"]
    assert list(frame["nn"]) == [1, 5]
    labels = per_label_frame(report)
    assert set(labels["label"]) == {"paris", "berlin"}
    assert labels.groupby("nn")["queries"].sum().tolist() == [len(queries), len(queries)]

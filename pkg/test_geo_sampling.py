import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errors import ValidationError
from geo_core import GeoPoint, cell_of
from geo_sampling import (
    Partition,
    SamplingConfig,
    SplitConfig,
    audit_split,
    grid_split,
    kmeans,
    min_pairwise_km,
    sample_random,
    sample_spread,
    spread_indices,
)

PAIRS = [GeoPoint(0, 0), GeoPoint(0, 1), GeoPoint(10, 10), GeoPoint(10, 11)]


def test_two_clusters_found():
    result = kmeans(PAIRS, SamplingConfig(2, seed=4))
    a = result.assignments
    assert a[0] == a[1] and a[2] == a[3] and a[0] != a[2]


def test_k_one_centroid_is_mean():
    result = kmeans(PAIRS, SamplingConfig(1, seed=0))
    assert result.centroids[0].lat == pytest.approx(5.0)
    assert result.centroids[0].lon == pytest.approx(5.5)


def test_spread_medoids_of_pairs():
    # Both members of a pair are equidistant from its mean, so the lower index wins
    assert spread_indices(PAIRS, SamplingConfig(2, seed=4)) == [0, 2]


def test_spread_k_equals_n_is_identity():
    assert sample_spread(PAIRS, SamplingConfig(4, seed=2)) == PAIRS


def test_spread_on_duplicates():
    p, q = GeoPoint(1, 1), GeoPoint(5, 5)
    assert sample_spread([p, p, q, q], SamplingConfig(2, seed=0)) == [p, q]


def test_sampling_errors():
    with pytest.raises(ValidationError):
        kmeans([], SamplingConfig(1))
    with pytest.raises(ValidationError):
        kmeans(PAIRS, SamplingConfig(5))


@pytest.mark.parametrize("seed", range(5))
def test_spread_returns_k_input_members(seed):
    rng = np.random.default_rng(seed)
    pts = [GeoPoint(lat, lon) for lat, lon in rng.uniform(-1, 1, size=(60, 2))]
    chosen = sample_spread(pts, SamplingConfig(7, seed=seed))
    assert len(chosen) == 7 and all(p in pts for p in chosen)


def _clustered_pool(rng, n=300):
    dense = rng.normal(0.0, 0.01, size=(int(n * 0.9), 2))
    background = rng.uniform(-1.0, 1.0, size=(n - len(dense), 2))
    return [GeoPoint(lat, lon) for lat, lon in np.vstack([dense, background])]


def test_spread_beats_random_on_clustered_pool():
    wins = 0
    for seed in range(100):
        pts = _clustered_pool(np.random.default_rng(seed))
        spread = sample_spread(pts, SamplingConfig(10, seed=seed, max_iters=50))
        random = sample_random(pts, 10, seed)
        wins += min_pairwise_km(spread) > min_pairwise_km(random)
    assert wins >= 80


def test_one_cell_one_partition():
    records = [(i, GeoPoint(0.001 * i, 0.001)) for i in range(8)]
    assignment = grid_split(records, SplitConfig(0.01, 0.5, seed=3))
    assert len(set(assignment.values())) == 1


def test_split_reproducible():
    records = [("a", GeoPoint(0.0, 0.0)), ("b", GeoPoint(0.1, 0.1))]
    cfg = SplitConfig(0.01, 0.8, seed=77)
    assert grid_split(records, cfg) == grid_split(records, cfg)


def test_adding_records_never_flips_cells():
    cfg = SplitConfig(0.01, 0.8, seed=5)
    base = [(i, GeoPoint(0.01 * i + 0.005, 0.005)) for i in range(50)]
    more = base + [(100 + i, GeoPoint(0.01 * i + 0.001, 0.002)) for i in range(50)]
    a, b = grid_split(base, cfg), grid_split(more, cfg)
    assert all(b[k] == v for k, v in a.items())


def test_train_share_over_many_cells():
    records = [((r, c), GeoPoint(r * 0.01 + 0.005, c * 0.01 + 0.005)) for r in range(100) for c in range(100)]
    assignment = grid_split(records, SplitConfig(0.01, 0.8, seed=2024))
    share = sum(p is Partition.TRAIN for p in assignment.values()) / len(assignment)
    assert share == pytest.approx(0.8, abs=0.02)


@settings(max_examples=100)
@given(
    st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=60),
    st.integers(min_value=0, max_value=2 ** 64 - 1),
)
def test_no_cell_holds_both_partitions(coords, seed):
    records = [(i, GeoPoint(lat, lon)) for i, (lat, lon) in enumerate(coords)]
    cfg = SplitConfig(0.05, 0.8, seed)
    assignment = grid_split(records, cfg)
    assert audit_split(records, assignment, cfg.cell_deg) == []
    by_cell = {}
    for rid, p in records:
        by_cell.setdefault(cell_of(p, cfg.cell_deg), set()).add(assignment[rid])
    assert all(len(parts) == 1 for parts in by_cell.values())


def test_audit_flags_leaks():
    records = [("a", GeoPoint(0.001, 0.001)), ("b", GeoPoint(0.002, 0.002))]
    leaks = audit_split(records, {"a": Partition.TRAIN, "b": Partition.TEST}, 0.01)
    assert len(leaks) == 1


@pytest.mark.parametrize("fraction", [-0.1, 1.5])
def test_split_config_validation(fraction):
    with pytest.raises(ValidationError):
        SplitConfig(0.01, fraction, seed=0)

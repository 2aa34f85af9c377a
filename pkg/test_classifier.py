import numpy as np
import pytest
from hypothesis import given, strategies as st

from classifier import (
    MAX_RATIO,
    BinaryRates,
    LabeledFeature,
    LinearModel,
    PlattCalibrator,
    TrainConfig,
    aggregate_rates,
    binary_rates,
    concept_metrics,
    confusion,
    hyponym_score,
    metric_distribution,
    parse_neg_ratio,
    rates_frame,
    sample_negatives,
    select_k_by_cv,
    svm_gradient,
    svm_objective,
    train_all,
    train_concept,
    train_svm,
)
from concept_space import Taxonomy
from conftest import two_class_pool
from errors import ValidationError

CONCEPTS = ["Eyeglasses", "Mustache", "Sunglasses", "Hat", "Female", "Male", "Beard"]

# Reference per-concept rates; accuracy is the plain mean of TP and TN
SVM_ONLY = {
    "TP": [0.458, 0.754, 0.598, 0.287, 0.808, 0.290, 0.638],
    "TN": [0.969, 0.794, 0.696, 0.965, 0.884, 0.997, 0.975],
    "FP": [0.030, 0.205, 0.303, 0.034, 0.115, 0.002, 0.024],
    "FN": [0.541, 0.245, 0.401, 0.712, 0.191, 0.709, 0.361],
    "Acc.": [0.714, 0.774, 0.647, 0.626, 0.846, 0.643, 0.806],
}
SVM_ONLY_AVERAGE = {"TP": 0.547, "TN": 0.897, "FP": 0.102, "FN": 0.452, "Acc.": 0.722}

WITH_NEGATIVE_RATIO = {
    "TP": [0.782, 0.758, 0.584, 0.844, 0.933, 0.767, 0.888],
    "TN": [0.921, 0.866, 0.890, 0.622, 0.979, 0.663, 0.923],
    "FP": [0.078, 0.133, 0.110, 0.377, 0.020, 0.336, 0.076],
    "FN": [0.217, 0.241, 0.415, 0.155, 0.066, 0.232, 0.111],
    "Acc.": [0.851, 0.812, 0.737, 0.733, 0.956, 0.715, 0.905],
}
WITH_NEGATIVE_RATIO_AVERAGE = {"TP": 0.794, "TN": 0.837, "FP": 0.162, "FN": 0.205, "Acc.": 0.816}


def _reference_rates(table):
    return [BinaryRates(*(table[row][i] for row in ("TP", "TN", "FP", "FN", "Acc."))) for i in range(len(CONCEPTS))]


@pytest.mark.parametrize("table", [SVM_ONLY, WITH_NEGATIVE_RATIO])
def test_reference_accuracy_is_mean_of_class_rates(table):
    for tp, tn, acc in zip(table["TP"], table["TN"], table["Acc."]):
        assert BinaryRates.from_rates(tp, tn).accuracy == pytest.approx(acc, abs=1e-3)


@pytest.mark.parametrize(
    "table, average", [(SVM_ONLY, SVM_ONLY_AVERAGE), (WITH_NEGATIVE_RATIO, WITH_NEGATIVE_RATIO_AVERAGE)]
)
def test_average_column_reproduced(table, average):
    frame = rates_frame(dict(zip(CONCEPTS, _reference_rates(table))))
    for row, expected in average.items():
        assert frame.loc[row, "Average"] == pytest.approx(expected, abs=1e-3)


def test_rates_frame_layout():
    frame = rates_frame(dict(zip(CONCEPTS, _reference_rates(SVM_ONLY))))
    assert list(frame.index) == ["TP", "TN", "FP", "FN", "Acc."]
    assert list(frame.columns) == CONCEPTS + ["Average"]


def test_binary_rates_from_counts():
    truth = [True] * 1000 + [False] * 1000
    predicted = [True] * 458 + [False] * 542 + [False] * 969 + [True] * 31
    rates = binary_rates(truth, predicted)
    assert rates.tp_rate == pytest.approx(0.458)
    assert rates.tn_rate == pytest.approx(0.969)
    assert rates.fn_rate == pytest.approx(0.542)
    assert rates.accuracy == pytest.approx(0.7135)
    assert rates.identities_hold()


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=2, max_size=200))
def test_rate_identities(pairs):
    truth = [t for t, _ in pairs]
    if all(truth) or not any(truth):
        with pytest.raises(ValidationError):
            binary_rates(truth, [p for _, p in pairs])
        return
    assert binary_rates(truth, [p for _, p in pairs]).identities_hold()


def test_aggregate_of_nothing():
    with pytest.raises(ValidationError):
        aggregate_rates([])


@pytest.mark.parametrize("seed", range(50))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 4))
    y = np.where(rng.random(30) > 0.5, 1.0, -1.0)
    w, b, C = rng.normal(size=4) * 0.3, 0.1, 0.7
    gw, gb = svm_gradient(w, b, X, y, C)
    eps = 1e-6
    for j in range(4):
        e = np.zeros(4)
        e[j] = eps
        numeric = (svm_objective(w + e, b, X, y, C) - svm_objective(w - e, b, X, y, C)) / (2 * eps)
        assert gw[j] == pytest.approx(numeric, rel=1e-4, abs=1e-6)
    numeric_b = (svm_objective(w, b + eps, X, y, C) - svm_objective(w, b - eps, X, y, C)) / (2 * eps)
    assert gb == pytest.approx(numeric_b, rel=1e-4, abs=1e-6)


def test_separable_line():
    model = train_svm([[2.0], [3.0]], [[-2.0], [-3.0]], TrainConfig(C=1.0))
    assert model.predict([[2.0], [3.0]]).all()
    assert not model.predict([[-2.0], [-3.0]]).any()
    assert model.weights[0] > 0


@pytest.mark.parametrize("seed", range(5))
def test_objective_never_increases(seed):
    pool = two_class_pool(60, 5, seed, separation=0.5)
    P = [i.features for i in pool if i.has("pos")]
    N = [i.features for i in pool if not i.has("pos")]
    trace = []
    train_svm(P, N, TrainConfig(C=2.0, epochs=200), trace=trace)
    assert len(trace) >= 2
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))


def test_training_needs_both_classes():
    with pytest.raises(ValidationError):
        train_svm([[1.0]], [], TrainConfig())


def test_scale_invariance_of_predictions():
    pool = two_class_pool(40, 3, 7)
    P = np.array([i.features for i in pool if i.has("pos")])
    N = np.array([i.features for i in pool if not i.has("pos")])
    a = train_svm(P, N, TrainConfig(C=1.0))
    b = train_svm(P * 2.0, N * 2.0, TrainConfig(C=0.25))
    X = np.vstack([P, N])
    np.testing.assert_array_equal(a.predict(X), b.predict(X * 2.0))


def _pool(positives, negatives):
    items = [LabeledFeature(f"p{i}", np.zeros(2), frozenset({"c"})) for i in range(positives)]
    items += [LabeledFeature(f"n{i}", np.ones(2), frozenset()) for i in range(negatives)]
    return items


@pytest.mark.parametrize("ratio, available, expected", [(2, 200, 20), (3, 200, 30), (5, 200, 50), (10, 200, 100), (MAX_RATIO, 200, 200), (5, 30, 30), (10, 30, 30)])
def test_negative_counts(ratio, available, expected):
    chosen = sample_negatives("c", _pool(10, available), TrainConfig(neg_ratio=ratio, seed=1))
    assert len(chosen) == expected
    assert not any(item.has("c") for item in chosen)
    assert len({item.id for item in chosen}) == expected


def test_negatives_are_seeded():
    pool = _pool(10, 200)
    a = sample_negatives("c", pool, TrainConfig(neg_ratio=2, seed=9))
    b = sample_negatives("c", pool, TrainConfig(neg_ratio=2, seed=9))
    assert [i.id for i in a] == [i.id for i in b]


def test_no_negatives_available():
    with pytest.raises(ValidationError):
        sample_negatives("c", _pool(3, 0), TrainConfig())


@pytest.mark.parametrize("value", [0, -1, "lots", None])
def test_bad_ratio(value):
    with pytest.raises(ValidationError):
        parse_neg_ratio(value)


def test_ratio_parsing():
    assert parse_neg_ratio("MAX") == MAX_RATIO
    assert parse_neg_ratio("3") == 3


def test_cv_tie_picks_smallest_ratio():
    pool = two_class_pool(100, 4, 3, separation=5.0)
    best, per_k = select_k_by_cv("pos", pool, TrainConfig(seed=3))
    assert set(per_k) == {2, 3, 5, 10, MAX_RATIO}
    assert all(score == 1.0 for score in per_k.values())
    assert best == 2


def test_cv_prefers_a_finite_ratio_on_rare_overlapping_positives():
    finite = 0
    for seed in range(20):
        # 5 positives among 505 items in heavily overlapping clusters
        pool = two_class_pool(505, 4, seed, separation=0.35, positive_every=101)
        best, per_k = select_k_by_cv("pos", pool, TrainConfig(epochs=200, seed=seed))
        assert set(per_k) == {2, 3, 5, 10, MAX_RATIO}
        finite += best != MAX_RATIO
    assert finite > 10


def test_cv_needs_enough_positives():
    with pytest.raises(ValidationError):
        select_k_by_cv("c", _pool(3, 50), TrainConfig())


def test_train_all_matches_serial():
    pool = two_class_pool(40, 3, 2)
    for item in pool[:10]:
        item.labels = item.labels | {"first"}
    cfg = TrainConfig(seed=2)
    serial = train_all(["pos", "first"], pool, cfg, workers=1)
    threaded = train_all(["pos", "first"], pool, cfg, workers=2)
    assert [m.concept for m in threaded] == ["pos", "first"]
    for a, b in zip(serial, threaded):
        np.testing.assert_array_equal(a.weights, b.weights)


def test_model_dict_round_trip_rejects_nan():
    model = train_concept("pos", two_class_pool(20, 2, 0), TrainConfig())
    assert LinearModel.from_dict(model.to_dict()).bias == model.bias
    with pytest.raises(ValidationError):
        LinearModel.from_dict({"concept": "x", "bias": float("nan"), "weights": [1.0]})


def _three_concept_test_set():
    centers = {"a": (5.0, 0.0), "b": (0.0, 5.0), "c": (-5.0, -5.0)}
    rng = np.random.default_rng(0)
    items = []
    for label, center in centers.items():
        for i in range(10):
            items.append(LabeledFeature(f"{label}{i}", rng.normal(center, 0.5), frozenset({label})))
    return items


def test_confusion_diagonal_when_separable():
    items = _three_concept_test_set()
    cfg = TrainConfig(neg_ratio=MAX_RATIO)
    models = train_all(["a", "b", "c"], items, cfg)
    matrix = confusion(models, items)
    np.testing.assert_array_equal(matrix.counts, np.diag([10, 10, 10]))
    assert list(matrix.to_frame().sum(axis=1)) == [10, 10, 10]


def test_confusion_rejects_multi_label_items():
    items = _three_concept_test_set()
    models = train_all(["a", "b", "c"], items, TrainConfig(neg_ratio=MAX_RATIO))
    items[0].labels = frozenset({"a", "b"})
    with pytest.raises(ValidationError):
        confusion(models, items)


def test_confusion_on_empty_test_set():
    model = LinearModel("a", np.zeros(2), 0.0)
    assert confusion([model], []).counts.tolist() == [[0]]


def test_hyponym_takes_best_descendant(weapon_taxonomy):
    assert hyponym_score("gun", {"gun": 0.5, "revolver": 0.2, "rifle": 0.9}, weapon_taxonomy) == 0.9
    assert hyponym_score("weapon", {"weapon": 0.1, "gun": 0.3, "rifle": 0.7}, weapon_taxonomy) == 0.7


def test_hyponym_of_leaf_is_own_score(weapon_taxonomy):
    assert hyponym_score("knife", {"knife": 0.4, "gun": 0.9}, weapon_taxonomy) == 0.4


@pytest.mark.parametrize("seed", range(30))
def test_hyponym_score_never_drops_when_a_descendant_is_scored(seed):
    rng = np.random.default_rng(seed)
    taxonomy = Taxonomy({f"n{i:02d}": (f"n{rng.integers(i):02d}" if i else None) for i in range(12)})
    target = taxonomy.nodes[int(rng.integers(len(taxonomy)))]
    scores = {target: float(rng.normal())}
    before = hyponym_score(target, scores, taxonomy)
    for node in taxonomy.descendants(target):
        scores[node] = float(rng.normal())
        after = hyponym_score(target, scores, taxonomy)
        assert after >= before
        before = after


def test_hyponym_errors(weapon_taxonomy):
    with pytest.raises(ValidationError):
        hyponym_score("tank", {"tank": 1.0}, weapon_taxonomy)
    with pytest.raises(ValidationError):
        hyponym_score("knife", {"gun": 1.0}, weapon_taxonomy)


def test_concept_metrics_and_distribution():
    m = concept_metrics([1, 1, 0, 0], [1, 0, 0, 1])
    assert (m.precision, m.recall, m.f1, m.accuracy) == (0.5, 0.5, 0.5, 0.5)
    table = metric_distribution({"x": m, "y": concept_metrics([1, 0], [1, 0])})
    assert table.loc["mean", "accuracy"] == pytest.approx(0.75)
    assert list(table.columns) == ["accuracy", "precision", "recall", "f1"]


def test_platt_calibration_is_monotone():
    scores = np.linspace(-3, 3, 40)
    truth = scores + np.random.default_rng(1).normal(0, 1, size=40) > 0
    calibrator = PlattCalibrator(seed=1).fit(scores, truth)
    p = calibrator.probability([-2.0, 0.0, 2.0])
    assert 0 < p[0] < p[1] < p[2] < 1
    with pytest.raises(ValidationError):
        PlattCalibrator().probability([0.0])
    with pytest.raises(ValidationError):
        PlattCalibrator().fit([0.0, 1.0], [True, True])

"""
One-versus-many linear SVM training over precomputed features, negative
ratio selection by cross-validation, and the per-concept metric suites.

The model is an L2-regularized L2-loss SVM:

    f(w, b) = 1/2 ||w||^2 + C * sum_i max(0, 1 - y_i (w.x_i + b))^2

A concept scores x with w.x + b and predicts positive when the score is > 0.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import f1_score, precision_recall_fscore_support
from sklearn.model_selection import StratifiedKFold

from concept_space import normalize_term
from errors import ValidationError

logger = logging.getLogger(__name__)

MAX_RATIO = "max"
DEFAULT_K_GRID = (2, 3, 5, 10, MAX_RATIO)
NegRatio = Union[int, str]


@dataclass
class LabeledFeature:
    id: str
    features: np.ndarray
    labels: FrozenSet[str]

    def has(self, concept: str) -> bool:
        return concept in self.labels


@dataclass
class LinearModel:
    concept: str
    weights: np.ndarray
    bias: float

    def score(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return X @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        return self.score(X) > 0

    def to_dict(self) -> dict:
        return {"concept": self.concept, "bias": float(self.bias), "weights": [float(w) for w in self.weights]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "LinearModel":
        weights = np.asarray(data["weights"], dtype=np.float64)
        if not np.isfinite(weights).all() or not math.isfinite(float(data["bias"])):
            raise ValidationError(f"model {data.get('concept')!r} has non-finite parameters")
        return cls(str(data["concept"]), weights, float(data["bias"]))


def parse_neg_ratio(value) -> NegRatio:
    if isinstance(value, str) and value.strip().lower() == MAX_RATIO:
        return MAX_RATIO
    try:
        k = int(value)
    except (TypeError, ValueError):
        raise ValidationError(f"negative ratio must be a positive integer or 'max', got {value!r}")
    if k < 1:
        raise ValidationError(f"negative ratio must be positive, got {k}")
    return k


@dataclass(frozen=True)
class TrainConfig:
    C: float = 1.0
    neg_ratio: NegRatio = 5
    epochs: int = 500
    tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise ValidationError(f"C must be positive, got {self.C}")
        object.__setattr__(self, "neg_ratio", parse_neg_ratio(self.neg_ratio))
        if self.epochs < 1:
            raise ValidationError("epochs must be positive")
        if self.tol < 0:
            raise ValidationError("tol must be non-negative")

    def with_ratio(self, neg_ratio: NegRatio) -> "TrainConfig":
        return TrainConfig(self.C, neg_ratio, self.epochs, self.tol, self.seed)


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


def svm_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, C: float) -> float:
    slack = np.maximum(0.0, 1.0 - y * (X @ w + b))
    return 0.5 * float(w @ w) + C * float(slack @ slack)


def svm_gradient(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, C: float) -> Tuple[np.ndarray, float]:
    slack = np.maximum(0.0, 1.0 - y * (X @ w + b))
    coef = -2.0 * C * y * slack
    return w + X.T @ coef, float(coef.sum())


def _stack(positives, negatives) -> Tuple[np.ndarray, np.ndarray]:
    P = np.asarray(positives, dtype=np.float64)
    N = np.asarray(negatives, dtype=np.float64)
    if P.ndim == 1:
        P = P.reshape(1, -1) if P.size else P.reshape(0, 0)
    if N.ndim == 1:
        N = N.reshape(1, -1) if N.size else N.reshape(0, 0)
    if len(P) == 0 or len(N) == 0:
        raise ValidationError("training needs at least one positive and one negative example")
    if P.shape[1] != N.shape[1]:
        raise ValidationError(f"positives have dimension {P.shape[1]}, negatives {N.shape[1]}")
    X = np.vstack([P, N])
    if not np.isfinite(X).all():
        raise ValidationError("training features contain non-finite values")
    y = np.concatenate([np.ones(len(P)), -np.ones(len(N))])
    return X, y


def train_svm(positives, negatives, cfg: TrainConfig, concept: str = "", trace: Optional[List[float]] = None) -> LinearModel:
    """
    Full-batch gradient descent from zero weights with a backtracking
    (Armijo) step, so the objective never increases between epochs.

    Stops when an epoch improves the objective by less than tol (relative)
    or after cfg.epochs epochs. If trace is given, the objective after
    initialization and after every epoch is appended to it.
    """
    X, y = _stack(positives, negatives)
    w = np.zeros(X.shape[1])
    b = 0.0
    f = svm_objective(w, b, X, y, cfg.C)
    if trace is not None:
        trace.append(f)

    # 1/L for the smooth objective, L <= 1 + 2C * sigma_max([X 1])^2
    Xb = np.hstack([X, np.ones((len(X), 1))])
    step = 1.0 / (1.0 + 2.0 * cfg.C * np.linalg.norm(Xb, 2) ** 2)

    for _ in range(cfg.epochs):
        gw, gb = svm_gradient(w, b, X, y, cfg.C)
        g2 = float(gw @ gw) + gb * gb
        if g2 == 0.0:
            break
        t = step * 4.0
        while True:
            w_new, b_new = w - t * gw, b - t * gb
            f_new = svm_objective(w_new, b_new, X, y, cfg.C)
            if f_new <= f - 0.5 * t * g2 or t < 1e-20:
                break
            t *= 0.5
        if f_new > f:
            break
        improvement = f - f_new
        w, b, f = w_new, b_new, f_new
        step = t
        if trace is not None:
            trace.append(f)
        if improvement <= cfg.tol * max(1.0, abs(f)):
            break
    return LinearModel(concept, w, b)


# ---------------------------------------------------------------------------
# One-versus-many training
# ---------------------------------------------------------------------------


def _matrix(items: Sequence[LabeledFeature]) -> np.ndarray:
    return np.vstack([np.asarray(item.features, dtype=np.float64) for item in items])


def sample_negatives(
    concept: str,
    pool: Sequence[LabeledFeature],
    cfg: TrainConfig,
    n_positives: Optional[int] = None,
) -> List[LabeledFeature]:
    """
    min(k * positives, available) items not labeled with concept, sampled
    uniformly without replacement; k = "max" returns all of them.

    Positives are counted in pool unless n_positives is given. The result
    keeps pool order.
    """
    available = [item for item in pool if not item.has(concept)]
    if not available:
        raise ValidationError(f"no negatives available for concept {concept!r}")
    if cfg.neg_ratio == MAX_RATIO:
        return available
    if n_positives is None:
        n_positives = sum(1 for item in pool if item.has(concept))
    size = min(cfg.neg_ratio * n_positives, len(available))
    rng = np.random.default_rng(cfg.seed)
    chosen = np.sort(rng.choice(len(available), size=size, replace=False))
    return [available[i] for i in chosen]


def train_concept(concept: str, pool: Sequence[LabeledFeature], cfg: TrainConfig) -> LinearModel:
    positives = [item for item in pool if item.has(concept)]
    if not positives:
        raise ValidationError(f"no positives for concept {concept!r}")
    negatives = sample_negatives(concept, pool, cfg, len(positives))
    model = train_svm(_matrix(positives), _matrix(negatives), cfg, concept)
    logger.debug("trained %s on %d positives / %d negatives", concept, len(positives), len(negatives))
    return model


def train_all(
    concepts: Sequence[str], pool: Sequence[LabeledFeature], cfg: TrainConfig, workers: int = 1
) -> List[LinearModel]:
    """Independent per-concept jobs; results come back in concept order."""
    if workers <= 1:
        return [train_concept(c, pool, cfg) for c in concepts]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(lambda c: train_concept(c, pool, cfg), concepts))


def _ratio_order(k: NegRatio) -> float:
    return math.inf if k == MAX_RATIO else float(k)


def select_k_by_cv(
    concept: str,
    dataset: Sequence[LabeledFeature],
    cfg: TrainConfig,
    k_grid: Sequence[NegRatio] = DEFAULT_K_GRID,
    folds: int = 5,
) -> Tuple[NegRatio, Dict[NegRatio, float]]:
    """
    Pick the negative ratio with the best mean F1 over stratified folds.

    Ties go to the smaller k ("max" counts as the largest).
    """
    grid = sorted({parse_neg_ratio(k) for k in k_grid}, key=_ratio_order)
    y = np.array([item.has(concept) for item in dataset])
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if folds < 2:
        raise ValidationError("cross-validation needs at least 2 folds")
    if n_pos < folds or n_neg < folds:
        raise ValidationError(f"{concept!r} has {n_pos} positives / {n_neg} negatives; {folds} folds need at least {folds} of each")

    X = _matrix(dataset)
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=cfg.seed % (2 ** 32))
    splits = list(splitter.split(X, y))
    per_k = {}
    for k in grid:
        fold_cfg = cfg.with_ratio(k)
        scores = []
        for train_idx, test_idx in splits:
            train_items = [dataset[i] for i in train_idx]
            model = train_concept(concept, train_items, fold_cfg)
            scores.append(f1_score(y[test_idx], model.predict(X[test_idx]), zero_division=0))
        per_k[k] = float(np.mean(scores))

    best = grid[0]
    for k in grid[1:]:
        if per_k[k] > per_k[best]:
            best = k
    return best, per_k


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinaryRates:
    tp_rate: float
    tn_rate: float
    fp_rate: float
    fn_rate: float
    accuracy: float

    @classmethod
    def from_rates(cls, tp_rate: float, tn_rate: float) -> "BinaryRates":
        return cls(tp_rate, tn_rate, 1.0 - tn_rate, 1.0 - tp_rate, (tp_rate + tn_rate) / 2.0)

    def identities_hold(self, tol: float = 1e-9) -> bool:
        return (
            abs(self.tp_rate + self.fn_rate - 1.0) <= tol
            and abs(self.tn_rate + self.fp_rate - 1.0) <= tol
            and abs(self.accuracy - (self.tp_rate + self.tn_rate) / 2.0) <= tol
        )


RATE_ROWS = (("TP", "tp_rate"), ("TN", "tn_rate"), ("FP", "fp_rate"), ("FN", "fn_rate"), ("Acc.", "accuracy"))


def _bool_pair(truth, predicted) -> Tuple[np.ndarray, np.ndarray]:
    t = np.asarray(truth, dtype=bool)
    p = np.asarray(predicted, dtype=bool)
    if t.shape != p.shape or t.ndim != 1:
        raise ValidationError(f"truth and predictions must be equal-length lists, got {t.shape} and {p.shape}")
    return t, p


def binary_rates(truth, predicted) -> BinaryRates:
    """Per-class rates; accuracy is the mean of the TP and TN rates."""
    t, p = _bool_pair(truth, predicted)
    positives, negatives = int(t.sum()), int((~t).sum())
    if positives == 0 or negatives == 0:
        raise ValidationError("rates are undefined unless truth holds both classes")
    tp = int((t & p).sum())
    tn = int((~t & ~p).sum())
    return BinaryRates.from_rates(tp / positives, tn / negatives)


def aggregate_rates(per_concept: Sequence[BinaryRates]) -> BinaryRates:
    """Field-wise arithmetic mean (the Average column)."""
    if not per_concept:
        raise ValidationError("nothing to aggregate")
    n = len(per_concept)
    return BinaryRates(
        *(math.fsum(getattr(r, attr) for r in per_concept) / n for _, attr in RATE_ROWS[:4]),
        math.fsum(r.accuracy for r in per_concept) / n,
    )


def rates_frame(per_concept: Mapping[str, BinaryRates]) -> pd.DataFrame:
    """Rows TP/TN/FP/FN/Acc., one column per concept plus Average."""
    columns = dict(per_concept)
    columns["Average"] = aggregate_rates(list(per_concept.values()))
    data = {name: [getattr(r, attr) for _, attr in RATE_ROWS] for name, r in columns.items()}
    return pd.DataFrame(data, index=[row for row, _ in RATE_ROWS])


@dataclass(frozen=True)
class ConceptMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float


def concept_metrics(truth, predicted) -> ConceptMetrics:
    t, p = _bool_pair(truth, predicted)
    precision, recall, f1, _ = precision_recall_fscore_support(t, p, average="binary", zero_division=0)
    return ConceptMetrics(float(precision), float(recall), float(f1), float((t == p).mean()))


def metric_distribution(per_concept: Mapping[str, ConceptMetrics]) -> pd.DataFrame:
    """Summary statistics of each metric across concepts."""
    frame = pd.DataFrame({name: vars(m) for name, m in per_concept.items()}).T
    return frame[["accuracy", "precision", "recall", "f1"]].describe()


@dataclass
class ConfusionMatrix:
    concepts: List[str]
    counts: np.ndarray  # (n, n) truth x predicted

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.counts, index=self.concepts, columns=self.concepts)


def confusion(models: Sequence[LinearModel], test: Sequence[LabeledFeature]) -> ConfusionMatrix:
    """Truth x argmax-prediction counts; ties go to the first model."""
    if not models:
        raise ValidationError("confusion needs at least one model")
    concepts = [m.concept for m in models]
    position = {c: i for i, c in enumerate(concepts)}
    counts = np.zeros((len(models), len(models)), dtype=np.int64)
    if not test:
        return ConfusionMatrix(concepts, counts)
    truth = []
    for item in test:
        if len(item.labels) != 1:
            raise ValidationError(f"item {item.id} must carry exactly one label, has {sorted(item.labels)}")
        (label,) = item.labels
        if label not in position:
            raise ValidationError(f"item {item.id} is labeled {label!r}, which has no model")
        truth.append(position[label])
    X = _matrix(test)
    W = np.vstack([m.weights for m in models])
    if W.shape[1] != X.shape[1]:
        raise ValidationError(f"models expect dimension {W.shape[1]}, features have {X.shape[1]}")
    scores = X @ W.T + np.array([m.bias for m in models])
    predicted = np.argmax(scores, axis=1)
    np.add.at(counts, (np.array(truth), predicted), 1)
    return ConfusionMatrix(concepts, counts)


def hyponym_score(target: str, scores: Mapping[str, float], taxonomy) -> float:
    """Best score among target and all its descendants; unscored nodes are skipped."""
    if target not in taxonomy:
        raise ValidationError(f"unknown concept {target!r}")
    scores = {normalize_term(name): value for name, value in scores.items()}
    nodes = [normalize_term(target), *taxonomy.descendants(target)]
    candidates = [scores[n] for n in nodes if n in scores]
    if not candidates:
        raise ValidationError(f"no scored concept under {target!r}")
    return max(candidates)


class PlattCalibrator:
    """Maps raw SVM scores to probabilities with a one-feature logistic fit."""

    def __init__(self, seed: int = 0):
        self._model = LogisticRegression(random_state=seed % (2 ** 32))
        self.fitted = False

    def fit(self, scores, truth) -> "PlattCalibrator":
        s = np.asarray(scores, dtype=np.float64).reshape(-1, 1)
        t = np.asarray(truth, dtype=bool)
        if t.all() or not t.any():
            raise ValidationError("calibration needs both classes")
        self._model.fit(s, t)
        self.fitted = True
        return self

    def probability(self, scores) -> np.ndarray:
        if not self.fitted:
            raise ValidationError("calibrator has not been fitted")
        return self._model.predict_proba(np.asarray(scores, dtype=np.float64).reshape(-1, 1))[:, 1]

    def predict(self, scores, threshold: float = 0.5) -> np.ndarray:
        return self.probability(scores) > threshold

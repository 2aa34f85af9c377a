"""
Simulated annotate-train-select loop with a ground-truth oracle standing in
for the human annotator, and a time-cost model for the annotation actions.

Items are whole images labeled for one concept; box counts only enter
through CostModel.boxes_per_image.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from classifier import LabeledFeature, LinearModel, TrainConfig, train_svm
from errors import ModelRequiredError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_SEED_COUNT = 20


class Strategy(str, Enum):
    RANDOM = "random"
    UNCERTAINTY = "uncertainty"
    HIGH_CONFIDENCE = "high-confidence"

    @property
    def needs_model(self) -> bool:
        return self is not Strategy.RANDOM


@dataclass(frozen=True)
class CostModel:
    """
    Seconds per annotation action; train_s is charged once per retrain.

    misaligned_fraction is the share of accepted automatic boxes that need
    moving or resizing, each charged modify_s instead of accept_s.
    """

    draw_s: float = 3.6
    accept_s: float = 1.0
    delete_s: float = 1.0
    modify_s: float = 3.0
    train_s: float = 89.0
    boxes_per_image: float = 1.3
    misaligned_fraction: float = 0.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if not (math.isfinite(value) and value >= 0):
                raise ValidationError(f"cost {name} must be a non-negative number, got {value}")
        if self.misaligned_fraction > 1.0:
            raise ValidationError(f"misaligned_fraction must lie in [0, 1], got {self.misaligned_fraction}")

    @property
    def validate_s(self) -> float:
        """Expected seconds per box for a correct automatic detection."""
        return (1.0 - self.misaligned_fraction) * self.accept_s + self.misaligned_fraction * self.modify_s

    @classmethod
    def zero(cls) -> "CostModel":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class HistoryEntry:
    round: int
    labeled: int
    map: float
    elapsed_s: float
    boxes: float
    accepted: int = 0
    deleted: int = 0
    drawn: int = 0


@dataclass
class ALState:
    items: Dict[str, LabeledFeature]
    concept: str
    labeled: List[str] = field(default_factory=list)
    pool: List[str] = field(default_factory=list)
    model: Optional[LinearModel] = None
    elapsed_s: float = 0.0
    boxes: float = 0.0
    history: List[HistoryEntry] = field(default_factory=list)

    @classmethod
    def start(cls, dataset: Sequence[LabeledFeature], concept: str) -> "ALState":
        items = {item.id: item for item in dataset}
        if len(items) != len(dataset):
            raise ValidationError("dataset ids must be unique")
        return cls(items=items, concept=concept, pool=sorted(items))

    def check_partition(self):
        labeled, pool = set(self.labeled), set(self.pool)
        if labeled & pool or labeled | pool != set(self.items):
            raise ValidationError("labeled and pool ids no longer partition the dataset")


@dataclass
class ConceptRanking:
    concept: str
    ids: List[str]
    scores: np.ndarray
    truth: np.ndarray


def average_precision(ids: Sequence[str], scores, truth) -> float:
    """Mean precision at each positive's rank; score ties ranked by ascending id."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    if not truth.any():
        raise ValidationError("average precision needs at least one positive")
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    hits, precisions = 0, []
    for rank, i in enumerate(order, start=1):
        if truth[i]:
            hits += 1
            precisions.append(hits / rank)
    return math.fsum(precisions) / len(precisions)


def mean_average_precision(rankings: Sequence[ConceptRanking]) -> float:
    if not rankings:
        raise ValidationError("mAP needs at least one concept")
    return math.fsum(average_precision(r.ids, r.scores, r.truth) for r in rankings) / len(rankings)


def _scores(state: ALState, ids: Sequence[str]) -> np.ndarray:
    X = np.vstack([state.items[i].features for i in ids])
    return state.model.score(X)


def select_batch(state: ALState, strategy: Strategy, batch: int, seed: int) -> List[str]:
    """
    Pick the next ids to annotate from the pool.

    Random samples uniformly; Uncertainty takes the smallest |score|;
    HighConfidence takes the largest score. Ties go to the ascending id.
    """
    strategy = Strategy(strategy)
    if not 1 <= batch <= len(state.pool):
        raise ValidationError(f"batch must be in [1, {len(state.pool)}], got {batch}")
    pool = sorted(state.pool)
    if strategy is Strategy.RANDOM:
        rng = np.random.default_rng(seed)
        return [pool[i] for i in np.sort(rng.choice(len(pool), size=batch, replace=False))]
    if state.model is None:
        raise ModelRequiredError(f"{strategy.value} sampling needs a trained model; run the seed round first")
    scores = _scores(state, pool)
    keys = np.abs(scores) if strategy is Strategy.UNCERTAINTY else -scores
    order = sorted(range(len(pool)), key=lambda i: (keys[i], pool[i]))
    return [pool[i] for i in order[:batch]]


def _retrain(state: ALState, cfg: TrainConfig) -> Optional[LinearModel]:
    labeled = [state.items[i] for i in sorted(state.labeled)]
    positives = [item.features for item in labeled if item.has(state.concept)]
    negatives = [item.features for item in labeled if not item.has(state.concept)]
    if not positives or not negatives:
        logger.warning("labeled set holds only one class; keeping the previous model")
        return state.model
    return train_svm(positives, negatives, cfg, state.concept)


def _test_map(model: Optional[LinearModel], test_set: Sequence[LabeledFeature], concept: str) -> float:
    ids = [item.id for item in test_set]
    truth = np.array([item.has(concept) for item in test_set])
    if model is None:
        scores = np.zeros(len(test_set))
    else:
        scores = model.score(np.vstack([item.features for item in test_set]))
    return mean_average_precision([ConceptRanking(concept, ids, scores, truth)])


def _record(state: ALState, round_no: int, test_set, counts: Mapping[str, int]):
    state.history.append(
        HistoryEntry(
            round=round_no,
            labeled=len(state.labeled),
            map=_test_map(state.model, test_set, state.concept),
            elapsed_s=state.elapsed_s,
            boxes=state.boxes,
            accepted=counts.get("accepted", 0),
            deleted=counts.get("deleted", 0),
            drawn=counts.get("drawn", 0),
        )
    )


def step(
    state: ALState,
    strategy: Strategy,
    batch: int,
    oracle: Mapping[str, bool],
    cost: CostModel,
    cfg: TrainConfig,
    test_set: Sequence[LabeledFeature],
    seed: int = 0,
) -> ALState:
    """
    One annotation round: select, ask the oracle, charge time, retrain.

    Random and Uncertainty items are drawn by hand (draw_s per box).
    HighConfidence items are validated: accept_s per box when the model's
    prediction matches the oracle (modify_s for the misaligned share),
    delete_s + draw_s per box otherwise.
    """
    strategy = Strategy(strategy)
    if not state.pool:
        raise ValidationError("the unlabeled pool is empty")
    if strategy.needs_model and state.model is None:
        logger.warning("no model yet for %s sampling; this round samples at random", strategy.value)
        chosen = select_batch(state, Strategy.RANDOM, batch, seed)
    else:
        chosen = select_batch(state, strategy, batch, seed)

    counts = {"accepted": 0, "deleted": 0, "drawn": 0}
    boxes = cost.boxes_per_image
    validating = strategy is Strategy.HIGH_CONFIDENCE and state.model is not None
    predictions = dict(zip(chosen, _scores(state, chosen) > 0)) if validating else {}
    seconds = []
    for item_id in chosen:
        truth = bool(oracle[item_id])
        if validating and bool(predictions[item_id]) == truth:
            seconds.append(cost.validate_s * boxes)
            counts["accepted"] += 1
        elif validating:
            seconds.append((cost.delete_s + cost.draw_s) * boxes)
            counts["deleted"] += 1
            counts["drawn"] += 1
        else:
            seconds.append(cost.draw_s * boxes)
            counts["drawn"] += 1

    chosen_set = set(chosen)
    new_state = replace(
        state,
        labeled=sorted(set(state.labeled) | chosen_set),
        pool=[i for i in state.pool if i not in chosen_set],
        history=list(state.history),
        elapsed_s=state.elapsed_s + math.fsum(seconds) + cost.train_s,
        boxes=state.boxes + boxes * len(chosen),
    )
    new_state.model = _retrain(new_state, cfg)
    new_state.check_partition()
    _record(new_state, len(state.history), test_set, counts)
    return new_state


def run(
    dataset: Sequence[LabeledFeature],
    test_set: Sequence[LabeledFeature],
    concept: str,
    strategy: Strategy,
    rounds: int,
    batch: int,
    cost: CostModel,
    cfg: TrainConfig,
    seed: int,
    seed_count: int = DEFAULT_SEED_COUNT,
) -> List[HistoryEntry]:
    """
    Seed round of seed_count randomly chosen items drawn by hand, then
    `rounds` rounds of `step`. The seed round depends only on seed, so
    every strategy starts from the same labeled set.
    """
    if rounds < 0:
        raise ValidationError("rounds must be non-negative")
    overlap = {item.id for item in dataset} & {item.id for item in test_set}
    if overlap:
        raise ValidationError(f"{len(overlap)} ids appear in both the pool and the test set")
    if not test_set:
        raise ValidationError("the test set is empty")

    oracle = {item.id: item.has(concept) for item in dataset}
    state = ALState.start(dataset, concept)
    if not 1 <= seed_count <= len(state.pool):
        raise ValidationError(f"seed_count must be in [1, {len(state.pool)}], got {seed_count}")

    rng = np.random.default_rng(seed)
    seed_ids = select_batch(state, Strategy.RANDOM, seed_count, int(rng.integers(2 ** 63)))
    state.labeled = sorted(seed_ids)
    state.pool = [i for i in state.pool if i not in set(seed_ids)]
    state.elapsed_s = cost.draw_s * cost.boxes_per_image * seed_count + cost.train_s
    state.boxes = cost.boxes_per_image * seed_count
    state.model = _retrain(state, cfg)
    state.check_partition()
    _record(state, 0, test_set, {"drawn": seed_count})

    for _ in range(rounds):
        if not state.pool:
            break
        state = step(state, strategy, min(batch, len(state.pool)), oracle, cost, cfg, test_set, int(rng.integers(2 ** 63)))
    return state.history


def history_frame(history: Sequence[HistoryEntry], strategy: Optional[str] = None) -> pd.DataFrame:
    frame = pd.DataFrame([vars(h) for h in history], columns=list(HistoryEntry.__dataclass_fields__))
    frame = frame[["round", "labeled", "map", "elapsed_s", "boxes", "accepted", "deleted", "drawn"]]
    if strategy is not None:
        frame.insert(0, "strategy", strategy)
    return frame


def map_at_labeled(history: Sequence[HistoryEntry], labeled: int) -> float:
    """mAP of the last round with at most `labeled` annotated items."""
    eligible = [h for h in history if h.labeled <= labeled]
    return eligible[-1].map if eligible else float("nan")


def map_at_budget(history: Sequence[HistoryEntry], budget_s: float) -> float:
    """mAP of the last round finished within budget_s simulated seconds."""
    eligible = [h for h in history if h.elapsed_s <= budget_s]
    return eligible[-1].map if eligible else float("nan")


def time_to_map(history: Sequence[HistoryEntry], threshold: float) -> float:
    """Simulated seconds until mAP first reaches threshold; inf if it never does."""
    for h in history:
        if h.map >= threshold:
            return h.elapsed_s
    return math.inf


def compare_strategies(
    histories: Mapping[str, Sequence[Sequence[HistoryEntry]]], at_labeled: int, map_threshold: float
) -> pd.DataFrame:
    """
    Two-column comparison per strategy over repeated runs: mean mAP at a
    labeled-item count, and median minutes to reach an mAP threshold.
    """
    rows = []
    for name, runs in histories.items():
        maps = [map_at_labeled(h, at_labeled) for h in runs]
        minutes = [time_to_map(h, map_threshold) / 60.0 for h in runs]
        rows.append(
            {
                "strategy": name,
                f"map_at_{at_labeled}": float(np.nanmean(maps)) if not all(math.isnan(m) for m in maps) else float("nan"),
                f"minutes_to_map_{map_threshold:g}": float(np.median(minutes)),
                "runs": len(runs),
            }
        )
    return pd.DataFrame(rows)

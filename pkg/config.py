"""
Run configuration: built-in defaults, optionally overridden by a YAML file,
then by command-line flags.
"""

import math
from dataclasses import dataclass, fields, replace
from typing import Optional, Tuple

import yaml

from active_sim import CostModel
from classifier import TrainConfig, parse_neg_ratio
from errors import InputFormatError, ValidationError
from geo_localizer import DEFAULT_NN_CHOICES
from geo_sampling import DEFAULT_CELL_DEG, DEFAULT_TRAIN_FRACTION, SamplingConfig, SplitConfig
from vector_index import DEFAULT_K_CENTROIDS, PQConfig

MAX_SEED = 2 ** 64


def check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < MAX_SEED:
        raise ValidationError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    return seed


@dataclass(frozen=True)
class RunConfig:
    seed: Optional[int] = None
    # geo
    cell_deg: float = DEFAULT_CELL_DEG
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-9
    pq_m: Optional[int] = None
    pq_k_centroids: int = DEFAULT_K_CENTROIDS
    pq_train_iters: int = 25
    normalize: bool = False
    nn_choices: Tuple[int, ...] = DEFAULT_NN_CHOICES
    # classifier
    svm_c: float = 1.0
    svm_epochs: int = 500
    svm_tol: float = 1e-9
    neg_ratio: object = 5
    cv_folds: int = 5
    # active learning
    draw_s: float = 3.6
    accept_s: float = 1.0
    delete_s: float = 1.0
    modify_s: float = 3.0
    train_s: float = 89.0
    boxes_per_image: float = 1.3
    misaligned_fraction: float = 0.0
    al_rounds: int = 10
    al_batch: int = 10
    al_seed_count: int = 20
    # concept mapping
    expand_k: int = 3

    def __post_init__(self):
        if self.seed is not None:
            check_seed(self.seed)
        object.__setattr__(self, "nn_choices", tuple(int(n) for n in self.nn_choices))
        object.__setattr__(self, "neg_ratio", parse_neg_ratio(self.neg_ratio))
        for name in ("cell_deg", "svm_c"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be a positive number, got {value!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        for name in ("kmeans_max_iters", "pq_train_iters", "svm_epochs", "al_batch", "al_seed_count", "expand_k"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if self.al_rounds < 0:
            raise ValidationError("al_rounds must be non-negative")
        if self.cv_folds < 2:
            raise ValidationError("cv_folds must be at least 2")

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Read a YAML mapping of config keys; unknown keys are rejected."""
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except FileNotFoundError:
            raise ValidationError(f"file not found: {path}")
        except yaml.YAMLError as e:
            raise InputFormatError(f"cannot parse config {path}: {e}")
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise InputFormatError(f"config {path} must be a mapping of keys to values")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config key(s) in {path}: {', '.join(map(str, unknown))}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ValidationError(f"bad value in config {path}: {e}")

    def override(self, **values) -> "RunConfig":
        """Copy with the non-None values replaced (flags over file over defaults)."""
        changes = {k: v for k, v in values.items() if v is not None}
        return replace(self, **changes) if changes else self

    def require_seed(self) -> int:
        if self.seed is None:
            raise ValidationError("this command is randomized; pass --seed or set seed in the config file")
        return self.seed

    def sampling(self, k: int) -> SamplingConfig:
        return SamplingConfig(k, self.require_seed(), self.kmeans_max_iters, self.kmeans_tol)

    def split(self) -> SplitConfig:
        return SplitConfig(self.cell_deg, self.train_fraction, self.require_seed())

    def pq(self) -> PQConfig:
        return PQConfig(self.pq_m, self.pq_k_centroids, self.pq_train_iters, self.require_seed())

    def train(self) -> TrainConfig:
        return TrainConfig(self.svm_c, self.neg_ratio, self.svm_epochs, self.svm_tol, self.require_seed())

    def cost(self) -> CostModel:
        return CostModel(
            self.draw_s, self.accept_s, self.delete_s, self.modify_s, self.train_s, self.boxes_per_image,
            self.misaligned_fraction,
        )

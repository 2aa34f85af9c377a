import hypothesis
import numpy as np
import pytest

from classifier import LabeledFeature
from concept_space import Lexicon, Taxonomy

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.load_profile("default")

OSM_FIXTURE = b"""<?xml version="1.0" encoding="UTF-8"?>
<osm version="0.6">
  <node id="1" lat="48.8566" lon="2.3522"/>
  <node id="2" lat="48.8570" lon="2.3530"/>
  <node id="3" lat="48.8600" lon="2.3600"/>
  <way id="10">
    <nd ref="1"/>
    <nd ref="2"/>
    <tag k="highway" v="residential"/>
  </way>
</osm>
"""


@pytest.fixture
def osm_fixture() -> bytes:
    return OSM_FIXTURE


@pytest.fixture
def weapon_taxonomy() -> Taxonomy:
    return Taxonomy.from_edges(
        [("weapon", None), ("gun", "weapon"), ("knife", "weapon"), ("revolver", "gun"), ("rifle", "gun")]
    )


@pytest.fixture
def toy_lexicon() -> Lexicon:
    return Lexicon({"gun": (1.0, 0.0), "rifle": (0.9, 0.1), "car": (0.0, 1.0)})


def two_class_pool(
    n: int, dim: int, seed: int, separation: float = 3.0, prefix: str = "", positive_every: int = 2
) -> list:
    """n items, every positive_every-th labeled "pos" around +separation, the rest unlabeled around -separation."""
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        positive = i % positive_every == 0
        center = separation if positive else -separation
        features = rng.normal(center, 1.0, size=dim)
        items.append(LabeledFeature(f"{prefix}{i:04d}", features, frozenset({"pos"}) if positive else frozenset()))
    return items

"""
Query-to-concept mapping: a concept taxonomy with Wu-Palmer similarity and
a word-vector lexicon with cosine similarity.

Terms are matched after collapsing whitespace to underscores, so a bank
label "assault rifle" resolves to the taxonomy node or word
"assault_rifle".
"""

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np

from errors import InputFormatError, UnknownQueryError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_K = 3


def normalize_term(term: str) -> str:
    return re.sub(r"\s+", "_", term.strip())


class Taxonomy:
    """A single-rooted concept tree; the root has depth 1."""

    def __init__(self, parent: Mapping[str, Optional[str]]):
        self.parent: Dict[str, Optional[str]] = {normalize_term(c): (normalize_term(p) if p else None) for c, p in parent.items()}
        if len(self.parent) != len(parent):
            spellings: Dict[str, List[str]] = {}
            for c in parent:
                spellings.setdefault(normalize_term(c), []).append(c)
            clashes = sorted(tuple(s) for s in spellings.values() if len(s) > 1)
            raise InputFormatError(f"taxonomy terms collide after normalizing: {clashes[:5]}")
        roots = [node for node, p in self.parent.items() if p is None]
        if len(roots) != 1:
            raise ValidationError(f"taxonomy needs exactly one root, found {len(roots)}: {sorted(roots)[:5]}")
        self.root = roots[0]
        for node, p in self.parent.items():
            if p is not None and p not in self.parent:
                raise ValidationError(f"parent {p!r} of {node!r} is not a node of the taxonomy")
        self._children: Dict[str, List[str]] = {node: [] for node in self.parent}
        for node, p in self.parent.items():
            if p is not None:
                self._children[p].append(node)
        for kids in self._children.values():
            kids.sort()
        self._depth = self._compute_depths()

    @classmethod
    def from_edges(cls, edges: Iterable[Tuple[str, Optional[str]]]) -> "Taxonomy":
        """Build from (child, parent) pairs; the root's parent is None or ''."""
        parent: Dict[str, Optional[str]] = {}
        spelling: Dict[str, str] = {}
        for raw, p in edges:
            child = normalize_term(raw)
            if spelling.setdefault(child, raw) != raw:
                raise InputFormatError(f"{raw!r} and {spelling[child]!r} both normalize to {child!r}")
            p = normalize_term(p) if p else None
            if child in parent and parent[child] != p:
                raise ValidationError(f"{child!r} has more than one parent ({parent[child]!r}, {p!r})")
            parent[child] = p
        return cls(parent)

    def _compute_depths(self) -> Dict[str, int]:
        depth = {self.root: 1}
        stack = [self.root]
        while stack:
            node = stack.pop()
            for child in self._children[node]:
                depth[child] = depth[node] + 1
                stack.append(child)
        if len(depth) != len(self.parent):
            cyclic = sorted(set(self.parent) - set(depth))
            raise ValidationError(f"taxonomy has a cycle or detached nodes: {cyclic[:5]}")
        return depth

    def __contains__(self, node) -> bool:
        return isinstance(node, str) and normalize_term(node) in self.parent

    def __len__(self):
        return len(self.parent)

    @property
    def nodes(self) -> List[str]:
        return sorted(self.parent)

    def _require(self, node: str) -> str:
        key = normalize_term(node)
        if key not in self.parent:
            raise ValidationError(f"unknown concept {node!r}")
        return key

    def depth(self, node: str) -> int:
        return self._depth[self._require(node)]

    def ancestors(self, node: str) -> List[str]:
        """Path from node up to the root, node included."""
        path = []
        current: Optional[str] = self._require(node)
        while current is not None:
            path.append(current)
            current = self.parent[current]
        return path

    def children(self, node: str) -> List[str]:
        return list(self._children[self._require(node)])

    def descendants(self, node: str) -> List[str]:
        """All nodes below node, intermediate and leaf, depth-first."""
        out = []
        stack = list(reversed(self._children[self._require(node)]))
        while stack:
            current = stack.pop()
            out.append(current)
            stack.extend(reversed(self._children[current]))
        return out

    def lcs(self, a: str, b: str) -> str:
        """Deepest node that is an ancestor of both (a node is its own ancestor)."""
        seen = set(self.ancestors(a))
        for node in self.ancestors(b):
            if node in seen:
                return node
        return self.root

    def wup(self, a: str, b: str) -> float:
        """Wu-Palmer similarity: 2 * depth(lcs) / (depth(a) + depth(b))."""
        return 2.0 * self.depth(self.lcs(a, b)) / (self.depth(a) + self.depth(b))


class Lexicon:
    """Word to vector table with a uniform dimension."""

    def __init__(self, vectors: Mapping[str, Sequence[float]], compose_phrases: bool = False):
        self.vectors: Dict[str, np.ndarray] = {}
        dim = None
        for word, values in vectors.items():
            v = np.asarray(values, dtype=np.float64).reshape(-1)
            if dim is None:
                dim = v.shape[0]
            if v.shape[0] != dim:
                raise ValidationError(f"vector for {word!r} has dimension {v.shape[0]}, expected {dim}")
            if not np.isfinite(v).all():
                raise ValidationError(f"vector for {word!r} has non-finite entries")
            self.vectors[normalize_term(word)] = v
        self.dim = dim or 0
        self.compose_phrases = compose_phrases

    def __contains__(self, term) -> bool:
        return self.lookup(term) is not None

    def __len__(self):
        return len(self.vectors)

    @property
    def words(self) -> List[str]:
        return sorted(self.vectors)

    def lookup(self, term: str) -> Optional[np.ndarray]:
        """Vector of term; with compose_phrases, an absent phrase falls back to the mean of its words."""
        key = normalize_term(term)
        if key in self.vectors:
            return self.vectors[key]
        if self.compose_phrases and "_" in key:
            parts = [p for p in key.split("_") if p]
            if parts and all(p in self.vectors for p in parts):
                return np.mean([self.vectors[p] for p in parts], axis=0)
        return None


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValidationError(f"cosine of vectors with shapes {u.shape} and {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValidationError("cosine is undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


class Similarity(Protocol):
    def resolves(self, term: str) -> bool: ...

    def similarity(self, a: str, b: str) -> float: ...

    def vocabulary(self) -> List[str]: ...


@dataclass
class WupSimilarity:
    taxonomy: Taxonomy

    def resolves(self, term: str) -> bool:
        return term in self.taxonomy

    def similarity(self, a: str, b: str) -> float:
        return self.taxonomy.wup(a, b)

    def vocabulary(self) -> List[str]:
        return self.taxonomy.nodes


@dataclass
class CosineSimilarity:
    lexicon: Lexicon

    def resolves(self, term: str) -> bool:
        v = self.lexicon.lookup(term)
        return v is not None and bool(np.any(v))

    def similarity(self, a: str, b: str) -> float:
        return cosine(self.lexicon.lookup(a), self.lexicon.lookup(b))

    def vocabulary(self) -> List[str]:
        return self.lexicon.words


@dataclass
class ExpansionResult:
    items: List[Tuple[str, float]]
    skipped: List[str] = field(default_factory=list)

    @property
    def concepts(self) -> List[str]:
        return [concept for concept, _ in self.items]


def expand_query(query: str, bank: Optional[Sequence[str]], mode: Similarity, k: int = DEFAULT_K) -> ExpansionResult:
    """
    Top-k bank concepts by similarity to query, descending, ties by label.

    The query itself is never returned. Bank labels the mode cannot resolve
    are skipped and listed in the result. With bank=None the whole
    vocabulary of the mode is the bank.

    Raises:
        UnknownQueryError: the query is not in the taxonomy / lexicon
    """
    if k < 1:
        raise ValidationError(f"k must be positive, got {k}")
    if not mode.resolves(query):
        raise UnknownQueryError(f"query {query!r} is not in the vocabulary")
    query_key = normalize_term(query)
    if bank is None:
        bank = mode.vocabulary()

    scored, skipped, seen = [], [], set()
    for label in bank:
        key = normalize_term(label)
        if key == query_key or key in seen:
            continue
        seen.add(key)
        if not mode.resolves(label):
            skipped.append(label)
            continue
        scored.append((label, mode.similarity(query, label)))

    if skipped:
        logger.warning("%d bank concepts could not be resolved (e.g. %r)", len(skipped), skipped[0])
    scored.sort(key=lambda item: (-item[1], item[0]))
    return ExpansionResult(scored[:k], skipped)

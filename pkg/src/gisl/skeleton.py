"""Adjacency search over the observed variables (order-independent PC skeleton)."""

import logging
from dataclasses import dataclass, field
from itertools import combinations

from ._util import canonical_pair, natural_key, sorted_names
from .ci import CiError, CiVerdict, KernelCiTester
from .data import DataError, DataMatrix
from .graph import GRAPH_FORMAT_VERSION, selection_conditioned_dseparated

log = logging.getLogger(__name__)

ORACLE_MAX_VARS = 20


@dataclass(frozen=True)
class Skeleton:
    vertices: tuple
    edges: frozenset
    sepsets: dict = field(default_factory=dict)

    def __post_init__(self):
        edges = frozenset(canonical_pair(a, b) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "vertices", tuple(self.vertices))
        sepsets = {canonical_pair(*k): frozenset(v) for k, v in self.sepsets.items()}
        object.__setattr__(self, "sepsets", sepsets)
        for pair, sep in sepsets.items():
            if pair in edges:
                raise ValueError(f"adjacent pair {pair} has a separating set")
            if set(pair) & sep:
                raise ValueError(f"separating set of {pair} contains an endpoint")
        for pair in combinations(self.vertices, 2):
            pair = canonical_pair(*pair)
            if pair not in edges and pair not in sepsets:
                raise ValueError(f"non-adjacent pair {pair} has no separating set")

    def adjacent(self, a, b):
        return canonical_pair(a, b) in self.edges

    def neighbors(self, v):
        return frozenset(b if a == v else a for a, b in self.edges if v in (a, b))

    def to_dict(self):
        return {
            "format": "gisl-skeleton",
            "version": GRAPH_FORMAT_VERSION,
            "vertices": list(self.vertices),
            "edges": [list(e) for e in sorted(self.edges)],
            "sepsets": [
                {"pair": list(p), "cond": sorted_names(s)} for p, s in sorted(self.sepsets.items())
            ],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(d["vertices"]),
            frozenset(tuple(e) for e in d["edges"]),
            {tuple(s["pair"]): frozenset(s["cond"]) for s in d["sepsets"]},
        )


class DSeparationTester:
    """CI tester answering from the ground-truth graph (selection always
    conditioned on).  Same interface as ``KernelCiTester.test``."""

    def __init__(self, structure, alpha=0.05):
        self.structure = structure
        self.alpha = alpha
        self.calls = 0

    @property
    def variables(self):
        return tuple(self.structure.observed)

    def test(self, a, b, cond=()):
        self.calls += 1
        sep = selection_conditioned_dseparated(self.structure, a, b, frozenset(cond))
        return CiVerdict(0.0, 1.0 if sep else 0.0, not sep, self.alpha, 0, "d-separation oracle")


def recover_skeleton(data, alpha=0.05, max_cond=3, seed=0, config=None):
    """Order-independent PC adjacency search.

    ``data`` is an observational ``DataMatrix`` or any tester exposing
    ``variables`` and ``test(a, b, cond)``.  Conditioning sets of size
    ``0..max_cond`` (``None`` for unbounded) are drawn from the neighbors of
    either endpoint as they stood at the start of the level; removals are
    applied at the end of each level.
    """
    if isinstance(data, DataMatrix):
        if data.target is not None:
            raise DataError("skeleton search needs observational data")
        kwargs = {} if config is None else {"config": config}
        tester = KernelCiTester(data, alpha=alpha, seed=seed, **kwargs)
    else:
        tester = data
    if max_cond is not None and max_cond < 0:
        raise ValueError("max_cond must be nonnegative")
    variables = sorted_names(tester.variables)
    adj = {v: set(variables) - {v} for v in variables}
    sepsets = {}
    level = 0
    while max_cond is None or level <= max_cond:
        frozen = {v: frozenset(n) for v, n in adj.items()}
        if all(len(n) - 1 < level for n in frozen.values()):
            break
        removals = []
        for a, b in sorted({canonical_pair(a, b) for a in variables for b in adj[a]}, key=_pair_key):
            sep = _search_pair(tester, a, b, frozen, level)
            if sep is not None:
                removals.append((a, b, sep))
        for a, b, sep in removals:
            adj[a].discard(b)
            adj[b].discard(a)
            sepsets[(a, b)] = sep
        log.debug("level %d removed %d edges", level, len(removals))
        level += 1
    edges = {canonical_pair(a, b) for a in variables for b in adj[a]}
    return Skeleton(tuple(variables), frozenset(edges), sepsets)


def _pair_key(pair):
    return (natural_key(pair[0]), natural_key(pair[1]))


def _search_pair(tester, a, b, frozen, level):
    for x, y in ((a, b), (b, a)):
        pool = sorted_names(frozen[x] - {y})
        if len(pool) < level:
            continue
        for cond in combinations(pool, level):
            try:
                verdict = tester.test(a, b, cond)
            except (CiError, DataError) as exc:
                log.debug("test %s vs %s | %s failed: %s", a, b, cond, exc)
                continue
            if not verdict.dependent:
                return frozenset(cond)
    return None


def oracle_skeleton(structure):
    """Exact adjacencies: a pair is adjacent iff no subset of the other
    observed variables separates it (selection always conditioned on)."""
    observed = sorted_names(structure.observed)
    if len(observed) > ORACLE_MAX_VARS:
        raise ValueError(f"oracle skeleton is exhaustive; {len(observed)} > {ORACLE_MAX_VARS} observed variables")
    edges, sepsets = set(), {}
    for a, b in combinations(observed, 2):
        a, b = canonical_pair(a, b)
        rest = [v for v in observed if v not in (a, b)]
        sep = None
        for size in range(len(rest) + 1):
            for cond in combinations(rest, size):
                if selection_conditioned_dseparated(structure, a, b, frozenset(cond)):
                    sep = frozenset(cond)
                    break
            if sep is not None:
                break
        if sep is None:
            edges.add((a, b))
        else:
            sepsets[(a, b)] = sep
    return Skeleton(tuple(observed), frozenset(edges), sepsets)

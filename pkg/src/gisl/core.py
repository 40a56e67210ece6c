"""Pair classification from perturbation patterns and its correction pass.

Given a skeleton over the observed variables, every adjacent pair whose
endpoints were both perturbed gets a pattern quad and a class from the
pattern table.  Pairs labelled causal-and-latent, selection or unknown are
then re-tested with extra conditioning on subsets of the pair's neighbors
until nothing changes.
"""

import json
import logging
from dataclasses import dataclass, field
from itertools import combinations

from ._util import atomic_write_json, atomic_write_text, natural_key, sorted_names
from .ci import DEFAULT_CONFIG, KernelCiTester
from .graph import (
    GraphError,
    Mark,
    MixedGraph,
    d_separated,
    indicator_name,
    selection_opened_connection,
)
from .patterns import ClassTag, EdgeClass, PatternQuad, Verdict, classify_pattern
from .skeleton import DSeparationTester, Skeleton, oracle_skeleton, recover_skeleton

log = logging.getLogger(__name__)

RESULT_FORMAT_VERSION = 1

# working sets of the algorithm
CAUSAL = "causal"
LATENT = "latent"
LATENT_PRIME = "causal_and_latent"
SELECTION = "selection"
UNKNOWN = "unknown"
UNTESTED = "untested"

_GROUP_OF = {
    ClassTag.CAUSAL: CAUSAL,
    ClassTag.LATENT: LATENT,
    ClassTag.SELECTION: SELECTION,
    ClassTag.CAUSAL_AND_LATENT: LATENT_PRIME,
    ClassTag.UNKNOWN: UNKNOWN,
}

# group -> classes a re-test may move it to
_CORRECTIONS = {
    LATENT_PRIME: {ClassTag.CAUSAL, ClassTag.LATENT},
    SELECTION: {ClassTag.CAUSAL, ClassTag.LATENT},
    UNKNOWN: {ClassTag.CAUSAL, ClassTag.LATENT, ClassTag.SELECTION, ClassTag.CAUSAL_AND_LATENT},
}


@dataclass(frozen=True)
class GislConfig:
    alpha: float = 0.05
    max_cond: int = 3
    correction_depth: int = 2
    seed: int = 0

    def to_dict(self):
        return dict(self.__dict__)


# -- backends ------------------------------------------------------------------


def oracle_quad(structure, pair, extra_cond=(), extra_mode="block"):
    """Noise-free quad for ``pair`` read off the ground-truth graph.

    Each slot is d-separation of the indicator from the other variable given
    the slot's conditioning set plus every selection vertex.  When the slot
    conditions on the intervened variable itself, a walk that leaves it
    forward and crosses a collider feeding a selection vertex also counts as
    dependence.

    ``extra_mode="block"`` lets ``extra_cond`` cut the paths it lies on
    without opening colliders upstream of it, which is how the correction
    step reasons about blocking a mediating path.  ``"condition"`` treats it
    as ordinary conditioning.
    """
    if extra_mode not in ("block", "condition"):
        raise ValueError(f"unknown extra_mode {extra_mode!r}")
    i, j = pair
    targets = structure.intervention_targets
    for v in (i, j):
        if v not in targets:
            raise GraphError(f"{v!r} is not an intervention target")
    extra = frozenset(extra_cond)
    if extra & {i, j}:
        raise GraphError("extra conditioning set must not contain the pair")
    dag = structure.indicator_dag({i, j})
    sel = frozenset(dag.selections)
    blockers = extra if extra_mode == "block" else frozenset()
    base_cond = frozenset() if extra_mode == "block" else extra

    def slot(target, var, cond):
        cond = cond | base_cond | sel
        if not d_separated(dag, indicator_name(target), var, cond, blockers):
            return Verdict.DEP
        if target in cond and selection_opened_connection(dag, target, var, cond, blockers):
            return Verdict.DEP
        return Verdict.INDEP

    return PatternQuad(
        (i, j),
        slot(i, j, frozenset()),
        slot(i, j, frozenset({i})),
        slot(j, i, frozenset()),
        slot(j, i, frozenset({j})),
        cond_used=extra,
    )


class OracleBackend:
    """Skeleton and quads from the ground-truth structure.

    ``exact_skeleton`` uses the exhaustive oracle skeleton instead of the PC
    search driven by d-separation.
    """

    def __init__(self, structure, exact_skeleton=True, extra_mode="block"):
        self.structure = structure
        self.exact_skeleton = exact_skeleton
        self.extra_mode = extra_mode

    @property
    def variables(self):
        return tuple(self.structure.observed)

    @property
    def targets(self):
        return frozenset(self.structure.intervention_targets)

    def skeleton(self, config):
        if self.exact_skeleton:
            return oracle_skeleton(self.structure)
        return recover_skeleton(DSeparationTester(self.structure), config.alpha, config.max_cond)

    def quad(self, i, j, extra_cond=()):
        return oracle_quad(self.structure, (i, j), extra_cond, self.extra_mode)


class DataBackend:
    """Kernel tests on an observational matrix and per-target perturbed matrices."""

    def __init__(self, d0, perturbed, alpha=0.05, ci_config=DEFAULT_CONFIG, seed=0):
        self.tester = KernelCiTester(d0, perturbed, alpha, ci_config, seed)

    @property
    def variables(self):
        return self.tester.variables

    @property
    def targets(self):
        return self.tester.targets

    def skeleton(self, config):
        return recover_skeleton(self.tester, config.alpha, config.max_cond)

    def quad(self, i, j, extra_cond=()):
        return self.tester.quad(i, j, extra_cond)


# -- result ----------------------------------------------------------------------


@dataclass
class PairAudit:
    pair: tuple
    initial_quad: PatternQuad = None
    initial_class: EdgeClass = None
    trials: list = field(default_factory=list)
    final_class: EdgeClass = None
    group: str = UNTESTED
    note: str = ""

    def to_dict(self):
        return {
            "pair": list(self.pair),
            "initial_quad": self.initial_quad.to_dict() if self.initial_quad else None,
            "initial_class": str(self.initial_class) if self.initial_class else None,
            "trials": self.trials,
            "final_class": str(self.final_class) if self.final_class else None,
            "group": self.group,
            "note": self.note,
        }


@dataclass
class GislResult:
    graph: MixedGraph
    confounded: frozenset
    selected: frozenset
    unknown: frozenset
    untested: frozenset
    classes: dict
    audit: dict
    skeleton: Skeleton
    config: GislConfig = field(default_factory=GislConfig)

    @property
    def causal_edges(self):
        """Directed edges of the estimate (causal and causal-and-latent)."""
        return frozenset(self.graph.dag_projection()[0])

    @property
    def latent_only(self):
        return frozenset(p for p, c in self.classes.items() if c.tag is ClassTag.LATENT)

    def to_dict(self):
        pairs = lambda s: [list(p) for p in _sorted_pairs(s)]  # noqa: E731
        return {
            "format": "gisl-result",
            "version": RESULT_FORMAT_VERSION,
            "config": self.config.to_dict(),
            "graph": self.graph.to_dict(),
            "causal_edges": pairs(self.causal_edges),
            "confounded_pairs": pairs(self.confounded),
            "selection_pairs": pairs(self.selected),
            "unknown_pairs": pairs(self.unknown),
            "untested_pairs": pairs(self.untested),
            "classes": [{"pair": list(p), **self.classes[p].to_dict()} for p in _sorted_pairs(self.classes)],
            "skeleton": self.skeleton.to_dict(),
            "audit": [self.audit[p].to_dict() for p in _sorted_pairs(self.audit)],
        }

    @classmethod
    def from_dict(cls, d):
        """Rebuild the graph, pair sets and classes (the audit stays as plain dicts)."""
        classes = {}
        for c in d["classes"]:
            direction = tuple(c["direction"]) if c["direction"] else None
            classes[tuple(c["pair"])] = EdgeClass(ClassTag(c["tag"]), direction)
        audit = {tuple(a["pair"]): a for a in d["audit"]}
        to_set = lambda key: frozenset(tuple(p) for p in d[key])  # noqa: E731
        return cls(
            MixedGraph.from_dict(d["graph"]),
            to_set("confounded_pairs"),
            to_set("selection_pairs"),
            to_set("unknown_pairs"),
            to_set("untested_pairs"),
            classes,
            audit,
            Skeleton.from_dict(d["skeleton"]),
            GislConfig(**d["config"]),
        )

    def save(self, path):
        atomic_write_json(path, self.to_dict())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dot(self):
        return self.graph.to_dot()

    def save_dot(self, path):
        atomic_write_text(path, self.to_dot())


def _sorted_pairs(pairs):
    return sorted(pairs, key=lambda p: (natural_key(p[0]), natural_key(p[1])))


# -- algorithm -------------------------------------------------------------------


def _conditioning_sets(skeleton, pair, depth):
    a, b = pair
    pool = sorted_names((skeleton.neighbors(a) | skeleton.neighbors(b)) - {a, b})
    for size in range(1, min(depth, len(pool)) + 1):
        yield from combinations(pool, size)


def _safe_quad(backend, pair, extra=()):
    try:
        return backend.quad(pair[0], pair[1], extra)
    except Exception as exc:  # a failing pair degrades to Unknown
        log.warning("quad for %s failed: %s", pair, exc)
        unusable = Verdict.UNUSABLE
        return PatternQuad(pair, unusable, unusable, unusable, unusable, frozenset(extra), (str(exc),))


def classify_pairs(backend, skeleton):
    """Step 3: one quad per skeleton edge with both endpoints perturbed."""
    targets = backend.targets
    classes, groups, audit = {}, {}, {}
    for pair in _sorted_pairs(skeleton.edges):
        entry = PairAudit(pair)
        audit[pair] = entry
        if not set(pair) <= targets:
            missing = sorted_names(set(pair) - targets)
            entry.note = f"no perturbation data for {', '.join(missing)}"
            groups[pair] = UNTESTED
            classes[pair] = EdgeClass(ClassTag.UNTESTED)
            continue
        quad = _safe_quad(backend, pair)
        cls = classify_pattern(quad)
        entry.initial_quad, entry.initial_class = quad, cls
        classes[pair] = cls
        groups[pair] = _GROUP_OF[cls.tag]
    return classes, groups, audit


def correct_patterns(backend, skeleton, classes, groups, audit, depth=2):
    """Step 4: re-test causal-and-latent, selection and unknown pairs with
    extra conditioning until a full pass changes nothing.

    Conditioning sets are subsets of the pair's neighbors (size 1..depth,
    smallest first, then lexicographic); the first quad whose class is an
    allowed move for the pair's group is applied at the end of the pass.
    """
    passes = 0
    pending = {p for p, g in groups.items() if g in _CORRECTIONS}
    while pending:
        passes += 1
        changes = {}
        for pair in _sorted_pairs(pending):
            allowed = _CORRECTIONS[groups[pair]]
            for cond in _conditioning_sets(skeleton, pair, depth):
                quad = _safe_quad(backend, pair, cond)
                cls = classify_pattern(quad)
                hit = cls.tag in allowed
                audit[pair].trials.append(
                    {"pass": passes, "cond": list(cond), "quad": quad.code(), "class": str(cls), "applied": hit}
                )
                if hit:
                    changes[pair] = cls
                    break
        for pair, cls in changes.items():
            log.debug("pass %d: %s %s -> %s", passes, pair, groups[pair], cls)
            classes[pair] = cls
            groups[pair] = _GROUP_OF[cls.tag]
        # Quads are deterministic, so only pairs that moved can move again.
        pending = {p for p in changes if groups[p] in _CORRECTIONS}
    return passes


def _assemble(skeleton, classes, groups, audit, config):
    graph = MixedGraph(skeleton.vertices)
    for pair in _sorted_pairs(classes):
        cls = classes[pair]
        a, b = pair
        if cls.tag is ClassTag.CAUSAL:
            graph.set_edge(*cls.direction, Mark.TAIL, Mark.ARROW)
        elif cls.tag is ClassTag.CAUSAL_AND_LATENT:
            graph.set_edge(*cls.direction, Mark.CIRCLE, Mark.ARROW)
        elif cls.tag is ClassTag.LATENT:
            graph.set_edge(a, b, Mark.ARROW, Mark.ARROW)
        elif cls.tag is ClassTag.SELECTION:
            graph.set_edge(a, b, Mark.TAIL, Mark.TAIL)
        else:
            graph.set_edge(a, b, Mark.CIRCLE, Mark.CIRCLE)
        audit[pair].final_class = cls
        audit[pair].group = groups[pair]

    def members(*gs):
        return frozenset(p for p, g in groups.items() if g in gs)

    return GislResult(
        graph=graph,
        confounded=members(LATENT, LATENT_PRIME),
        selected=members(SELECTION),
        unknown=members(UNKNOWN),
        untested=members(UNTESTED),
        classes=dict(classes),
        audit=audit,
        skeleton=skeleton,
        config=config,
    )


def run_gisl(backend, config=GislConfig(), skeleton=None):
    """Skeleton, per-pair classification, correction; returns a ``GislResult``."""
    if skeleton is None:
        skeleton = backend.skeleton(config)
    classes, groups, audit = classify_pairs(backend, skeleton)
    if config.correction_depth > 0:
        correct_patterns(backend, skeleton, classes, groups, audit, config.correction_depth)
    return _assemble(skeleton, classes, groups, audit, config)


def discover(d0, perturbed, alpha=0.05, max_cond=3, correction_depth=2, seed=0, ci_config=DEFAULT_CONFIG):
    """Run the full pipeline on data; returns ``(result, backend)``."""
    config = GislConfig(alpha, max_cond, correction_depth, seed)
    backend = DataBackend(d0, perturbed, alpha, ci_config, seed)
    return run_gisl(backend, config), backend

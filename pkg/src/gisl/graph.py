"""Directed graphs over observed, latent, selection and indicator vertices.

The ground truth of every benchmark is an :class:`AugmentedDag`: a DAG over
observed genes plus one dedicated latent vertex per confounded pair and one
dedicated selection sink per selection pair.  Perturbation indicators are
added on demand with :func:`add_indicators`.

Graph values are immutable after construction and can be shared freely
between workers.
"""

from collections import deque
from dataclasses import dataclass
from enum import Enum
from itertools import combinations

from ._util import canonical_pair, derive_rng, natural_key, sorted_names

GRAPH_FORMAT_VERSION = 1


class GraphError(ValueError):
    """Malformed graph, unknown vertex or invalid path."""


class VertexKind(str, Enum):
    OBSERVED = "observed"
    LATENT = "latent"
    SELECTION = "selection"
    INDICATOR = "indicator"


class Mark(str, Enum):
    TAIL = "tail"
    ARROW = "arrow"
    CIRCLE = "circle"


def indicator_name(target):
    return f"I_{target}"


class Dag:
    """Immutable DAG with typed vertices.

    Parameters
    ----------
    vertices : iterable
        Either vertex ids (all treated as observed) or ``(id, kind)`` /
        ``(id, kind, label)`` tuples.
    edges : iterable of (tail, head)
    """

    def __init__(self, vertices, edges=()):
        kinds = {}
        labels = {}
        for item in vertices:
            if isinstance(item, (tuple, list)):
                vid, kind = item[0], VertexKind(item[1])
                label = item[2] if len(item) > 2 else vid
            else:
                vid, kind, label = item, VertexKind.OBSERVED, item
            if vid in kinds:
                raise GraphError(f"duplicate vertex {vid!r}")
            kinds[vid] = kind
            labels[vid] = label
        self._kinds = kinds
        self._labels = labels
        self._order = tuple(kinds)
        parents = {v: set() for v in kinds}
        children = {v: set() for v in kinds}
        edge_set = set()
        for tail, head in edges:
            if tail not in kinds or head not in kinds:
                raise GraphError(f"edge ({tail!r}, {head!r}) references an unknown vertex")
            if tail == head:
                raise GraphError(f"self loop on {tail!r}")
            edge_set.add((tail, head))
            parents[head].add(tail)
            children[tail].add(head)
        self._edges = frozenset(edge_set)
        self._parents = {v: frozenset(p) for v, p in parents.items()}
        self._children = {v: frozenset(c) for v, c in children.items()}
        self._topo = self._toposort()
        self._check_kinds()

    def _toposort(self):
        indeg = {v: len(self._parents[v]) for v in self._order}
        queue = deque(v for v in self._order if indeg[v] == 0)
        out = []
        while queue:
            v = queue.popleft()
            out.append(v)
            for c in sorted(self._children[v], key=natural_key):
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if len(out) != len(self._order):
            raise GraphError("graph contains a directed cycle")
        return tuple(out)

    def _check_kinds(self):
        for v, kind in self._kinds.items():
            if kind is VertexKind.SELECTION and self._children[v]:
                raise GraphError(f"selection vertex {v!r} must be a sink")
            if kind is VertexKind.INDICATOR:
                if self._parents[v] or len(self._children[v]) != 1:
                    raise GraphError(f"indicator {v!r} must be a source with exactly one child")

    # -- accessors -------------------------------------------------------
    @property
    def vertices(self):
        return self._order

    @property
    def edges(self):
        return self._edges

    def kind(self, v):
        try:
            return self._kinds[v]
        except KeyError:
            raise GraphError(f"unknown vertex {v!r}") from None

    def label(self, v):
        self.kind(v)
        return self._labels[v]

    def parents(self, v):
        self.kind(v)
        return self._parents[v]

    def children(self, v):
        self.kind(v)
        return self._children[v]

    def has_vertex(self, v):
        return v in self._kinds

    def of_kind(self, kind):
        kind = VertexKind(kind)
        return tuple(v for v in self._order if self._kinds[v] is kind)

    @property
    def observed(self):
        return self.of_kind(VertexKind.OBSERVED)

    @property
    def latents(self):
        return self.of_kind(VertexKind.LATENT)

    @property
    def selections(self):
        return self.of_kind(VertexKind.SELECTION)

    @property
    def indicators(self):
        return self.of_kind(VertexKind.INDICATOR)

    @property
    def topological_order(self):
        return self._topo

    def ancestors(self, vs):
        """All ancestors of ``vs``, the vertices themselves included."""
        stack = list(vs)
        for v in stack:
            self.kind(v)
        seen = set(stack)
        while stack:
            v = stack.pop()
            for p in self._parents[v]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def descendants(self, vs):
        """All descendants of ``vs``, the vertices themselves included."""
        stack = list(vs)
        for v in stack:
            self.kind(v)
        seen = set(stack)
        while stack:
            v = stack.pop()
            for c in self._children[v]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen

    def adjacent(self, a, b):
        return (a, b) in self._edges or (b, a) in self._edges

    def copy_with(self, add_vertices=(), add_edges=(), drop_edges=()):
        drop = set(drop_edges)
        verts = [(v, self._kinds[v], self._labels[v]) for v in self._order] + list(add_vertices)
        edges = [e for e in sorted(self._edges, key=_edge_key) if e not in drop] + list(add_edges)
        return Dag(verts, edges)

    # -- comparison & serialization -------------------------------------
    def __eq__(self, other):
        if not isinstance(other, Dag):
            return NotImplemented
        return self._kinds == other._kinds and self._edges == other._edges

    def __hash__(self):
        return hash((frozenset(self._kinds.items()), self._edges))

    def __repr__(self):
        return f"Dag({len(self._order)} vertices, {len(self._edges)} edges)"

    def to_dict(self):
        return {
            "format": "gisl-dag",
            "version": GRAPH_FORMAT_VERSION,
            "vertices": [
                {"id": v, "kind": self._kinds[v].value, "label": self._labels[v]} for v in self._order
            ],
            "edges": [list(e) for e in sorted(self._edges, key=_edge_key)],
        }

    @classmethod
    def from_dict(cls, d):
        verts = [(v["id"], v["kind"], v.get("label", v["id"])) for v in d["vertices"]]
        return cls(verts, [tuple(e) for e in d["edges"]])

    def to_dot(self, name="G"):
        shapes = {
            VertexKind.OBSERVED: "ellipse",
            VertexKind.LATENT: "ellipse, style=dashed",
            VertexKind.SELECTION: "box",
            VertexKind.INDICATOR: "diamond",
        }
        lines = [f"digraph {name} {{"]
        for v in self._order:
            lines.append(f'  "{v}" [shape={shapes[self._kinds[v]]}];')
        for a, b in sorted(self._edges, key=_edge_key):
            lines.append(f'  "{a}" -> "{b}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _edge_key(e):
    return (natural_key(e[0]), natural_key(e[1]))


def _pair_set(pairs):
    return frozenset(canonical_pair(a, b) for a, b in pairs)


@dataclass(frozen=True)
class AugmentedDag:
    """Ground-truth DAG together with its confounded/selection pairs and targets."""

    base: Dag
    confounded_pairs: frozenset = frozenset()
    selection_pairs: frozenset = frozenset()
    intervention_targets: frozenset = None

    def __post_init__(self):
        object.__setattr__(self, "confounded_pairs", _pair_set(self.confounded_pairs))
        object.__setattr__(self, "selection_pairs", _pair_set(self.selection_pairs))
        observed = set(self.base.observed)
        targets = self.intervention_targets
        targets = frozenset(observed) if targets is None else frozenset(targets)
        object.__setattr__(self, "intervention_targets", targets)
        if not targets <= observed:
            raise GraphError(f"intervention targets {sorted_names(targets - observed)} are not observed")
        for a, b in self.confounded_pairs:
            if not any(
                self.base.kind(l) is VertexKind.LATENT and {a, b} <= self.base.children(l)
                for l in self.base.parents(a)
            ):
                raise GraphError(f"confounded pair {(a, b)} has no shared latent parent")
        for a, b in self.selection_pairs:
            if not any(
                self.base.kind(s) is VertexKind.SELECTION and {a, b} <= self.base.parents(s)
                for s in self.base.children(a)
            ):
                raise GraphError(f"selection pair {(a, b)} has no shared selection child")

    @property
    def observed(self):
        return self.base.observed

    @property
    def latents(self):
        return self.base.latents

    @property
    def selections(self):
        return self.base.selections

    def observed_edges(self):
        """Causal edges among observed vertices."""
        obs = set(self.base.observed)
        return frozenset(e for e in self.base.edges if e[0] in obs and e[1] in obs)

    def indicator_dag(self, targets=None):
        return add_indicators(self.base, self.intervention_targets if targets is None else targets)

    def to_dict(self):
        return {
            "format": "gisl-augmented-dag",
            "version": GRAPH_FORMAT_VERSION,
            "dag": self.base.to_dict(),
            "confounded_pairs": [list(p) for p in sorted(self.confounded_pairs, key=_edge_key)],
            "selection_pairs": [list(p) for p in sorted(self.selection_pairs, key=_edge_key)],
            "intervention_targets": sorted_names(self.intervention_targets),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            Dag.from_dict(d["dag"]),
            frozenset(tuple(p) for p in d["confounded_pairs"]),
            frozenset(tuple(p) for p in d["selection_pairs"]),
            frozenset(d["intervention_targets"]),
        )

    def to_dot(self):
        return self.base.to_dot("truth")


# -- constructors --------------------------------------------------------


def generate_er_dag(num_vars, num_edges, seed):
    """Erdős–Rényi DAG with exactly ``num_edges`` edges over ``X1..Xn``.

    Edges are drawn uniformly among all pairs and oriented along a random
    permutation, so the result is acyclic by construction.
    """
    if num_vars < 2:
        raise GraphError(f"num_vars must be at least 2, got {num_vars}")
    max_edges = num_vars * (num_vars - 1) // 2
    if not 0 <= num_edges <= max_edges:
        raise GraphError(f"num_edges={num_edges} outside [0, {max_edges}] for {num_vars} variables")
    rng = derive_rng(seed, "er-dag")
    names = [f"X{i + 1}" for i in range(num_vars)]
    order = rng.permutation(num_vars)
    slots = list(combinations(range(num_vars), 2))
    chosen = rng.choice(len(slots), size=num_edges, replace=False) if num_edges else []
    edges = []
    for k in sorted(int(c) for c in chosen):
        i, j = slots[k]
        edges.append((names[order[i]], names[order[j]]))
    return Dag(names, edges)


def augment_structure(dag, n_conf, n_sel, seed, targets=None):
    """Attach ``n_conf`` latent confounders and ``n_sel`` selection sinks.

    Each hosts its own distinct unordered observed pair; the two pair sets
    are disjoint.
    """
    if n_conf < 0 or n_sel < 0:
        raise GraphError("counts must be nonnegative")
    observed = list(dag.observed)
    slots = list(combinations(observed, 2))
    if n_conf + n_sel > len(slots):
        raise GraphError(
            f"cannot host {n_conf} confounded and {n_sel} selection pairs among {len(slots)} observed pairs"
        )
    rng = derive_rng(seed, "augment")
    chosen = [slots[int(k)] for k in rng.choice(len(slots), size=n_conf + n_sel, replace=False)]
    add_v, add_e = [], []
    conf, sel = [], []
    for k, (a, b) in enumerate(chosen[:n_conf]):
        name = f"L{k + 1}"
        add_v.append((name, VertexKind.LATENT))
        add_e += [(name, a), (name, b)]
        conf.append((a, b))
    for k, (a, b) in enumerate(chosen[n_conf:]):
        name = f"S{k + 1}"
        add_v.append((name, VertexKind.SELECTION))
        add_e += [(a, name), (b, name)]
        sel.append((a, b))
    base = dag.copy_with(add_vertices=add_v, add_edges=add_e)
    return AugmentedDag(base, frozenset(conf), frozenset(sel), targets)


def mutilate(dag, target):
    """Copy of ``dag`` with every edge into ``target`` removed."""
    if dag.kind(target) is not VertexKind.OBSERVED:
        raise GraphError(f"can only mutilate observed vertices, {target!r} is {dag.kind(target).value}")
    return dag.copy_with(drop_edges=[(p, target) for p in dag.parents(target)])


def add_indicators(dag, targets):
    """Add an exogenous indicator ``I_t -> t`` for every target."""
    add_v, add_e = [], []
    for t in sorted_names(targets):
        if dag.kind(t) is not VertexKind.OBSERVED:
            raise GraphError(f"indicator target {t!r} is not observed")
        add_v.append((indicator_name(t), VertexKind.INDICATOR))
        add_e.append((indicator_name(t), t))
    return dag.copy_with(add_vertices=add_v, add_edges=add_e)


# -- separation predicates -----------------------------------------------


def _check_query(dag, a, b, cond):
    dag.kind(a)
    dag.kind(b)
    for c in cond:
        dag.kind(c)
    if a == b:
        raise GraphError("d-separation query needs two distinct vertices")
    if a in cond or b in cond:
        raise GraphError("query endpoints must not be in the conditioning set")


def d_connected_set(dag, source, cond, blockers=()):
    """Vertices d-connected to ``source`` given ``cond`` (reachability traversal).

    ``blockers`` cut every path on which they sit as a non-collider but, unlike
    ``cond``, never open a collider they descend from.
    """
    cond = set(cond)
    closed = cond | set(blockers)
    opened = dag.ancestors(cond)
    reach = set()
    seen = set()
    queue = deque([(source, True)])  # (vertex, arrived from a child)
    while queue:
        v, up = queue.popleft()
        if (v, up) in seen:
            continue
        seen.add((v, up))
        if v not in closed:
            reach.add(v)
        if up:
            if v not in closed:
                queue.extend((p, True) for p in dag.parents(v))
                queue.extend((c, False) for c in dag.children(v))
        else:
            if v not in closed:
                queue.extend((c, False) for c in dag.children(v))
            if v in opened:
                queue.extend((p, True) for p in dag.parents(v))
    reach.discard(source)
    return reach


def d_separated(dag, a, b, cond=(), blockers=()):
    """True iff every path between ``a`` and ``b`` is blocked by ``cond``."""
    cond = frozenset(cond)
    _check_query(dag, a, b, cond | frozenset(blockers))
    return b not in d_connected_set(dag, a, cond, blockers)


def selection_conditioned_dseparated(aug, a, b, cond=()):
    """d-separation with every selection vertex implicitly conditioned on."""
    cond = frozenset(cond)
    dag = aug.base if isinstance(aug, AugmentedDag) else aug
    _check_query(dag, a, b, cond)
    return d_separated(dag, a, b, cond | set(dag.selections))


def selection_opened_connection(dag, source, target, cond, blockers=()):
    """Whether a d-connecting walk leaves ``source`` along an outgoing edge and
    passes through at least one collider that is an ancestor of a selection
    vertex.

    ``cond`` should already contain the selection vertices.  This is the
    dependence that survives conditioning on ``source`` itself once the
    criterion is enforced both before and after a perturbation of ``source``.
    """
    cond = set(cond)
    closed = cond | set(blockers)
    opened = dag.ancestors(cond)
    selective = dag.ancestors(dag.selections) if dag.selections else set()
    seen = set()
    queue = deque((c, False, False) for c in dag.children(source))
    while queue:
        v, up, flag = queue.popleft()
        if (v, up, flag) in seen:
            continue
        seen.add((v, up, flag))
        if v == target and flag and v not in closed:
            return True
        if up:
            if v not in closed:
                queue.extend((p, True, flag) for p in dag.parents(v))
                queue.extend((c, False, flag) for c in dag.children(v))
        else:
            if v not in closed:
                queue.extend((c, False, flag) for c in dag.children(v))
            if v in opened:
                hit = flag or v in selective
                queue.extend((p, True, hit) for p in dag.parents(v))
    return False


def is_inducing_path(dag, path, latents=(), selections=()):
    """Inducing-path check relative to ``<latents, selections>``.

    Every non-endpoint must be latent or a collider, and every collider must
    be an ancestor of an endpoint or of a selection vertex.
    """
    path = list(path)
    if len(path) < 2 or len(set(path)) != len(path):
        raise GraphError(f"invalid path {path}")
    for v in path:
        dag.kind(v)
    for u, v in zip(path, path[1:]):
        if not dag.adjacent(u, v):
            raise GraphError(f"invalid path: {u!r} and {v!r} are not adjacent")
    latents, selections = set(latents), set(selections)
    x, y = path[0], path[-1]
    if {x, y} & (latents | selections):
        raise GraphError("path endpoints must not be latent or selection vertices")
    targets = dag.ancestors({x, y} | selections)
    for prev, v, nxt in zip(path, path[1:], path[2:]):
        collider = (prev, v) in dag.edges and (nxt, v) in dag.edges
        if not (collider or v in latents):
            return False
        if collider and v not in targets:
            return False
    return True


# -- mixed (PAG-style) output graph --------------------------------------

_MARK_GLYPH = {Mark.TAIL: "-", Mark.ARROW: ">", Mark.CIRCLE: "o"}


class MixedGraph:
    """Graph over observed vertices with tail/arrow/circle edge marks.

    At most one edge per unordered pair.  ``a -> b`` is stored as
    ``(a, b, TAIL, ARROW)``; ``a <-> b`` as ``(ARROW, ARROW)``; an undirected
    ``a - b`` as ``(TAIL, TAIL)``; ``a o-> b`` as ``(CIRCLE, ARROW)``.
    """

    def __init__(self, vertices=()):
        self._vertices = list(vertices)
        self._vset = set(self._vertices)
        self._edges = {}

    @property
    def vertices(self):
        return tuple(self._vertices)

    def add_vertex(self, v):
        if v not in self._vset:
            self._vertices.append(v)
            self._vset.add(v)

    def set_edge(self, a, b, mark_a, mark_b):
        for v in (a, b):
            if v not in self._vset:
                raise GraphError(f"unknown vertex {v!r}")
        key = frozenset((a, b))
        if len(key) != 2:
            raise GraphError("self loops are not allowed")
        self._edges[key] = (a, b, Mark(mark_a), Mark(mark_b))

    def remove_edge(self, a, b):
        self._edges.pop(frozenset((a, b)), None)

    def marks(self, a, b):
        """``(mark at a, mark at b)`` or ``None`` when not adjacent."""
        e = self._edges.get(frozenset((a, b)))
        if e is None:
            return None
        return (e[2], e[3]) if e[0] == a else (e[3], e[2])

    def edges(self):
        out = []
        for a, b, ma, mb in self._edges.values():
            if natural_key(a) > natural_key(b):
                a, b, ma, mb = b, a, mb, ma
            out.append((a, b, ma, mb))
        return sorted(out, key=lambda e: (natural_key(e[0]), natural_key(e[1])))

    def adjacencies(self):
        return {canonical_pair(a, b) for a, b, _, _ in self.edges()}

    def dag_projection(self):
        """Split into directed edges and unoriented adjacencies.

        Edges with an arrowhead at exactly one end count as directed toward
        it; bidirected edges (pure confounding) carry no adjacency.
        """
        directed, unoriented = set(), set()
        for a, b, ma, mb in self.edges():
            if mb is Mark.ARROW and ma is not Mark.ARROW:
                directed.add((a, b))
            elif ma is Mark.ARROW and mb is not Mark.ARROW:
                directed.add((b, a))
            elif ma is Mark.ARROW and mb is Mark.ARROW:
                continue
            else:
                unoriented.add(canonical_pair(a, b))
        return directed, unoriented

    def __eq__(self, other):
        if not isinstance(other, MixedGraph):
            return NotImplemented
        return set(self._vertices) == set(other._vertices) and self.edges() == other.edges()

    def __repr__(self):
        left = {Mark.TAIL: "-", Mark.ARROW: "<", Mark.CIRCLE: "o"}
        body = ", ".join(f"{a} {left[ma]}-{_MARK_GLYPH[mb]} {b}" for a, b, ma, mb in self.edges())
        return f"MixedGraph([{body}])"

    def to_dict(self):
        return {
            "format": "gisl-mixed-graph",
            "version": GRAPH_FORMAT_VERSION,
            "vertices": list(self._vertices),
            "edges": [
                {"a": a, "b": b, "mark_a": ma.value, "mark_b": mb.value} for a, b, ma, mb in self.edges()
            ],
        }

    @classmethod
    def from_dict(cls, d):
        g = cls(d["vertices"])
        for e in d["edges"]:
            g.set_edge(e["a"], e["b"], e["mark_a"], e["mark_b"])
        return g

    def to_dot(self, name="gisl"):
        head = {Mark.ARROW: "normal", Mark.CIRCLE: "odot", Mark.TAIL: "none"}
        lines = [f"digraph {name} {{"]
        for v in sorted_names(self._vertices):
            lines.append(f'  "{v}";')
        for a, b, ma, mb in self.edges():
            attrs = [f"arrowtail={head[ma]}", f"arrowhead={head[mb]}", "dir=both"]
            if ma is Mark.ARROW and mb is Mark.ARROW:
                attrs += ["style=dashed", 'color="#1f77b4"', 'label="L"']
            elif ma is Mark.TAIL and mb is Mark.TAIL:
                attrs += ["style=bold", 'color="#d62728"', 'label="S"']
            lines.append(f'  "{a}" -> "{b}" [{", ".join(attrs)}];')
        lines.append("}")
        return "\n".join(lines) + "\n"

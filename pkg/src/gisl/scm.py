"""Structural causal models with criterion-based selection.

Observed variables follow ``X = sum_p w_p * g_p(p / s_p) + E`` where ``g_p``
is one of the unary families below, ``s_p`` the parent's pilot standard
deviation and ``E`` Gaussian noise.  Latents are pure noise.  Each selection
vertex keeps a row iff ``w1*g(Xi/s1) + w2*g(Xj/s2) > C``.

Selection acts on the cell as it would be without the perturbation *and*
as it is after it (``selection_timing="persistent"``): every noise draw is
evaluated twice, once naturally and once with the intervention applied, and
the row survives only if both versions satisfy every criterion.  The
perturbed version is what gets recorded.  ``"post"`` filters the perturbed
version only.
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from ._util import atomic_write_json, derive_rng, sorted_names, stable_hash
from .data import DataMatrix
from .graph import AugmentedDag, Dag, GraphError, VertexKind, augment_structure, generate_er_dag

log = logging.getLogger(__name__)

FAMILIES = ("linear", "square", "sin", "log")
INTERVENTION_KINDS = ("hard", "knockup", "knockdown", "shift")
SCM_FORMAT_VERSION = 1
INSTANCE_FORMAT_VERSION = 1


class SimulationError(RuntimeError):
    pass


class AttemptBudgetExceeded(SimulationError):
    pass


def apply_family(family, u):
    if family == "linear":
        return u
    if family == "square":
        return u * u
    if family == "sin":
        return np.sin(u)
    if family == "log":
        return np.log(np.abs(u) + 1.0)
    raise ValueError(f"unknown function family {family!r}")


@dataclass(frozen=True)
class MechanismSpec:
    """Additive mechanism of one vertex.

    ``terms`` holds ``(parent, family, weight, scale)`` tuples.  ``noise`` is
    ``"gaussian"`` (mean ``mu``, std ``sigma``) or ``"uniform"`` (same mean
    and standard deviation, i.e. half-width ``sqrt(3) * sigma``).
    """

    vertex: str
    terms: tuple = ()
    mu: float = 0.0
    sigma: float = 1.0
    noise: str = "gaussian"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"noise std of {self.vertex} must be positive, got {self.sigma}")
        if self.noise not in ("gaussian", "uniform"):
            raise ValueError(f"unknown noise kind {self.noise!r}")
        for term in self.terms:
            if term[1] not in FAMILIES:
                raise ValueError(f"unknown function family {term[1]!r}")
        object.__setattr__(self, "terms", tuple(tuple(t) for t in self.terms))

    @property
    def parents(self):
        return tuple(t[0] for t in self.terms)

    def draw_noise(self, rng, size):
        if self.noise == "gaussian":
            return rng.normal(self.mu, self.sigma, size)
        half = np.sqrt(3.0) * self.sigma
        return rng.uniform(self.mu - half, self.mu + half, size)

    def structural(self, values, size):
        out = np.zeros(size)
        for parent, family, weight, scale in self.terms:
            out += weight * apply_family(family, values[parent] / scale)
        return out

    def to_dict(self):
        return {
            "vertex": self.vertex,
            "terms": [list(t) for t in self.terms],
            "mu": self.mu,
            "sigma": self.sigma,
            "noise": self.noise,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["vertex"], tuple(tuple(t) for t in d["terms"]), d["mu"], d["sigma"], d["noise"])


@dataclass(frozen=True)
class SelectionSpec:
    """Keep rows with ``w1*g(Xi/s1) + w2*g(Xj/s2) > threshold``."""

    vertex: str
    pair: tuple
    family: str
    weights: tuple = (1.0, 1.0)
    scales: tuple = (1.0, 1.0)
    threshold: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown function family {self.family!r}")
        object.__setattr__(self, "pair", tuple(self.pair))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))

    def score(self, values):
        out = 0.0
        for name, w, s in zip(self.pair, self.weights, self.scales):
            out = out + w * apply_family(self.family, values[name] / s)
        return out

    def keep(self, values):
        return self.score(values) > self.threshold

    def to_dict(self):
        return {
            "vertex": self.vertex,
            "pair": list(self.pair),
            "family": self.family,
            "weights": list(self.weights),
            "scales": list(self.scales),
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["vertex"], tuple(d["pair"]), d["family"], tuple(d["weights"]), tuple(d["scales"]), d["threshold"])


@dataclass(frozen=True)
class InterventionSpec:
    """Perturbation of one target.

    ``hard``: ``X ~ U(a, b)``.  ``knockup``: add ``U(0, c)``.  ``knockdown``:
    add ``U(-d, 0)``.  ``shift``: add the constant ``delta``.  A soft kind
    may carry a replacement ``mechanism`` evaluated in place of the
    natural one before the additive term.
    """

    target: str
    kind: str
    a: float = None
    b: float = None
    c: float = None
    d: float = None
    delta: float = None
    mechanism: MechanismSpec = None

    def __post_init__(self):
        if self.kind not in INTERVENTION_KINDS:
            raise ValueError(f"unknown intervention kind {self.kind!r}")
        if self.kind == "hard" and not (self.a is not None and self.b is not None and self.a < self.b):
            raise ValueError(f"hard intervention on {self.target} needs a < b, got ({self.a}, {self.b})")
        if self.kind == "knockup" and not (self.c is not None and self.c > 0):
            raise ValueError("knockup magnitude c must be positive")
        if self.kind == "knockdown" and not (self.d is not None and self.d > 0):
            raise ValueError("knockdown magnitude d must be positive")
        if self.kind == "shift" and self.delta is None:
            raise ValueError("shift intervention needs delta")
        if self.kind == "hard" and self.mechanism is not None:
            raise ValueError("hard interventions replace the assignment outright")

    def apply(self, natural, rng, size):
        """Perturbed value given the (possibly replaced) structural value."""
        if self.kind == "hard":
            return rng.uniform(self.a, self.b, size)
        if self.kind == "knockup":
            return natural + rng.uniform(0.0, self.c, size)
        if self.kind == "knockdown":
            return natural + rng.uniform(-self.d, 0.0, size)
        return natural + self.delta

    def to_dict(self):
        d = {"target": self.target, "kind": self.kind}
        for key in ("a", "b", "c", "d", "delta"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        if self.mechanism is not None:
            d["mechanism"] = self.mechanism.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "mechanism" in d:
            d["mechanism"] = MechanismSpec.from_dict(d["mechanism"])
        return cls(**d)


@dataclass(frozen=True)
class Scm:
    structure: AugmentedDag
    mechanisms: dict
    selections: tuple = ()
    interventions: dict = field(default_factory=dict)

    def __post_init__(self):
        base = self.structure.base
        for v in base.vertices:
            kind = base.kind(v)
            if kind in (VertexKind.OBSERVED, VertexKind.LATENT):
                mech = self.mechanisms.get(v)
                if mech is None:
                    raise ValueError(f"no mechanism for {v}")
                if set(mech.parents) != set(base.parents(v)):
                    raise ValueError(f"mechanism of {v} does not match its parents")
        sel_pairs = {frozenset(s.pair) for s in self.selections}
        if sel_pairs != {frozenset(p) for p in self.structure.selection_pairs}:
            raise ValueError("selection specs do not match the structure's selection pairs")
        for t in self.interventions:
            if t not in self.structure.intervention_targets:
                raise ValueError(f"intervention on non-target {t}")
        object.__setattr__(self, "selections", tuple(self.selections))

    @property
    def observed(self):
        return self.structure.observed

    def to_dict(self):
        return {
            "format": "gisl-scm",
            "version": SCM_FORMAT_VERSION,
            "structure": self.structure.to_dict(),
            "mechanisms": [self.mechanisms[v].to_dict() for v in sorted_names(self.mechanisms)],
            "selections": [s.to_dict() for s in self.selections],
            "interventions": [self.interventions[t].to_dict() for t in sorted_names(self.interventions)],
        }

    @classmethod
    def from_dict(cls, d):
        mechs = [MechanismSpec.from_dict(m) for m in d["mechanisms"]]
        ints = [InterventionSpec.from_dict(i) for i in d["interventions"]]
        return cls(
            AugmentedDag.from_dict(d["structure"]),
            {m.vertex: m for m in mechs},
            tuple(SelectionSpec.from_dict(s) for s in d["selections"]),
            {i.target: i for i in ints},
        )


# -- sampling ----------------------------------------------------------------


def _forward(scm, rng, size, target=None, noise=None):
    """Ancestral pass.  Returns ``(natural, perturbed)`` value dicts sharing
    the same exogenous noise; ``perturbed`` is ``None`` without a target."""
    base = scm.structure.base
    order = [v for v in base.topological_order if v in scm.mechanisms]
    if noise is None:
        noise = {v: scm.mechanisms[v].draw_noise(rng, size) for v in order}
    natural = {}
    for v in order:
        natural[v] = scm.mechanisms[v].structural(natural, size) + noise[v]
    if target is None:
        return natural, None
    spec = scm.interventions[target]
    affected = base.descendants({target})
    perturbed = dict(natural)
    for v in order:
        if v not in affected:
            continue
        if v == target:
            mech = spec.mechanism or scm.mechanisms[v]
            structural = mech.structural(perturbed, size) + noise[v]
            perturbed[v] = spec.apply(structural, rng, size)
        else:
            perturbed[v] = scm.mechanisms[v].structural(perturbed, size) + noise[v]
    return natural, perturbed


def _selected(scm, values, size):
    keep = np.ones(size, dtype=bool)
    for spec in scm.selections:
        keep &= spec.keep(values)
    return keep


def draw_filtered(scm, target=None, n_draws=1000, seed=0, selection_timing="persistent", batch=0):
    """Draw ``n_draws`` unfiltered rows and return the ones that pass selection."""
    if selection_timing not in ("persistent", "post"):
        raise ValueError(f"unknown selection timing {selection_timing!r}")
    if target is not None and target not in scm.interventions:
        raise SimulationError(f"no intervention defined for {target!r}")
    rng = derive_rng(seed, "simulate", target or "observational", batch)
    natural, perturbed = _forward(scm, rng, n_draws, target)
    keep = _selected(scm, natural, n_draws)
    if perturbed is not None:
        post = _selected(scm, perturbed, n_draws)
        keep = keep & post if selection_timing == "persistent" else post
    values = perturbed if perturbed is not None else natural
    columns = tuple(scm.observed)
    return DataMatrix(columns, np.column_stack([values[c][keep] for c in columns]), target)


def simulate(scm, target=None, n=1500, seed=0, selection_timing="persistent", budget_factor=200):
    """Exactly ``n`` selected rows from the observational regime (``target``
    None) or the regime perturbing ``target``."""
    if n <= 0:
        raise ValueError("n must be positive")
    budget = budget_factor * n
    chunks, have, used, batch = [], 0, 0, 0
    while have < n:
        size = min(max(2 * (n - have), 1000), budget - used)
        if size <= 0:
            raise AttemptBudgetExceeded(
                f"only {have} of {n} rows survived selection after {used} draws "
                f"({'observational' if target is None else 'perturbed ' + target})"
            )
        part = draw_filtered(scm, target, size, seed, selection_timing, batch)
        chunks.append(part.values)
        have += part.n
        used += size
        batch += 1
    values = np.vstack(chunks)[:n]
    return DataMatrix(tuple(scm.observed), values, target)


def sample_scm(
    structure,
    seed,
    intervention="hard",
    mu_range=(0.0, 2.0),
    sigma_range=(0.5, 1.5),
    weight_range=(0.5, 2.0),
    retention_range=(0.3, 0.7),
    soft_range=(0.5, 2.0),
    hard_width=(0.25, 0.75),
    soft_mode="additive",
    pilot_rows=10000,
    selection_timing="persistent",
    min_relative_retention=0.2,
    max_redraws=20,
):
    """Random mechanisms, selection thresholds and interventions for ``structure``.

    ``intervention`` is ``"hard"`` or ``"soft"`` (knockup or knockdown with
    equal probability per target).  ``soft_mode="replace"`` additionally
    gives each soft target a freshly drawn mechanism.

    An intervention whose perturbed regime keeps less than
    ``min_relative_retention`` times the observational retention is redrawn
    (up to ``max_redraws`` times, keeping the best draw).
    """
    if intervention not in ("hard", "soft"):
        raise ValueError(f"intervention must be 'hard' or 'soft', got {intervention!r}")
    if soft_mode not in ("additive", "replace"):
        raise ValueError(f"unknown soft mode {soft_mode!r}")
    base = structure.base
    rng = derive_rng(seed, "scm")
    pilot_rng = derive_rng(seed, "pilot")
    pilot = {}
    mechanisms = {}

    def draw_terms(v):
        terms = []
        for p in sorted_names(base.parents(v)):
            family = FAMILIES[int(rng.integers(len(FAMILIES)))]
            weight = float(rng.uniform(*weight_range) * rng.choice([-1.0, 1.0]))
            sd = float(np.std(pilot[p]))
            terms.append((p, family, weight, sd if sd > 0 else 1.0))
        return tuple(terms)

    for v in base.topological_order:
        if base.kind(v) not in (VertexKind.OBSERVED, VertexKind.LATENT):
            continue
        mech = MechanismSpec(v, draw_terms(v), float(rng.uniform(*mu_range)), float(rng.uniform(*sigma_range)))
        mechanisms[v] = mech
        pilot[v] = mech.structural(pilot, pilot_rows) + mech.draw_noise(pilot_rng, pilot_rows)

    selections = []
    for s in sorted_names(base.selections):
        a, b = sorted_names(base.parents(s))
        family = FAMILIES[int(rng.integers(len(FAMILIES)))]
        weights = tuple(float(rng.uniform(*weight_range) * rng.choice([-1.0, 1.0])) for _ in range(2))
        scales = tuple(float(np.std(pilot[x])) or 1.0 for x in (a, b))
        spec = SelectionSpec(s, (a, b), family, weights, scales, 0.0)
        retention = float(rng.uniform(*retention_range))
        threshold = float(np.quantile(spec.score(pilot), 1.0 - retention))
        selections.append(replace(spec, threshold=threshold))

    def draw_intervention(t):
        if intervention == "hard":
            lo, hi = np.quantile(pilot[t], [0.01, 0.99])
            width = float(rng.uniform(*hard_width))
            a = float(lo + rng.uniform(0.0, 1.0 - width) * (hi - lo))
            return InterventionSpec(t, "hard", a=a, b=float(a + width * (hi - lo)))
        magnitude = float(rng.uniform(*soft_range))
        up = bool(rng.random() < 0.5)
        mech = None
        if soft_mode == "replace":
            old = mechanisms[t]
            mech = MechanismSpec(t, draw_terms(t), old.mu, old.sigma)
        if up:
            return InterventionSpec(t, "knockup", c=magnitude, mechanism=mech)
        return InterventionSpec(t, "knockdown", d=magnitude, mechanism=mech)

    # Redraw interventions that would let almost nothing through selection.
    probe_rows = 2000
    bare = Scm(structure, mechanisms, tuple(selections), {})
    base_rate = draw_filtered(bare, None, probe_rows, seed, "post").n / probe_rows
    interventions = {}
    for t in sorted_names(structure.intervention_targets):
        best, best_rate = None, -1.0
        for attempt in range(max_redraws + 1):
            spec = draw_intervention(t)
            if not selections:
                best = spec
                break
            probe = Scm(structure, mechanisms, tuple(selections), {t: spec})
            rate = draw_filtered(probe, t, probe_rows, seed, selection_timing).n / probe_rows
            if rate > best_rate:
                best, best_rate = spec, rate
            if rate >= min_relative_retention * base_rate:
                break
        interventions[t] = best
    return Scm(structure, mechanisms, tuple(selections), interventions)


# -- benchmark instances -------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkConfig:
    """One synthetic benchmark cell.

    ``n_conf`` and ``n_sel`` are counts or inclusive ``(low, high)`` ranges
    drawn per seed.  ``num_edges`` defaults to ``num_vars``.
    """

    num_vars: int = 10
    num_edges: int = None
    n: int = 1500
    intervention: str = "hard"
    n_conf: object = (1, 3)
    n_sel: object = (1, 3)
    mu_range: tuple = (0.0, 2.0)
    seed: int = 0
    targets: tuple = None
    selection_timing: str = "persistent"
    soft_mode: str = "additive"

    def to_dict(self):
        d = dict(self.__dict__)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("n_conf", "n_sel", "mu_range", "targets"):
            if isinstance(d.get(k), list):
                d[k] = tuple(d[k])
        return cls(**d)


def _count(spec, rng):
    if isinstance(spec, (tuple, list)):
        lo, hi = spec
        return int(rng.integers(lo, hi + 1))
    return int(spec)


@dataclass(frozen=True, eq=False)
class BenchmarkInstance:
    scm: Scm
    d0: DataMatrix
    perturbed: dict
    config: BenchmarkConfig = None

    def __post_init__(self):
        for t, dm in self.perturbed.items():
            if dm.target != t:
                raise ValueError(f"perturbed matrix for {t} has regime {dm.regime}")
            if dm.columns != self.d0.columns:
                raise ValueError("perturbed and observational columns differ")

    @property
    def structure(self):
        return self.scm.structure

    @property
    def true_edges(self):
        return self.structure.observed_edges()

    @property
    def confounded_pairs(self):
        return self.structure.confounded_pairs

    @property
    def selection_pairs(self):
        return self.structure.selection_pairs

    def truth_dict(self):
        return {
            "format": "gisl-truth",
            "version": INSTANCE_FORMAT_VERSION,
            "causal_edges": [list(e) for e in sorted(self.true_edges)],
            "confounded_pairs": [list(p) for p in sorted(self.confounded_pairs)],
            "selection_pairs": [list(p) for p in sorted(self.selection_pairs)],
            "structure": self.structure.to_dict(),
        }

    def save(self, directory):
        """Write ``d0.csv``, ``perturbed/<target>.csv``, ``scm.json``,
        ``truth.json`` and ``instance.json`` under ``directory``."""
        os.makedirs(directory, exist_ok=True)
        self.d0.save(os.path.join(directory, "d0.csv"))
        for t in sorted_names(self.perturbed):
            self.perturbed[t].save(os.path.join(directory, "perturbed", f"{t}.csv"))
        atomic_write_json(os.path.join(directory, "scm.json"), self.scm.to_dict())
        atomic_write_json(os.path.join(directory, "truth.json"), self.truth_dict())
        atomic_write_json(
            os.path.join(directory, "instance.json"),
            {
                "format": "gisl-instance",
                "version": INSTANCE_FORMAT_VERSION,
                "config": self.config.to_dict() if self.config else None,
                "targets": sorted_names(self.perturbed),
            },
        )

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "instance.json"), encoding="utf-8") as fh:
            meta = json.load(fh)
        with open(os.path.join(directory, "scm.json"), encoding="utf-8") as fh:
            scm = Scm.from_dict(json.load(fh))
        d0 = DataMatrix.load(os.path.join(directory, "d0.csv"))
        perturbed = {t: DataMatrix.load(os.path.join(directory, "perturbed", f"{t}.csv")) for t in meta["targets"]}
        config = BenchmarkConfig.from_dict(meta["config"]) if meta.get("config") else None
        return cls(scm, d0, perturbed, config)


BENCHMARK_SCM_ATTEMPTS = 5


def generate_benchmark(config):
    """ER DAG, confounders and selection sinks, random SCM, then data for
    the observational regime and every target."""
    if config.intervention not in ("hard", "soft"):
        raise ValueError(f"intervention must be 'hard' or 'soft', got {config.intervention!r}")
    rng = derive_rng(config.seed, "counts")
    num_edges = config.num_vars if config.num_edges is None else config.num_edges
    dag = generate_er_dag(config.num_vars, num_edges, config.seed)
    structure = augment_structure(
        dag, _count(config.n_conf, rng), _count(config.n_sel, rng), config.seed, config.targets
    )
    # A mechanism draw whose selection starves some regime is replaced by a
    # fresh one; attempt 0 keeps the plain seed.
    for attempt in range(BENCHMARK_SCM_ATTEMPTS):
        scm_seed = config.seed if attempt == 0 else stable_hash(config.seed, "redraw", attempt)
        scm = sample_scm(
            structure,
            scm_seed,
            config.intervention,
            mu_range=tuple(config.mu_range),
            soft_mode=config.soft_mode,
            selection_timing=config.selection_timing,
        )
        try:
            d0 = simulate(scm, None, config.n, config.seed, config.selection_timing)
            perturbed = {
                t: simulate(scm, t, config.n, config.seed, config.selection_timing)
                for t in sorted_names(structure.intervention_targets)
            }
            break
        except AttemptBudgetExceeded as exc:
            log.info("seed %s: redrawing mechanisms (%s)", config.seed, exc)
    else:
        raise AttemptBudgetExceeded(f"seed {config.seed}: no mechanism draw passed selection in {BENCHMARK_SCM_ATTEMPTS} attempts")
    return BenchmarkInstance(scm, d0, perturbed, config)


# -- small hand-built systems ----------------------------------------------------


def two_node_structure(kind, targets=None):
    """Canonical two-variable structures over ``X`` and ``Y``.

    ``kind`` is one of ``"causal"`` (X->Y), ``"latent"`` (X<-L->Y),
    ``"selection"`` (X->S<-Y), ``"causal_latent"`` (X->Y plus X<-L->Y),
    ``"causal_selection"`` (X->Y plus X->S<-Y) or ``"none"``.
    """
    vertices = ["X", "Y"]
    edges, conf, sel = [], [], []
    if kind in ("causal", "causal_latent", "causal_selection"):
        edges.append(("X", "Y"))
    if kind in ("latent", "causal_latent"):
        vertices.append(("L", VertexKind.LATENT))
        edges += [("L", "X"), ("L", "Y")]
        conf.append(("X", "Y"))
    if kind in ("selection", "causal_selection"):
        vertices.append(("S", VertexKind.SELECTION))
        edges += [("X", "S"), ("Y", "S")]
        sel.append(("X", "Y"))
    if kind not in ("none", "causal", "latent", "selection", "causal_latent", "causal_selection"):
        raise GraphError(f"unknown two-node structure {kind!r}")
    return AugmentedDag(Dag(vertices, edges), frozenset(conf), frozenset(sel), targets)


def example1_scm(shift=-0.5):
    """Two independent ``U[0, 2]`` variables kept when ``X + Y > 2``; the
    perturbation of ``X`` adds ``shift``."""
    structure = two_node_structure("selection", targets={"X"})
    sd = 2.0 / np.sqrt(12.0)
    mechs = {v: MechanismSpec(v, (), 1.0, sd, "uniform") for v in ("X", "Y")}
    sel = SelectionSpec("S", ("X", "Y"), "linear", (1.0, 1.0), (1.0, 1.0), 2.0)
    return Scm(structure, mechs, (sel,), {"X": InterventionSpec("X", "shift", delta=shift)})

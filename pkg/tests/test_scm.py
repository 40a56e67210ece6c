import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gisl.ci import unconditional_test
from gisl.graph import AugmentedDag, Dag, augment_structure, generate_er_dag
from gisl.proliferation import (
    ProliferationError,
    chronos_cell_count,
    chronos_zscore,
    fitness_effect,
    selection_fitness_effects,
    synthetic_zscores,
)
from gisl.scm import (
    FAMILIES,
    AttemptBudgetExceeded,
    BenchmarkConfig,
    BenchmarkInstance,
    InterventionSpec,
    MechanismSpec,
    Scm,
    SelectionSpec,
    apply_family,
    draw_filtered,
    example1_scm,
    generate_benchmark,
    sample_scm,
    simulate,
    two_node_structure,
)


def two_sample_rejects(a, b, seed=0):
    """Kernel test of the regime indicator against the pooled column."""
    ind = np.r_[np.zeros(len(a)), np.ones(len(b))]
    return unconditional_test(ind, np.r_[a, b], seed=seed).dependent


class TestSpecs:
    def test_log_family_defined_everywhere(self):
        u = np.array([-5.0, 0.0, 5.0])
        assert np.allclose(apply_family("log", u), np.log(np.abs(u) + 1))

    def test_families(self):
        assert set(FAMILIES) == {"linear", "square", "sin", "log"}

    @pytest.mark.parametrize(
        "kwargs",
        [dict(kind="hard", a=1.0, b=1.0), dict(kind="knockup", c=0.0), dict(kind="knockdown", d=-1.0), dict(kind="bogus")],
    )
    def test_intervention_validation(self, kwargs):
        with pytest.raises(ValueError):
            InterventionSpec("X", **kwargs)

    def test_sigma_positive(self):
        with pytest.raises(ValueError):
            MechanismSpec("X", (), 0.0, 0.0)

    def test_selection_mismatch(self):
        scm = sample_scm(two_node_structure("selection"), seed=0)
        with pytest.raises(ValueError):
            Scm(scm.structure, scm.mechanisms, (), scm.interventions)

    def test_roundtrip(self):
        scm = sample_scm(augment_structure(generate_er_dag(5, 5, 2), 1, 1, seed=2), seed=2, intervention="soft")
        assert Scm.from_dict(scm.to_dict()) == scm


class TestSampleScm:
    def test_deterministic(self):
        s = augment_structure(generate_er_dag(6, 6, 1), 1, 1, seed=1)
        assert sample_scm(s, seed=4) == sample_scm(s, seed=4)
        assert sample_scm(s, seed=4) != sample_scm(s, seed=5)

    def test_mu_district(self):
        s = augment_structure(generate_er_dag(8, 8, 3), 2, 1, seed=3)
        scm = sample_scm(s, seed=3, mu_range=(2.0, 4.0))
        assert all(2.0 <= m.mu <= 4.0 for m in scm.mechanisms.values())

    def test_edgeless_is_pure_noise(self):
        scm = sample_scm(two_node_structure("none"), seed=1)
        assert all(m.terms == () for m in scm.mechanisms.values())

    def test_latents_have_no_parents(self):
        scm = sample_scm(two_node_structure("latent"), seed=1)
        assert scm.mechanisms["L"].terms == ()

    def test_intervention_ranges(self):
        s = augment_structure(generate_er_dag(6, 6, 0), 1, 1, seed=0)
        for spec in sample_scm(s, seed=0, intervention="soft").interventions.values():
            mag = spec.c if spec.kind == "knockup" else spec.d
            assert 0.5 <= mag <= 2.0
        for spec in sample_scm(s, seed=0, intervention="hard").interventions.values():
            assert spec.kind == "hard" and spec.a < spec.b

    @given(st.integers(0, 10**6))
    @settings(max_examples=10, deadline=None)
    def test_retention_on_pilot(self, seed):
        scm = sample_scm(two_node_structure("selection"), seed=seed)
        for sel in scm.selections:
            rate = draw_filtered(Scm(scm.structure, scm.mechanisms, (sel,), {}), None, 10000, seed).n / 10000
            # quantile calibration on an independent pilot of the same size
            assert 0.27 <= rate <= 0.73


class TestSimulate:
    def test_no_selection_keeps_all(self):
        scm = sample_scm(two_node_structure("causal"), seed=0)
        assert draw_filtered(scm, None, 500, 0).n == 500
        assert simulate(scm, None, 500, 0).n == 500

    def test_exact_count_and_regime(self):
        scm = sample_scm(two_node_structure("selection"), seed=2)
        dm = simulate(scm, "Y", 700, seed=2)
        assert dm.n == 700 and dm.target == "Y" and dm.columns == ("X", "Y")

    def test_rows_satisfy_selection(self):
        scm = sample_scm(two_node_structure("selection"), seed=3)
        dm = simulate(scm, None, 800, seed=3)
        values = {c: dm.values[:, k] for k, c in enumerate(dm.columns)}
        assert scm.selections[0].keep(values).all()

    def test_deterministic(self):
        scm = sample_scm(two_node_structure("causal_selection"), seed=5)
        a, b = simulate(scm, "X", 400, 5), simulate(scm, "X", 400, 5)
        assert np.array_equal(a.values, b.values)

    def test_unknown_target(self):
        scm = example1_scm()
        with pytest.raises(Exception):
            simulate(scm, "Y", 10, 0)

    def test_budget(self):
        structure = two_node_structure("selection")
        scm = sample_scm(structure, seed=0)
        sel = scm.selections[0]
        impossible = Scm(structure, scm.mechanisms, (SelectionSpec(sel.vertex, sel.pair, "linear", (1.0, 1.0), (1.0, 1.0), 1e9),), {})
        with pytest.raises(AttemptBudgetExceeded):
            simulate(impossible, None, 100, 0)

    def test_example1_retained(self):
        scm = example1_scm()
        dm = draw_filtered(scm, None, 3000, seed=0)
        assert 1400 <= dm.n <= 1570
        assert np.corrcoef(dm.values.T)[0, 1] < -0.3

    def test_example1_y_shifts(self):
        scm = example1_scm()
        d0 = simulate(scm, None, 1000, 0)
        dx = simulate(scm, "X", 1000, 0)
        assert two_sample_rejects(d0.values[:, 1], dx.values[:, 1])

    def test_locality_without_selection(self):
        structure = AugmentedDag(Dag(["X", "Y", "Z"], [("X", "Y"), ("Y", "Z")]))
        rejections = 0
        for seed in range(50):
            scm = sample_scm(structure, seed=seed)
            d0 = simulate(scm, None, 300, seed)
            dz = simulate(scm, "Z", 300, seed + 1000)
            rejections += two_sample_rejects(d0.values[:, 0], dz.values[:, 0], seed)
        assert rejections <= 5

    @pytest.mark.parametrize("target,other", [("X", 1), ("Y", 0)])
    def test_selection_symmetry(self, target, other):
        # X -> S <- Y with linear selection, random hard interval per seed
        base = example1_scm()
        structure = two_node_structure("selection")
        rejections = 0
        for seed in range(50):
            g = np.random.default_rng(seed)
            width = 2 * g.uniform(0.25, 0.75)
            a = g.uniform(0, 2 - width)
            spec = InterventionSpec(target, "hard", a=a, b=a + width)
            scm = Scm(structure, base.mechanisms, base.selections, {target: spec})
            d0 = simulate(scm, None, 1000, seed)
            dk = simulate(scm, target, 1000, seed)
            rejections += two_sample_rejects(d0.values[:, other], dk.values[:, other], seed)
        assert rejections >= 45


class TestBenchmark:
    def test_shape(self):
        inst = generate_benchmark(BenchmarkConfig(num_vars=15, num_edges=15, n=1500, seed=1))
        assert len(inst.perturbed) == 15
        assert all(m.n == 1500 for m in [inst.d0, *inst.perturbed.values()])
        assert len(inst.true_edges) == 15

    def test_fig3c_testbed(self):
        inst = generate_benchmark(BenchmarkConfig(num_vars=2, num_edges=0, n=300, n_conf=0, n_sel=1, seed=0))
        assert inst.selection_pairs == {("X1", "X2")} and not inst.true_edges

    def test_deterministic_and_roundtrip(self, tmp_path):
        cfg = BenchmarkConfig(num_vars=4, num_edges=3, n=200, seed=7)
        a, b = generate_benchmark(cfg), generate_benchmark(cfg)
        assert np.array_equal(a.d0.values, b.d0.values)
        a.save(tmp_path / "inst")
        c = BenchmarkInstance.load(tmp_path / "inst")
        assert c.truth_dict() == a.truth_dict()
        assert np.array_equal(c.perturbed["X2"].values, a.perturbed["X2"].values)


class TestProliferation:
    def test_cell_count_examples(self):
        assert chronos_cell_count(100, 0, 99.0, 0.1, 10) == pytest.approx(100 * math.e)
        assert chronos_cell_count(100, 1, 0.0, 7.0, 5) == pytest.approx(100)
        # independent evaluation: 0.5 e^-0.4 + 0.5 e^0.6
        assert chronos_cell_count(1, 0.5, -0.2, 0.3, 2) == pytest.approx(1.2462, abs=1e-4)

    @given(st.floats(0.1, 100), st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 5))
    def test_cell_count_limits(self, n0, rs, r, t):
        assert chronos_cell_count(n0, 0.0, rs, r, t) == pytest.approx(n0 * math.exp(r * t))
        assert chronos_cell_count(n0, 1.0, rs, r, t) == pytest.approx(n0 * math.exp(rs * t))

    def test_cell_count_errors(self):
        with pytest.raises(ValueError):
            chronos_cell_count(1, 1.5, 0, 0, 1)
        with pytest.raises(ProliferationError):
            chronos_cell_count(1, 0.5, 1e4, 0, 1e4)

    def test_zscore_examples(self):
        assert chronos_zscore(2.0, 0.5, 0.5, 1.0, 3.0, 1.0, 2.0) == 2.0
        assert chronos_zscore(1.5, 0.4, 0.9, 0.7, 0.0, 9.0, 1.0) == pytest.approx(1.5)
        assert chronos_zscore(1, 1, 1, 0.5, -1, 2, 0) == pytest.approx(math.exp(-1), abs=1e-4)

    def test_fitness_and_synthetic(self):
        assert fitness_effect(0.15, 0.3) == pytest.approx(-0.5)
        z = synthetic_zscores({"A": 0.0, "B": -1.0, "C": 1.0}, t=5)
        assert z["A"] == 0.0 and z["B"] < 0 < z["C"]

    def test_selection_fitness(self):
        effects = selection_fitness_effects(example1_scm(), rows=5000)
        # shifting X down lowers the fraction passing X + Y > 2
        assert effects["X"] < 0

from dataclasses import replace

import numpy as np
import pytest

from gisl.ci import (
    DEFAULT_CONFIG,
    CiConfig,
    InsufficientSamples,
    KernelCiTester,
    build_pooled,
    conditional_permutation_pvalue,
    conditional_test,
    incomplete_cholesky,
    kernel_features,
    test_quad as quad_from_data,
    unconditional_test,
)
from gisl.data import DataError, DataMatrix
from gisl.patterns import Verdict
from gisl.scm import simulate, two_node_structure, sample_scm


def rng(seed=0):
    return np.random.default_rng(seed)


class TestKernels:
    def test_incomplete_cholesky_reconstructs(self):
        x = rng().normal(size=(80, 2))
        d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
        k = np.exp(-d2 / 2)
        g = incomplete_cholesky(80, lambda j: k[:, j], 1e-10, 80)
        assert np.abs(g @ g.T - k).max() < 1e-6

    def test_features_centered(self):
        f = kernel_features(rng().normal(size=300), rng(1))
        assert np.allclose(f.mean(axis=0), 0)

    def test_binary_block_uses_delta(self):
        b = (rng().random(100) < 0.5).astype(float)
        f = kernel_features(b, rng(1))
        k = f @ f.T
        same = b[:, None] == b[None, :]
        # centered delta kernel is constant within each block pair
        assert np.allclose(k[same & (b[:, None] == 1)], k[same & (b[:, None] == 1)][0])


class TestUnconditional:
    def test_identical_columns(self):
        x = rng().normal(size=200)
        v = unconditional_test(x, x)
        assert v.dependent and v.p_value < 1e-6

    def test_symmetric_statistic(self):
        r = rng(3)
        x, y = r.normal(size=400), r.normal(size=400)
        a, b = unconditional_test(x, y, seed=2), unconditional_test(y, x, seed=2)
        assert a.statistic == pytest.approx(b.statistic, rel=1e-12)
        assert a.p_value == pytest.approx(b.p_value, rel=1e-9)

    def test_power_on_sine(self):
        hits = 0
        for k in range(50):
            r = rng(100 + k)
            x = r.normal(size=500)
            y = np.sin(x) + 0.3 * r.normal(size=500)
            hits += unconditional_test(x, y, seed=k).dependent
        assert hits >= 48

    def test_example1_selected_data_dependent(self):
        r = rng(7)
        x, y = r.uniform(0, 2, 3000), r.uniform(0, 2, 3000)
        keep = x + y > 2
        assert unconditional_test(x[keep], y[keep]).dependent

    def test_binary_continuous_level(self):
        rej = 0
        for k in range(100):
            r = rng(500 + k)
            rej += unconditional_test((r.random(400) < 0.5).astype(float), r.normal(size=400), seed=k).dependent
        assert rej <= 12

    def test_zero_variance(self):
        v = unconditional_test(np.ones(100), rng().normal(size=100))
        assert not v.dependent and v.p_value == 1.0 and "zero variance" in v.note

    def test_insufficient(self):
        with pytest.raises(InsufficientSamples):
            unconditional_test(np.arange(10.0), np.arange(10.0))

    def test_row_cap(self):
        cfg = replace(DEFAULT_CONFIG, n_max=500)
        x = rng().normal(size=2000)
        assert unconditional_test(x, x ** 2, config=cfg).n_used == 500

    def test_deterministic(self):
        x, y = rng(1).normal(size=600), rng(2).normal(size=600)
        assert unconditional_test(x, y, seed=4) == unconditional_test(x, y, seed=4)

    def test_gamma_agrees_with_permutation(self):
        r = rng(11)
        x = r.normal(size=300)
        y = 0.15 * x + r.normal(size=300)
        gam = unconditional_test(x, y)
        perm = unconditional_test(x, y, config=replace(DEFAULT_CONFIG, null="permutation", n_permutations=300))
        assert abs(gam.p_value - perm.p_value) < 0.1


class TestConditional:
    def test_chain_independent_given_middle(self):
        indep = 0
        for k in range(50):
            r = rng(1000 + k)
            x = r.normal(size=1000)
            z = np.tanh(x) + 0.5 * r.normal(size=1000)
            y = z ** 2 + 0.5 * r.normal(size=1000)
            indep += not conditional_test(x, y, z, seed=k).dependent
        assert indep >= 40

    def test_irrelevant_z_keeps_dependence(self):
        r = rng(5)
        x = r.normal(size=500)
        y = x + r.normal(size=500)
        z = r.normal(size=500)
        v = conditional_test(x, y, z)
        assert v.dependent
        _, p_perm = conditional_permutation_pvalue(x, y, z, replace(DEFAULT_CONFIG, n_permutations=100))
        assert p_perm < 0.05

    def test_constant_z_dropped(self):
        r = rng(6)
        x = r.normal(size=200)
        v = conditional_test(x, x + r.normal(size=200), np.ones(200))
        assert v.dependent and "constant" in v.note

    def test_insufficient(self):
        with pytest.raises(InsufficientSamples):
            conditional_test(np.arange(40.0), np.arange(40.0), np.arange(40.0))

    def test_p_value_in_range(self):
        r = rng(8)
        v = conditional_test(r.normal(size=300), r.normal(size=300), r.normal(size=(300, 2)))
        assert 0.0 <= v.p_value <= 1.0
        assert v.dependent == (v.p_value < v.alpha)


def _matrices(n0, nk):
    r = rng(9)
    d0 = DataMatrix(("X", "Y"), r.normal(size=(n0, 2)))
    dk = DataMatrix(("X", "Y"), r.normal(size=(nk, 2)), "X")
    return d0, dk


class TestPooled:
    def test_equal_sizes(self):
        p = build_pooled(*_matrices(500, 500), pair=("X", "Y"))
        assert p.n == 1000 and p.indicator.sum() == 500

    def test_balancing(self):
        p = build_pooled(*_matrices(3000, 500), pair=("X", "Y"))
        assert p.n == 2000 and p.indicator.sum() == 500

    def test_column_mismatch(self):
        d0, _ = _matrices(100, 100)
        dk = DataMatrix(("X", "Z"), np.zeros((100, 2)), "X")
        with pytest.raises(DataError):
            build_pooled(d0, dk)

    def test_requires_perturbed(self):
        d0, _ = _matrices(100, 100)
        with pytest.raises(DataError):
            build_pooled(d0, d0)


class TestQuads:
    @staticmethod
    def _quad(kind, seed):
        scm = sample_scm(two_node_structure(kind), seed=seed, intervention="hard")
        data = {t: simulate(scm, t, 1500, seed=seed) for t in (None, "X", "Y")}
        return quad_from_data(data[None], data["X"], data["Y"], ("X", "Y"))

    @pytest.mark.parametrize("seed", [0, 1, 3])
    def test_causal_pair(self, seed):
        assert self._quad("causal", seed).slots == (Verdict.DEP, Verdict.INDEP, Verdict.INDEP, Verdict.DEP)

    def test_selection_pair_mostly_all_dependent(self):
        # finite-sample power on the indicator slots is imperfect
        hits = sum(self._quad("selection", s).slots == (Verdict.DEP,) * 4 for s in range(1, 5))
        assert hits >= 2

    def test_failed_slot_is_unusable(self):
        d0 = DataMatrix(("X", "Y"), rng().normal(size=(20, 2)))
        dx = DataMatrix(("X", "Y"), rng(1).normal(size=(20, 2)), "X")
        dy = DataMatrix(("X", "Y"), rng(2).normal(size=(20, 2)), "Y")
        q = quad_from_data(d0, dx, dy, ("X", "Y"), extra_cond=())
        assert not q.usable

    def test_tester_cache_and_dump(self, tmp_path):
        d0, dk = _matrices(300, 300)
        t = KernelCiTester(d0, {"X": dk}, config=CiConfig())
        a = t.test("X", "Y")
        b = t.test("Y", "X")
        assert a is b and len(t.records) == 1
        t.indicator_test("X", "Y", ["X"])
        path = tmp_path / "tests.csv"
        t.dump_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("regime,x,y,cond") and len(lines) == 3

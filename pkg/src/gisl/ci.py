"""Kernel (conditional) independence tests.

Unconditional tests use the HSIC statistic ``sum(Kx~ * Ky~)`` of centered
kernel matrices; conditional tests use the KCI statistic on kernel matrices
residualized on the conditioning kernel by ridge regression.  Both nulls are
approximated by a moment-matched gamma distribution.

Kernel matrices are never inverted at full size: every kernel is factored
as ``K ~= G G^T`` by pivoted incomplete Cholesky, so a test on ``n`` rows
costs ``O(n^2 m)`` with ``m`` the numerical rank (tens to a few hundred).

Binary columns (at most two distinct values, e.g. regime indicators) get a
delta kernel; real columns a Gaussian kernel with median-heuristic width on
standardized values.
"""

import csv
import io
import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg, stats
from scipy.spatial.distance import pdist

from ._util import atomic_write_text, canonical_pair, derive_rng, sorted_names
from .data import DataError, DataMatrix
from .patterns import PatternQuad, Verdict

log = logging.getLogger(__name__)


class CiError(Exception):
    """A test could not be carried out."""


class InsufficientSamples(CiError):
    pass


class SingularSolve(CiError):
    pass


@dataclass(frozen=True)
class CiVerdict:
    statistic: float
    p_value: float
    dependent: bool
    alpha: float
    n_used: int
    note: str = ""


@dataclass(frozen=True)
class CiConfig:
    """Tuning knobs of the kernel tests.

    ``ridge`` is multiplied by the sample size to give the regularizer of
    the conditioning-kernel regression.
    """

    n_max: int = 1500
    ridge: float = 1e-3
    bandwidth_rows: int = 1000
    chol_tol: float = 1e-5
    max_rank: int = 400
    null: str = "gamma"
    n_permutations: int = 500
    balance_ratio: float = 3.0

    def to_dict(self):
        return dict(self.__dict__)


DEFAULT_CONFIG = CiConfig()
MIN_ROWS_UNCONDITIONAL = 30
MIN_ROWS_CONDITIONAL = 50


# -- kernels ---------------------------------------------------------------


def _as_2d(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def _is_binary(col):
    return np.unique(col).size <= 2


def _is_constant(block):
    return bool(np.all(np.ptp(block, axis=0) == 0))


def median_bandwidth(block, rng, max_rows=1000):
    """Median pairwise Euclidean distance over at most ``max_rows`` rows."""
    if block.shape[0] > max_rows:
        block = block[np.sort(rng.choice(block.shape[0], max_rows, replace=False))]
    d = pdist(block)
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def incomplete_cholesky(n, column, tol, max_rank):
    """Pivoted incomplete Cholesky of a unit-diagonal PSD matrix.

    ``column(k)`` returns the k-th column.  Returns ``G`` with
    ``K ~= G @ G.T`` and residual diagonal below ``tol``.
    """
    diag = np.ones(n)
    G = np.zeros((n, min(max_rank, n)))
    m = 0
    while m < G.shape[1]:
        k = int(np.argmax(diag))
        if diag[k] <= tol:
            break
        g = column(k) - G[:, :m] @ G[k, :m]
        g /= np.sqrt(diag[k])
        G[:, m] = g
        diag -= g * g
        np.maximum(diag, 0.0, out=diag)
        diag[k] = 0.0
        m += 1
    return G[:, :m]


def kernel_features(block, rng, config=DEFAULT_CONFIG):
    """Centered low-rank factor of the product kernel over the block's columns."""
    block = _as_2d(block)
    n = block.shape[0]
    binary = [k for k in range(block.shape[1]) if _is_binary(block[:, k])]
    real = [k for k in range(block.shape[1]) if k not in binary]
    codes = None
    if binary:
        _, codes = np.unique(block[:, binary], axis=0, return_inverse=True)
        codes = codes.ravel()
    if not real:
        feats = np.zeros((n, codes.max() + 1))
        feats[np.arange(n), codes] = 1.0
    else:
        cont = block[:, real]
        sd = cont.std(axis=0)
        sd[sd == 0] = 1.0
        cont = (cont - cont.mean(axis=0)) / sd
        width = median_bandwidth(cont, rng, config.bandwidth_rows)
        scale = -0.5 / width**2
        sqnorm = np.einsum("ij,ij->i", cont, cont)

        def column(k):
            d2 = sqnorm + sqnorm[k] - 2.0 * (cont @ cont[k])
            col = np.exp(scale * np.maximum(d2, 0.0))
            if codes is not None:
                col = col * (codes == codes[k])
            return col

        feats = incomplete_cholesky(n, column, config.chol_tol, config.max_rank)
    return feats - feats.mean(axis=0)


def _gamma_pvalue(stat, mean, var):
    if mean <= 0 or var <= 0:
        return 1.0
    shape = mean**2 / var
    scale = var / mean
    return float(np.clip(stats.gamma.sf(stat, shape, scale=scale), 0.0, 1.0))


def _verdict(stat, p, alpha, n, note=""):
    return CiVerdict(float(stat), float(p), bool(p < alpha), float(alpha), int(n), note)


def _subsample(arrays, n_max, rng):
    n = arrays[0].shape[0]
    if n <= n_max:
        return arrays
    idx = np.sort(rng.choice(n, n_max, replace=False))
    return [a[idx] for a in arrays]


# -- tests -------------------------------------------------------------------


def hsic_statistic(fx, fy):
    kx = fx @ fx.T
    ky = fy @ fy.T
    return float(np.sum(kx * ky)), kx, ky


def unconditional_test(x, y, alpha=0.05, config=DEFAULT_CONFIG, seed=0):
    """HSIC independence test with gamma null.

    >>> rng = np.random.default_rng(0)
    >>> x = rng.normal(size=200)
    >>> unconditional_test(x, x).dependent
    True
    """
    x, y = _as_2d(x), _as_2d(y)
    if x.shape[0] != y.shape[0]:
        raise CiError("columns have different lengths")
    if x.shape[0] < MIN_ROWS_UNCONDITIONAL:
        raise InsufficientSamples(f"{x.shape[0]} rows < {MIN_ROWS_UNCONDITIONAL}")
    rng = derive_rng(seed, "uncond")
    x, y = _subsample([x, y], config.n_max, rng)
    n = x.shape[0]
    if _is_constant(x) or _is_constant(y):
        return _verdict(0.0, 1.0, alpha, n, "zero variance column")
    fx = kernel_features(x, derive_rng(seed, "bw"), config)
    fy = kernel_features(y, derive_rng(seed, "bw"), config)
    stat, kx, ky = hsic_statistic(fx, fy)
    if config.null == "permutation":
        p = _permutation_pvalue(stat, kx, ky, config.n_permutations, derive_rng(seed, "perm"))
    else:
        mean = np.trace(kx) * np.trace(ky) / n
        var = 2.0 * np.sum(kx * kx) * np.sum(ky * ky) / n**2
        p = _gamma_pvalue(stat, mean, var)
    return _verdict(stat, p, alpha, n)


def _permutation_pvalue(stat, kx, ky, n_perm, rng):
    n = kx.shape[0]
    hits = 0
    for _ in range(n_perm):
        p = rng.permutation(n)
        if np.sum(kx * ky[np.ix_(p, p)]) >= stat:
            hits += 1
    return (hits + 1) / (n_perm + 1)


def _residualize(fz, feats, ridge):
    gram = fz.T @ fz
    gram[np.diag_indices_from(gram)] += ridge
    try:
        factor = linalg.cho_factor(gram)
    except linalg.LinAlgError as exc:
        raise SingularSolve(f"regularized solve failed with ridge={ridge:g}") from exc
    return [f - fz @ linalg.cho_solve(factor, fz.T @ f) for f in feats]


def conditional_test(x, y, z, alpha=0.05, config=DEFAULT_CONFIG, seed=0):
    """KCI test of ``x`` independent of ``y`` given ``z``.

    The x-kernel is built on ``[x, z]``; both kernels are residualized on
    the z-kernel with ridge ``config.ridge * n``.
    """
    x, y, z = _as_2d(x), _as_2d(y), _as_2d(z)
    if not (x.shape[0] == y.shape[0] == z.shape[0]):
        raise CiError("columns have different lengths")
    if z.shape[1] == 0:
        return unconditional_test(x, y, alpha, config, seed)
    if x.shape[0] < MIN_ROWS_CONDITIONAL:
        raise InsufficientSamples(f"{x.shape[0]} rows < {MIN_ROWS_CONDITIONAL}")
    rng = derive_rng(seed, "cond")
    x, y, z = _subsample([x, y, z], config.n_max, rng)
    n = x.shape[0]
    if _is_constant(x) or _is_constant(y):
        return _verdict(0.0, 1.0, alpha, n, "zero variance column")
    keep = np.ptp(z, axis=0) > 0
    if not keep.any():
        v = unconditional_test(x, y, alpha, replace(config, n_max=n), seed)
        return replace(v, note="constant conditioning set dropped")
    z = z[:, keep]
    fz = kernel_features(z, derive_rng(seed, "bw"), config)
    fx = kernel_features(np.hstack([x, z]), derive_rng(seed, "bw"), config)
    fy = kernel_features(y, derive_rng(seed, "bw"), config)
    ax, ay = _residualize(fz, [fx, fy], config.ridge * n)
    kx = ax @ ax.T
    ky = ay @ ay.T
    prod = kx * ky
    stat = float(np.sum(prod))
    if config.null == "permutation":
        p = conditional_permutation_pvalue(x, y, z, config, seed)[1]
    else:
        p = _gamma_pvalue(stat, float(np.trace(prod)), 2.0 * float(np.sum(prod * prod)))
    return _verdict(stat, p, alpha, n)


def conditional_permutation_pvalue(x, y, z, config=DEFAULT_CONFIG, seed=0, n_bins=10):
    """Slow reference p-value: KCI statistic against permutations of ``y``
    within quantile bins of ``z``'s leading principal direction."""
    x, y, z = _as_2d(x), _as_2d(y), _as_2d(z)
    n = x.shape[0]
    zs = (z - z.mean(axis=0)) / np.where(z.std(axis=0) > 0, z.std(axis=0), 1.0)
    lead = zs @ np.linalg.svd(zs, full_matrices=False)[2][0] if zs.shape[1] > 1 else zs[:, 0]
    bins = np.searchsorted(np.quantile(lead, np.linspace(0, 1, n_bins + 1)[1:-1]), lead, side="right")
    fz = kernel_features(z, derive_rng(seed, "bw"), config)
    fx = kernel_features(np.hstack([x, z]), derive_rng(seed, "bw"), config)
    fy = kernel_features(y, derive_rng(seed, "bw"), config)
    ridge = config.ridge * n
    (ax,) = _residualize(fz, [fx], ridge)
    kx = ax @ ax.T

    def stat_for(fy_rows):
        (ay,) = _residualize(fz, [fy_rows], ridge)
        return float(np.sum(kx * (ay @ ay.T)))

    stat = stat_for(fy)
    rng = derive_rng(seed, "cperm")
    groups = [np.flatnonzero(bins == b) for b in np.unique(bins)]
    hits = 0
    for _ in range(config.n_permutations):
        perm = np.arange(n)
        for g in groups:
            perm[g] = g[rng.permutation(g.size)]
        if stat_for(fy[perm]) >= stat:
            hits += 1
    return stat, (hits + 1) / (config.n_permutations + 1)


# -- pooled two-regime data --------------------------------------------------


@dataclass(frozen=True)
class PooledPairData:
    """Rows of ``D_0`` and ``D_target`` stacked with a regime indicator."""

    target: str
    indicator: np.ndarray
    data: DataMatrix

    @property
    def n(self):
        return self.indicator.shape[0]

    def column(self, name):
        return self.data.column(name)


def build_pooled(d0, dk, pair=None, cond=(), seed=0, balance_ratio=3.0):
    """Stack observational and perturbed rows with indicator 0/1.

    When one regime has more than ``balance_ratio`` times the rows of the
    other, the larger one is subsampled down to that ratio.
    """
    if dk.target is None:
        raise DataError("second matrix must come from a perturbation regime")
    if pair is not None and dk.target not in pair:
        raise DataError(f"{dk.regime} does not perturb either of {pair}")
    if d0.columns != dk.columns:
        raise DataError("observational and perturbed matrices have different columns")
    needed = list(pair or ()) + list(cond)
    for name in needed:
        if name not in d0.columns:
            raise DataError(f"unknown column {name!r}")
    rng = derive_rng(seed, "pool", dk.target)
    a, b = d0.values, dk.values
    cap_a = int(balance_ratio * b.shape[0])
    cap_b = int(balance_ratio * a.shape[0])
    if a.shape[0] > cap_a:
        a = a[np.sort(rng.choice(a.shape[0], cap_a, replace=False))]
    elif b.shape[0] > cap_b:
        b = b[np.sort(rng.choice(b.shape[0], cap_b, replace=False))]
    indicator = np.concatenate([np.zeros(a.shape[0], dtype=int), np.ones(b.shape[0], dtype=int)])
    data = DataMatrix(d0.columns, np.vstack([a, b]))
    return PooledPairData(dk.target, indicator, data)


# -- test runner with cache and audit trail ----------------------------------


class KernelCiTester:
    """Runs and caches kernel CI tests over one dataset collection.

    ``test`` works on the observational matrix; ``indicator_test`` on the
    pooled observational + perturbed(target) rows.
    """

    def __init__(self, d0, perturbed=None, alpha=0.05, config=DEFAULT_CONFIG, seed=0):
        self.d0 = d0
        self.perturbed = dict(perturbed or {})
        self.alpha = alpha
        self.config = config
        self.seed = seed
        self._pooled = {}
        self._cache = {}
        self.records = []

    @property
    def variables(self):
        return self.d0.columns

    @property
    def targets(self):
        return frozenset(self.perturbed)

    def pooled(self, target):
        if target not in self._pooled:
            if target not in self.perturbed:
                raise CiError(f"no perturbation data for {target!r}")
            self._pooled[target] = build_pooled(
                self.d0, self.perturbed[target], seed=self.seed, balance_ratio=self.config.balance_ratio
            )
        return self._pooled[target]

    def _run(self, key, x, y, z, regime, names):
        if key in self._cache:
            return self._cache[key]
        seed = int(derive_rng(self.seed, *key).integers(2**31))
        if z.shape[1]:
            v = conditional_test(x, y, z, self.alpha, self.config, seed)
        else:
            v = unconditional_test(x, y, self.alpha, self.config, seed)
        self._cache[key] = v
        self.records.append((regime, names[0], names[1], names[2], v))
        return v

    def test(self, a, b, cond=()):
        a, b = canonical_pair(a, b)
        cond = tuple(sorted_names(cond))
        key = ("obs", a, b, cond)
        z = self.d0.select(cond) if cond else np.empty((self.d0.n, 0))
        return self._run(key, self.d0.column(a), self.d0.column(b), z, "observational", (a, b, cond))

    def indicator_test(self, target, var, cond=()):
        cond = tuple(sorted_names(cond))
        key = ("ind", target, var, cond)
        if key in self._cache:
            return self._cache[key]
        pooled = self.pooled(target)
        z = pooled.data.select(cond) if cond else np.empty((pooled.n, 0))
        return self._run(
            key, pooled.indicator.astype(float), pooled.column(var), z, f"pooled:{target}",
            (f"I_{target}", var, cond),
        )

    def quad(self, i, j, extra_cond=()):
        """Four indicator tests for the pair ``(i, j)``."""
        extra = frozenset(extra_cond)
        slots = [
            (i, j, extra),
            (i, j, extra | {i}),
            (j, i, extra),
            (j, i, extra | {j}),
        ]
        verdicts, notes = [], []
        for target, var, cond in slots:
            try:
                v = self.indicator_test(target, var, cond)
            except (CiError, DataError) as exc:
                verdicts.append(Verdict.UNUSABLE)
                notes.append(f"I_{target} vs {var}: {exc}")
                continue
            verdicts.append(Verdict.DEP if v.dependent else Verdict.INDEP)
        return PatternQuad((i, j), *verdicts, cond_used=extra, notes=tuple(notes))

    def dump_csv(self, path):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["regime", "x", "y", "cond", "statistic", "p_value", "dependent", "n_used", "note"])
        for regime, x, y, cond, v in self.records:
            writer.writerow([regime, x, y, ";".join(cond), repr(v.statistic), repr(v.p_value),
                             int(v.dependent), v.n_used, v.note])
        atomic_write_text(path, buf.getvalue())


def test_quad(d0, d_i, d_j, pair, extra_cond=(), alpha=0.05, config=DEFAULT_CONFIG, seed=0):
    """Pattern quad for ``pair`` from observational and the two perturbed matrices."""
    i, j = pair
    if d_i.target != i or d_j.target != j:
        raise DataError(f"matrices must perturb {i!r} and {j!r} respectively")
    tester = KernelCiTester(d0, {i: d_i, j: d_j}, alpha, config, seed)
    return tester.quad(i, j, extra_cond)


test_quad.__test__ = False  # not a pytest test despite the name

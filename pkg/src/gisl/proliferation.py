"""Forward proliferation model for pooled knockout screens and the Z-score
it induces.

``chronos_cell_count`` gives the expected cell count of a guide after time
``t`` when a fraction ``p`` of cells carries the knockout (growth rate
``R_star``) and the rest grow at the unperturbed rate ``R``.
``chronos_zscore`` is the corresponding readout after a delay ``d``.
"""

import math

import numpy as np


class ProliferationError(ArithmeticError):
    pass


def _check_prob(name, p):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p}")


def _exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        raise ProliferationError(f"exp({x:g}) overflows; growth rate or time too large") from None


def chronos_cell_count(N0, p, R_star, R, t):
    """``N0 * (p * exp(R_star * t) + (1 - p) * exp(R * t))``.

    >>> round(chronos_cell_count(100, 0.0, 5.0, 0.1, 10), 2)
    271.83
    """
    if not N0 > 0:
        raise ValueError(f"N0 must be positive, got {N0}")
    _check_prob("p", p)
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    # a zero-weight branch never overflows
    perturbed = p * _exp(R_star * t) if p > 0 else 0.0
    unperturbed = (1.0 - p) * _exp(R * t) if p < 1 else 0.0
    return N0 * (perturbed + unperturbed)


def chronos_zscore(v0, p_c, p_j, R, r, t, d):
    """``v0`` before the delay ``d``; afterwards
    ``v0 * (1 + p_c * p_j * (exp(R * r * (t - d)) - 1))``."""
    _check_prob("p_c", p_c)
    _check_prob("p_j", p_j)
    if d < 0:
        raise ValueError(f"delay d must be nonnegative, got {d}")
    if t < d:
        return float(v0)
    return v0 * (1.0 + p_c * p_j * (_exp(R * r * (t - d)) - 1.0))


def fitness_effect(R_star, R):
    """Relative change of growth rate ``R_star / R - 1``."""
    if R == 0:
        raise ValueError("unperturbed growth rate must be nonzero")
    return R_star / R - 1.0


def synthetic_zscores(effects, t, d=0.0, R=0.3, p_c=1.0, p_j=1.0, v0=1.0):
    """Z-score table from per-gene fitness effects.

    The score of a gene is the fractional change ``Z(t) / v0 - 1`` of its
    readout, so an unaffected gene scores 0 and both growth gains and
    losses move it away from 0.
    """
    out = {}
    for gene, r in effects.items():
        out[gene] = chronos_zscore(v0, p_c, p_j, R, r, t, d) / v0 - 1.0
    return out


def selection_fitness_effects(scm, t_effect=1.0, rows=20000, seed=0):
    """Fitness effect of perturbing each target, as the relative change of
    the fraction of cells passing every selection criterion.

    Genes that feed a selection criterion get a nonzero effect; others
    only through their descendants.  ``t_effect`` rescales the result.
    """
    from .scm import draw_filtered

    base_rate = draw_filtered(scm, None, rows, seed).n / rows
    if base_rate == 0:
        raise ProliferationError("no row survives selection in the observational regime")
    effects = {}
    for target in scm.interventions:
        rate = draw_filtered(scm, target, rows, seed, "post").n / rows
        effects[target] = t_effect * float(np.log(max(rate, 1e-12) / base_rate))
    return effects

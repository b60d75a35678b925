from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import pytest

from conftest import CAT, cat_field
from toralseries import (BetaTooLarge, InsufficientOrders, PerturbedSystem, TrigSeries,
                         Truncation, VectorTrigSeries, alpha_sequence, conjugacy_coefficients,
                         convergence_constants, eigendecompose, empirical_radius, secular_series)
from toralseries.diagnostics import (ALPHA_GROWTH, bound_table, conjugacy_growth,
                                     derivative_radius, holder_composition_check, holder_norm,
                                     sample_pairs)

PHI = (1 + math.sqrt(5)) / 2


@lru_cache(maxsize=None)
def alpha_naive(n):
    if n == 0:
        return 1
    return (sum(alpha_naive(n - j) * alpha_naive(j) for j in range(1, n))
            + sum(alpha_naive(j) for j in range(n)))


def test_alpha_first_values():
    a = alpha_sequence(6)
    assert a.values[:5] == (1, 1, 3, 11, 47)
    assert a.values == tuple(alpha_naive(n) for n in range(7))
    assert a.satisfies_recursion()


def test_alpha_exact_integers_and_growth():
    a = alpha_sequence(60)
    assert all(isinstance(x, int) for x in a.values)
    assert a.values == tuple(alpha_naive(n) for n in range(61))
    # the ratio tends to 4 + 2 sqrt 2, so the 4^n bound eventually fails
    assert a.ratios()[-1] == pytest.approx(ALPHA_GROWTH, rel=0.05)
    assert a.bound_violations()[0] == 10
    assert a[10] == 1103231 > 4 ** 10
    assert a.bound_violations(base=7) == []


def test_alpha_recursion_detects_tampering():
    from toralseries.diagnostics import AlphaSequence

    assert not AlphaSequence((1, 1, 3, 12)).satisfies_recursion()
    with pytest.raises(ValueError):
        alpha_sequence(-1)


def test_constants_on_cat_map():
    S = PerturbedSystem.build(CAT, cat_field(1.0))
    beta = 0.05
    c = convergence_constants(S, None, beta, C_empirical=1.3, R_empirical=2.0)
    den = (PHI ** (2 * beta) - 1) ** 2
    assert c.Omega == pytest.approx(PHI ** 2) and c.Omega_used == pytest.approx(PHI ** 2)
    assert c.K_beta == pytest.approx(PHI ** 4 / den, rel=1e-12)
    assert c.K1_beta == pytest.approx(PHI ** 2 / ((1 - PHI ** (-4 + 6 * beta)) * den), rel=1e-12)
    assert c.B_beta == pytest.approx(3 ** (2 / 3) * 2 * 2.0 * 1.3)
    assert c.E_beta == pytest.approx(c.K1_beta * c.B_beta * 2)
    assert c.eps_bar == pytest.approx(1 / (8 * c.E_beta))
    assert c.bound(3) == pytest.approx(11 * c.E_beta ** 3)
    assert len(c.pairs) == 2


def test_beta_too_large():
    S = PerturbedSystem.build(CAT, cat_field(1.0))
    with pytest.raises(BetaTooLarge):
        convergence_constants(S, None, 0.7, C_empirical=1.0, R_empirical=1.0)
    with pytest.raises(ValueError):
        convergence_constants(S, None, 0.0, C_empirical=1.0, R_empirical=1.0)


def test_derivative_radius():
    E = eigendecompose(CAT)
    F = VectorTrigSeries([TrigSeries.sin((0, 1), 0.1), TrigSeries.zero(2)])
    assert derivative_radius(F, E) == 1.0
    # one mode k: the s-th derivative along v_j has norm |a| |k.v_j|^s, largest at s = 1
    F = VectorTrigSeries([TrigSeries.sin((0, 1), 10.0), TrigSeries.zero(2)])
    assert derivative_radius(F, E) == pytest.approx(10 * np.abs(E.V[1]).max())


def test_empirical_radius():
    assert empirical_radius([0.5 ** n for n in range(1, 9)]) == pytest.approx(2.0)
    assert empirical_radius([3.0 * 0.2 ** n for n in range(1, 7)]) == pytest.approx(5.0)
    assert empirical_radius([0.0] * 5) == math.inf
    with pytest.raises(InsufficientOrders):
        empirical_radius([0.5, 0.25, 0.125])


def test_bound_table_and_growth(cat_system):
    sd, C, _phi = secular_series(cat_system, 4)
    consts = convergence_constants(cat_system, sd.eigen, 0.05, C)
    assert consts.C_beta == pytest.approx(conjugacy_growth(C))
    rows, bad, msg = bound_table(sd, consts)
    assert [r.n for r in rows] == [1, 2, 3, 4]
    assert bad == [] and msg == ""
    # an artificially small E_beta produces a report, not an exception
    from dataclasses import replace

    rows, bad, msg = bound_table(sd, replace(consts, E_beta=1e-3))
    assert bad and "too optimistic" in msg
    assert all(r.required_E > 1e-3 for r in bad)


def test_holder_norm_and_composition():
    x, y = sample_pairs(2, 2000, seed=1)
    c = TrigSeries.constant(2, -2.0)
    total, semi, sup = holder_norm(c, 0.5, x, y)
    assert (semi, sup, total) == (0.0, 2.0, 2.0)
    f = TrigSeries.sin((1, 0))
    total, semi, sup = holder_norm(f, 1.0, x, y)
    assert semi <= 1.0 + 1e-12 and sup <= 1.0
    rows = holder_composition_check(f + TrigSeries.cos((1, 1), 0.5), CAT, 0.3, m_max=4,
                                    n_pairs=2000)
    assert len(rows) == 9 and all(ok for *_r, ok in rows)

from __future__ import annotations

import numpy as np
import pytest

from toralseries import (MatrixTrigSeries, ResonantBlocks, ResonantPair, TrigSeries,
                         VectorTrigSeries, block_partition, eigendecompose, solve_conjugacy_block,
                         solve_conjugacy_step, solve_twisted_block, solve_twisted_scalar)
from toralseries.errors import BudgetExceeded
from toralseries.series import _dyadic_image, dyadic_points

CAT = np.array([[2, 1], [1, 1]])
LAM = 2.618033988749895
BITS = 30


def g_test():
    return (TrigSeries.sin((0, 1), 1.0, tau=1e-18) + TrigSeries.cos((1, 1), 0.5, tau=1e-18)
            + TrigSeries.constant(2, 0.3, tau=1e-18))


def orbit_sum(g, lam_i, lam_k, A, n_points=20, terms=80):
    """Direct orbit sum of the twisted equation on exact dyadic orbits."""
    j = dyadic_points(n_points, 2, seed=3)
    forward = abs(lam_i) < abs(lam_k)
    M = A if forward else np.rint(np.linalg.inv(A)).astype(np.int64)
    out = np.zeros(n_points)
    jm = j if forward else _dyadic_image(M, j)
    for m in range(terms):
        val = g(2 * np.pi * jm / 2 ** BITS)
        if forward:
            out -= lam_i ** m / lam_k ** (m + 1) * val
        else:
            out += lam_k ** m / lam_i ** (m + 1) * val
        jm = _dyadic_image(M, jm)
    return 2 * np.pi * j / 2 ** BITS, out


@pytest.mark.parametrize("lam_i, lam_k", [(1.0, LAM), (1.0, 1 / LAM), (1 / LAM, LAM),
                                          (LAM, 1 / LAM), (-0.5, 3.0)])
def test_scalar_equation_and_orbit_oracle(lam_i, lam_k):
    g = g_test()
    x = solve_twisted_scalar(g, lam_i, lam_k, CAT)
    psi, direct = orbit_sum(g, lam_i, lam_k, CAT)
    np.testing.assert_allclose(x(psi), direct, atol=1e-12)
    lhs = lam_k * x(psi) + g(psi)
    rhs = lam_i * x(np.mod(psi @ CAT.T, 2 * np.pi))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    assert x.dropped < 1e-12


def test_scalar_resonance_and_budget():
    with pytest.raises(ResonantPair):
        solve_twisted_scalar(g_test(), 2.0, -2.0, CAT)
    g = TrigSeries.sin((0, 1), 1.0, tau=1e-6, k_max=5)
    with pytest.raises(BudgetExceeded):
        solve_twisted_scalar(g, 1.0, LAM, CAT, budget=1e-12)


def test_zero_source():
    assert solve_twisted_scalar(TrigSeries.zero(2), 1.0, LAM, CAT).is_zero


def test_conjugacy_step():
    E = eigendecompose(CAT)
    g = VectorTrigSeries([TrigSeries.sin((0, 1), tau=1e-18),
                          TrigSeries.cos((1, 1), 0.5, tau=1e-18)])
    h = solve_conjugacy_step(g, E)
    psi = np.random.default_rng(0).uniform(0, 2 * np.pi, (50, 2))
    lhs = h(np.mod(psi @ CAT.T, 2 * np.pi)) - h(psi) @ CAT.T
    np.testing.assert_allclose(lhs, g(psi), atol=1e-12)


def test_block_solver_complex_spectrum():
    A = np.array([[0, 0, 1], [1, 0, 1], [0, 1, 0]])
    B = block_partition(A)
    t = dict(tau=1e-16)
    g = VectorTrigSeries([TrigSeries.sin((1, 0, 0), 0.4, **t), TrigSeries.cos((0, 1, 1), 1.0, **t),
                          TrigSeries.sin((1, 0, -1), 0.2, **t)])
    h = solve_conjugacy_block(g, B)
    psi = np.random.default_rng(1).uniform(0, 2 * np.pi, (50, 3))
    lhs = h(np.mod(psi @ A.T, 2 * np.pi)) - h(psi) @ A.T
    np.testing.assert_allclose(lhs, g(psi), atol=1e-10)


def test_twisted_block_equation():
    A = np.array([[0, 0, 1], [1, 0, 1], [0, 1, 0]])
    B = block_partition(A)
    Ai, Aj = B.blocks[1], B.blocks[0]  # expanding 1x1 against the rotating 2x2
    G = MatrixTrigSeries([[TrigSeries.sin((1, 0, 0), tau=1e-16),
                           TrigSeries.cos((0, 0, 1), 0.5, tau=1e-16)]])
    for Ai, Aj, G in ((B.blocks[1], B.blocks[0], G),
                      (B.blocks[0], B.blocks[1],
                       MatrixTrigSeries([[G[0][0]], [G[0][1]]]))):
        V = solve_twisted_block(G, Ai, Aj, A)
        psi = np.random.default_rng(2).uniform(0, 2 * np.pi, (30, 3))
        lhs = Ai @ V(psi) - V(np.mod(psi @ A.T, 2 * np.pi)) @ Aj
        np.testing.assert_allclose(lhs, -G(psi), atol=1e-10)


def test_block_resonance():
    A = np.array([[2, 1, 0, 0], [1, 1, 0, 0], [0, 0, 2, 1], [0, 0, 1, 1]])
    G = MatrixTrigSeries([[TrigSeries.sin((1, 0, 0, 0))]])
    with pytest.raises(ResonantBlocks):
        solve_twisted_block(G, [[LAM]], [[LAM]], A)


def test_twisted_block_constant_collapse():
    # a_i V - V a_j = -C with V constant gives V = C / (a_j - a_i)
    A = np.array([[2, 1], [1, 1]])
    lam_s, lam_u = sorted(np.linalg.eigvalsh(A.astype(float)))
    G = MatrixTrigSeries([[TrigSeries.constant(2, 0.7, tau=1e-16)]])
    for ai, aj in ((lam_s, lam_u), (lam_u, lam_s)):
        V = solve_twisted_block(G, [[ai]], [[aj]], A)
        val = V(np.zeros((1, 2)))[0, 0, 0]
        assert abs(val - 0.7 / (aj - ai)) < 1e-12

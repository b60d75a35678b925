"""Acceptance criteria 1-8, each at its stated tolerance.

Every test records its outcome; the terminal summary prints one PASS/FAIL
line per criterion.  Run just this file with ``pytest -m acceptance -v``.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from conftest import B2, CAT, cat_field, record
from toralseries import (OrbitSampler, PerturbedSystem, Truncation, alpha_sequence,
                         assemble_and_check, benettin_spectrum, block_residual, block_series,
                         conjugacy_coefficients, conjugacy_residual, convergence_constants,
                         eigendecompose, epsilon_sweep_fit, exponent_from_series, loglog_slope,
                         product_experiment, secular_residual, secular_series,
                         vector_field_from_triples)
from toralseries.diagnostics import bound_table
from toralseries.dimension import split_system

pytestmark = pytest.mark.acceptance

LOG_CAT = math.log((3 + math.sqrt(5)) / 2)  # 0.9624236501
LOG_B2 = math.log(2 + math.sqrt(3))  # 1.3169578969
RESIDUAL_EPS = np.logspace(-4, -2, 9)
# amplitude-2 benchmark for the residual law: at amplitude 1 the order-4
# residual at eps = 1e-4 sits at the float64 floor and flattens the slope
RESIDUAL_TRUNCATION = dict(tau=1e-24, tau_growth=1e4)


def _ok_line(values, fmt="{:.4f}"):
    return ", ".join(fmt.format(v) for v in values)


# ---------------------------------------------------------------------------
# 1. unperturbed spectra


def test_criterion_1_unperturbed_anchors():
    sampler = OrbitSampler(seed=0, transient=1000, steps=10_000, n_orbits=100)  # 10^6 orbit steps
    t0 = time.perf_counter()
    r = benettin_spectrum(PerturbedSystem.build(CAT, cat_field()), 0.0, sampler)
    t_cat = time.perf_counter() - t0
    err_cat = float(np.abs(r.exponents - [-LOG_CAT, LOG_CAT]).max())

    t0 = time.perf_counter()
    S4 = split_system(CAT, B2, cat_field(), cat_field())
    r4 = benettin_spectrum(S4, 0.0, sampler)
    t_prod = time.perf_counter() - t0
    union = np.sort([-LOG_B2, -LOG_CAT, LOG_CAT, LOG_B2])
    err_prod = float(np.abs(r4.exponents - union).max())

    ok = err_cat < 1e-4 and err_prod < 1e-4 and t_cat < 10 and t_prod < 10
    record(1, "anchors", ok, f"cat error {err_cat:.1e} in {t_cat:.1f}s, diag(B1,B2) error "
                             f"{err_prod:.1e} in {t_prod:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. residual-order law


def test_criterion_2_residual_order_scalar():
    t0 = time.perf_counter()
    S = PerturbedSystem.build(CAT, cat_field(2.0),
                              truncation=Truncation(budget=1e-6, **RESIDUAL_TRUNCATION))
    E = eigendecompose(S.A)
    C = conjugacy_coefficients(S, 4, E)
    sd, C, _phi = secular_series(S, 4, conjugacy=C, E=E)
    conj = [loglog_slope(RESIDUAL_EPS, conjugacy_residual(C, RESIDUAL_EPS, order=n))
            for n in range(1, 5)]
    sec = [loglog_slope(RESIDUAL_EPS, secular_residual(sd, C, RESIDUAL_EPS, order=n))
           for n in range(1, 5)]
    elapsed = time.perf_counter() - t0
    want = np.arange(2, 6)
    ok = (np.all(np.abs(np.array(conj) - want) <= 0.2)
          and np.all(np.abs(np.array(sec) - want) <= 0.2) and elapsed < 120)
    record(2, "cat map", ok, f"conjugacy slopes {_ok_line(conj, '{:.3f}')}, secular slopes "
                             f"{_ok_line(sec, '{:.3f}')}, {elapsed:.0f}s for all N")
    assert ok


def test_criterion_2_residual_order_block():
    t0 = time.perf_counter()
    G2 = vector_field_from_triples(2, [((1, 0), 1, 2.0), ((1, 1), 0, 1.0, "cos")])
    S = split_system(CAT, B2, cat_field(2.0), G2,
                     truncation=Truncation(budget=1e-3, **RESIDUAL_TRUNCATION))
    bd = block_series(S, None, 4)
    slopes = [loglog_slope(RESIDUAL_EPS, block_residual(bd, RESIDUAL_EPS, order=n))
              for n in range(1, 5)]
    elapsed = time.perf_counter() - t0
    ok = np.all(np.abs(np.array(slopes) - np.arange(2, 6)) <= 0.2) and elapsed < 120
    record(2, "block on diag(B1,B2)", ok, f"slopes {_ok_line(slopes, '{:.3f}')}, "
                                          f"{elapsed:.0f}s for all N")
    assert ok


# ---------------------------------------------------------------------------
# 3. series formula against Benettin


def test_criterion_3_series_formula_vs_benettin():
    t0 = time.perf_counter()
    S = PerturbedSystem.build(CAT, cat_field(1.0), truncation=Truncation(tau=1e-8, budget=1e-2))
    sd, C, _phi = secular_series(S, 4)
    sampler = OrbitSampler(seed=1, transient=1000, steps=1000, n_orbits=100)
    independent = OrbitSampler(seed=101, transient=1000, steps=2000, n_orbits=100)
    ok = True
    parts = []
    for eps in (0.01, 0.02, 0.05):
        s = exponent_from_series(S, sd, C, eps, sampler)
        # same orbits (common random numbers) and an independent longer run
        for label, b in (("paired", benettin_spectrum(S, eps, sampler)),
                         ("independent", benettin_spectrum(S, eps, independent))):
            diff = np.abs(s.exponents - b.exponents)
            comb = s.stderr + b.stderr
            good = bool(np.all(diff <= 3 * comb) and np.all(diff <= 1e-3))
            ok &= good
            parts.append(f"eps={eps} {label} max|diff| {diff.max():.1e} vs 3se "
                         f"{3 * comb.min():.1e}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    record(3, "agreement", ok, "; ".join(parts) + f"; {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 4. analyticity probes


def test_criterion_4_polynomial_fits():
    S = PerturbedSystem.build(CAT, cat_field(1.0))
    sampler = OrbitSampler(seed=2, transient=1000, steps=10_000, n_orbits=200)
    fit = epsilon_sweep_fit(S, "benettin", np.linspace(-0.05, 0.05, 9), 4, sampler)
    lin, lin_se = fit.coefficients[:, 1], fit.coefficient_stderr[:, 1]
    ok_fit = fit.residuals_below_noise
    ok_lin = bool(np.all(np.abs(lin) <= 1e-3))
    record(4, "fit residuals below noise", ok_fit,
           f"rms residual {_ok_line(fit.rms_residual, '{:.1e}')} vs rms noise "
           f"{_ok_line(fit.rms_noise, '{:.1e}')}")
    record(4, "vanishing linear coefficient", ok_lin,
           "c1 = " + ", ".join(f"{c:.1e} +- {e:.1e}" for c, e in zip(lin, lin_se)))
    assert ok_fit and ok_lin


# ---------------------------------------------------------------------------
# 5. combinatorial bounds


def test_criterion_5_alpha_recursion():
    t0 = time.perf_counter()
    a = alpha_sequence(30)
    ok = a.values[:5] == (1, 1, 3, 11, 47) and a.satisfies_recursion()
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 1
    record(5, "recursion and alpha_0..alpha_4", ok, f"{a.values[:5]}, {elapsed * 1e3:.1f}ms")
    assert ok


@pytest.mark.xfail(strict=True, reason="alpha_n > 4^n from n = 10 on: the sequence grows "
                                       "like (4 + 2 sqrt 2)^n")
def test_criterion_5_alpha_geometric_bound():
    a = alpha_sequence(30)
    bad = a.bound_violations(base=4)
    detail = (f"alpha_n <= 4^n fails for n = {bad[0]}..{bad[-1]} "
              f"(alpha_10 = {a[10]} > 4^10 = {4 ** 10}; alpha_30/alpha_29 = "
              f"{a[30] / a[29]:.3f})") if bad else "holds for n <= 30"
    record(5, "alpha_n <= 4^n for n <= 30", not bad, detail)
    assert not bad, detail


# ---------------------------------------------------------------------------
# 6. Gershgorin certificate


def test_criterion_6_gershgorin():
    t0 = time.perf_counter()
    parts = []
    ok = True
    for amp, trunc in ((1.0, Truncation(tau=1e-12, tau_growth=1e2, budget=1e-3)),
                       (2.0, Truncation(budget=1e-6, **RESIDUAL_TRUNCATION))):
        S = PerturbedSystem.build(CAT, cat_field(amp), truncation=trunc)
        sd, _C, _phi = secular_series(S, 4)
        worst = math.inf
        for eps in (-1e-2, -1e-3, 1e-4, 1e-3, 1e-2):
            _X, cert = assemble_and_check(sd, eps, n_points=1000, seed=6,
                                          raise_on_failure=False)
            ok &= cert.ok
            worst = min(worst, cert.min_margin)
        parts.append(f"amplitude {amp:g}: min margin {worst:.4f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 30
    record(6, "certificate at 1000 points, |eps| <= 1e-2", ok,
           "; ".join(parts) + f"; {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 7. product experiment


def test_criterion_7_product_experiment():
    t0 = time.perf_counter()
    G = vector_field_from_triples(2, [((1, 0), 0, 1.0), ((0, 1), 1, 1.0)])  # volume-changing
    sampler = OrbitSampler(seed=3, transient=1000, steps=10_000, n_orbits=200)
    exp = product_experiment(CAT, B2, G, G, [0.0, 0.02, 0.05], sampler, tol=1e-3)
    elapsed = time.perf_counter() - t0
    mismatch = max(r.union_mismatch for r in exp.rows + exp.control_rows)
    zero = exp.rows[0]
    ok_zero = abs(zero.discrepancy) <= 3 * zero.discrepancy_err + 1e-12
    ok_ctrl = all(abs(r.discrepancy) <= 3 * r.discrepancy_err for r in exp.control_rows)
    main = exp.rows[-1]
    ok_main = abs(main.discrepancy) > 3 * main.discrepancy_err
    record(7, "4-D spectrum = union", mismatch <= 1e-3, f"max mismatch {mismatch:.1e}")
    record(7, "delta = 0 at eps = 0", ok_zero, f"delta {zero.discrepancy:.1e}")
    record(7, "symmetric control", ok_ctrl,
           ", ".join(f"eps={r.eps:g}: {r.discrepancy:+.1e} +- {r.discrepancy_err:.1e}"
                     for r in exp.control_rows))
    record(7, "B1 != B2 at eps = 0.05", ok_main,
           f"delta {main.discrepancy:+.2e} +- {main.discrepancy_err:.1e} "
           f"(factor-1 reading {main.discrepancy_factor:+.2e} +- "
           f"{main.discrepancy_factor_err:.1e}), {elapsed:.0f}s")
    assert mismatch <= 1e-3 and ok_zero and ok_ctrl and ok_main and elapsed < 900


# ---------------------------------------------------------------------------
# 8. coefficient norms against the a-priori bound (diagnostic)


def test_criterion_8_norms_against_bounds():
    S = PerturbedSystem.build(CAT, cat_field(1.0), truncation=Truncation(tau=1e-8, budget=1e-2))
    E = eigendecompose(S.A)
    sd, C, _phi = secular_series(S, 6, E=E)
    consts = convergence_constants(S, E, 0.05, C)
    rows, bad, msg = bound_table(sd, consts)
    worst = max(max(r.norm_v, r.norm_L) / r.bound for r in rows)
    detail = (f"E_beta = {consts.E_beta:.3g}, orders 1..{len(rows)}, "
              f"max norm/bound {worst:.1e}")
    record(8, "norms <= alpha_n E_beta^n", not bad, msg or detail)
    assert not bad, msg

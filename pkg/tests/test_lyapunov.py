from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from conftest import B2, CAT, cat_field
from toralseries import (IllConditionedFit, NotDiffeomorphism, OrbitSampler, PerturbedSystem,
                         SpectrumResult, Truncation, benettin_spectrum, epsilon_sweep_fit,
                         exponent_from_series, invert_conjugacy_numeric, secular_series,
                         vector_field_from_triples)
from toralseries.dimension import split_system
from toralseries.lyapunov import (ConjugacyInverse, check_diffeomorphism, polynomial_fit,
                                  write_spectrum_csv)

LOG_CAT = math.log((3 + math.sqrt(5)) / 2)
LOG_B2 = math.log(2 + math.sqrt(3))
SMALL = OrbitSampler(seed=7, transient=50, steps=400, n_orbits=20)


@pytest.fixture(scope="module")
def coarse():
    S = PerturbedSystem.build(CAT, cat_field(1.0), truncation=Truncation(tau=1e-8, budget=1e-2))
    sd, C, _phi = secular_series(S, 3)
    return S, sd, C


def test_unperturbed_cat_map():
    r = benettin_spectrum(PerturbedSystem.build(CAT, cat_field()), 0.0, SMALL)
    np.testing.assert_allclose(r.exponents, [-LOG_CAT, LOG_CAT], atol=1e-12)
    assert r.total == pytest.approx(0.0, abs=1e-12)


def test_unperturbed_product_union():
    S4 = split_system(CAT, B2, cat_field(), cat_field())
    r = benettin_spectrum(S4, 0.0, SMALL)
    np.testing.assert_allclose(r.exponents, sorted([-LOG_B2, -LOG_CAT, LOG_CAT, LOG_B2]),
                               atol=1e-10)


def test_constant_perturbation_leaves_exponents():
    F = vector_field_from_triples(2, [((0, 0), 0, 0.7), ((0, 0), 1, -0.2)])
    S = PerturbedSystem.build(CAT, F)
    for eps in (0.1, 0.3):
        r = benettin_spectrum(S, eps, SMALL)
        np.testing.assert_allclose(r.exponents, [-LOG_CAT, LOG_CAT], atol=1e-12)


def test_volume_preserving_sum_is_zero():
    # DF = [[c, c], [0, 0]] with c = cos(psi_1 + psi_2): det(A + eps DF) = 1
    F = vector_field_from_triples(2, [((1, 1), 0, 1.0)])
    r = benettin_spectrum(PerturbedSystem.build(CAT, F), 0.1, SMALL)
    assert abs(r.total) <= 3 * r.total_stderr + 1e-12
    assert abs(r.total) < 1e-12


def test_seed_determinism():
    S = PerturbedSystem.build(CAT, cat_field())
    a = benettin_spectrum(S, 0.05, SMALL)
    b = benettin_spectrum(S, 0.05, SMALL)
    c = benettin_spectrum(S, 0.05, OrbitSampler(seed=8, transient=50, steps=400, n_orbits=20))
    assert np.array_equal(a.exponents, b.exponents) and np.array_equal(a.batches, b.batches)
    assert not np.array_equal(a.exponents, c.exponents)


def test_standard_error_scaling():
    S = PerturbedSystem.build(CAT, cat_field())
    s1 = OrbitSampler(seed=2, transient=100, steps=2000, n_orbits=20)
    r1 = benettin_spectrum(S, 0.05, s1)
    r2 = benettin_spectrum(S, 0.05, s1.with_steps(4000))
    ratio = r1.stderr / r2.stderr
    assert np.all((ratio > 1.2) & (ratio < 3.0)), ratio


def test_diffeomorphism_guard():
    S = PerturbedSystem.build(CAT, cat_field(1.0))
    assert check_diffeomorphism(S, 0.05) > 0
    with pytest.raises(NotDiffeomorphism):
        benettin_spectrum(S, 1.0, SMALL)


def test_inversion_roundtrip(coarse):
    _S, _sd, C = coarse
    psi = np.random.default_rng(0).uniform(0, 2 * np.pi, (100, 2))
    eps = 0.05
    assert np.array_equal(invert_conjugacy_numeric(C, 0.0, psi), psi)
    for method in ("fixed-point", "newton"):
        inv = ConjugacyInverse(C, eps, method=method, lipschitz_points=2000)
        phi = inv(psi)
        assert np.abs(C(phi, eps) - psi).max() < 1e-12
        assert np.abs(inv(C(psi, eps)) - psi).max() < 1e-10
    assert 0 < inv.lipschitz < 1


def test_series_formula_at_zero_and_small_eps(coarse):
    S, sd, C = coarse
    r0 = exponent_from_series(S, sd, C, 0.0, SMALL)
    assert np.array_equal(r0.exponents, np.array([-LOG_CAT, LOG_CAT]))
    rs = exponent_from_series(S, sd, C, 0.02, SMALL)
    rb = benettin_spectrum(S, 0.02, SMALL)
    # same orbits: the two estimators differ only by the truncation error
    assert np.abs(rs.exponents - rb.exponents).max() < 1e-5
    assert rs.info["gershgorin_margin"] > 0 and rs.info["lipschitz"] < 1


def test_polynomial_fit_recovers_polynomial():
    x = np.linspace(-0.05, 0.05, 9)
    y = 0.3 - 2.0 * x ** 2 + 5.0 * x ** 4
    c, cse, resid, chi2 = polynomial_fit(x, y, np.full(9, 1e-6), 4)
    np.testing.assert_allclose(c, [0.3, 0, -2.0, 0, 5.0], atol=1e-8)
    assert np.abs(resid).max() < 1e-12 and np.all(cse > 0)
    with pytest.raises(IllConditionedFit):
        polynomial_fit(x[:3], y[:3], np.ones(3), 4)


def test_sweep_with_constant_perturbation():
    F = vector_field_from_triples(2, [((0, 0), 0, 1.0)])
    S = PerturbedSystem.build(CAT, F)
    fit = epsilon_sweep_fit(S, "benettin", np.linspace(-0.1, 0.1, 5), 0, SMALL)
    np.testing.assert_allclose(fit.coefficients[:, 0], [-LOG_CAT, LOG_CAT], atol=1e-12)
    assert fit.residuals_below_noise or np.abs(fit.residuals).max() < 1e-12


def test_sweep_callable_estimator():
    def fake(S, eps, sampler):
        ex = np.array([-1.0 + eps ** 2, 1.0 - eps ** 2])
        return SpectrumResult(eps=eps, exponents=ex, stderr=np.full(2, 1e-6),
                              estimator="fake", steps=1, transient=0, seed=0, n_orbits=1)

    S = PerturbedSystem.build(CAT, cat_field())
    fit = epsilon_sweep_fit(S, fake, np.linspace(-0.1, 0.1, 7), 2)
    odd, odd_se = fit.odd_coefficients()
    np.testing.assert_allclose(odd, 0, atol=1e-10)
    np.testing.assert_allclose(fit.coefficients[:, 2], [1.0, -1.0], atol=1e-8)
    with pytest.raises(IllConditionedFit):
        epsilon_sweep_fit(S, fake, [0.0, 0.1], 2)
    with pytest.raises(ValueError):
        epsilon_sweep_fit(S, "nope", np.linspace(-0.1, 0.1, 7), 2)


def test_spectrum_csv(tmp_path):
    S = PerturbedSystem.build(CAT, cat_field())
    r = benettin_spectrum(S, 0.01, SMALL)
    path = tmp_path / "spec.csv"
    write_spectrum_csv([r], path, "hash42")
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 2 and {row["config_hash"] for row in rows} == {"hash42"}
    assert float(rows[0]["exponent"]) == pytest.approx(r.exponents[0])
    assert rows[1]["estimator"] == "benettin"


def test_sign_flip_symmetry():
    # (eps, -F) is the same map as (-eps, F): identical spectra on shared orbits
    Sp = PerturbedSystem.build(CAT, cat_field(1.0))
    Sm = PerturbedSystem.build(CAT, cat_field(-1.0))
    grid = np.array([-0.04, -0.02, 0.0, 0.02, 0.04])
    up = np.array([benettin_spectrum(Sp, e, SMALL).exponents for e in grid])
    dn = np.array([benettin_spectrum(Sm, -e, SMALL).exponents for e in grid])
    np.testing.assert_allclose(up, dn, rtol=0, atol=1e-15)
    # the even part has no odd powers
    even = 0.5 * (up + up[::-1])
    coef = np.polynomial.polynomial.polyfit(grid, even[:, 1], 4)
    assert abs(coef[1]) < 1e-12 and abs(coef[3]) < 1e-9

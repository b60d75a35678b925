from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from toralseries import (DimensionMismatch, SeriesBundle, TrigSeries, VectorTrigSeries,
                         compose_linear, directional_derivative, evaluate, multiply, truncate)
from toralseries.fourier import (K_MAX_DEFAULT, Truncation, from_text, linear_combination,
                                 to_text)

TWO_PI = 2 * np.pi


@st.composite
def series2(draw, max_modes=5, kmax=3):
    n = draw(st.integers(0, max_modes))
    modes = {}
    for _ in range(n):
        k = tuple(draw(st.integers(-kmax, kmax)) for _ in range(2))
        re = draw(st.floats(-2, 2))
        im = 0.0 if not any(k) else draw(st.floats(-2, 2))
        neg = tuple(-x for x in k)
        if neg in modes and any(k):
            continue
        modes[k] = complex(re, im)
    return TrigSeries.from_modes(2, modes, tau=0.0)


def points(n=64, d=2, seed=0):
    return np.random.default_rng(seed).uniform(0, TWO_PI, size=(n, d))


def direct(modes, psi):
    """sum_k c_k exp(i k.psi) straight from the full coefficient map."""
    out = np.zeros(psi.shape[0], complex)
    for k, c in modes.items():
        out += c * np.exp(1j * psi @ np.asarray(k, float))
    return out


def test_sin_cos_constructors():
    psi = points()
    s = TrigSeries.sin((1, 2), 0.7)
    c = TrigSeries.cos((0, 3), -1.5)
    np.testing.assert_allclose(s(psi), 0.7 * np.sin(psi[:, 0] + 2 * psi[:, 1]), atol=1e-14)
    np.testing.assert_allclose(c(psi), -1.5 * np.cos(3 * psi[:, 1]), atol=1e-14)
    assert TrigSeries.constant(2, 3.0)(psi[0]) == pytest.approx(3.0)


@given(series2())
def test_coefficient_map_matches_values(f):
    psi = points(16)
    vals = direct(f.coefficients(), psi)
    np.testing.assert_allclose(vals.imag, 0, atol=1e-12)
    np.testing.assert_allclose(f(psi), vals.real, atol=1e-12)


@given(series2(), series2())
@settings(max_examples=60, deadline=None)
def test_multiply_is_pointwise_product(f, g):
    psi = points(32)
    h = multiply(f, g, tau=0.0)
    np.testing.assert_allclose(h(psi), f(psi) * g(psi), atol=1e-11)


@given(series2(), series2())
@settings(max_examples=30, deadline=None)
def test_algebra(f, g):
    psi = points(16)
    np.testing.assert_allclose((f + g)(psi), f(psi) + g(psi), atol=1e-12)
    np.testing.assert_allclose((f - g)(psi), f(psi) - g(psi), atol=1e-12)
    np.testing.assert_allclose((2.5 * f)(psi), 2.5 * f(psi), atol=1e-12)
    lc = linear_combination([f, g], [0.5, -3.0], tau=0.0)
    np.testing.assert_allclose(lc(psi), 0.5 * f(psi) - 3 * g(psi), atol=1e-11)
    assert multiply(f, g, tau=0.0).allclose(multiply(g, f, tau=0.0), atol=1e-12)


def test_multiply_against_collocation():
    # product coefficients recovered from grid values by FFT
    f = TrigSeries.from_modes(2, {(1, 0): 0.3 - 0.2j, (2, -1): 0.5j, (0, 0): 1.0}, tau=0.0)
    g = TrigSeries.from_modes(2, {(0, 1): 1.0 + 0.1j, (-1, 3): -0.25}, tau=0.0)
    n = 32
    x = np.arange(n) * TWO_PI / n
    X, Y = np.meshgrid(x, x, indexing="ij")
    grid = np.stack([X, Y], axis=-1).reshape(-1, 2)
    vals = (f(grid) * g(grid)).reshape(n, n)
    fft = np.fft.fft2(vals) / n ** 2
    h = multiply(f, g, tau=0.0)
    want = {}
    for a in range(n):
        for b in range(n):
            c = fft[a, b]
            if abs(c) > 1e-12:
                k = (a if a < n // 2 else a - n, b if b < n // 2 else b - n)
                want[k] = c
    got = h.coefficients()
    assert set(want) == set(k for k, c in got.items() if abs(c) > 1e-12)
    for k, c in want.items():
        assert abs(got[k] - c) < 1e-12


@given(series2())
@settings(max_examples=40, deadline=None)
def test_compose_linear(f):
    M = np.array([[2, 1], [1, 1]])
    psi = points(16)
    g = compose_linear(f, M)
    np.testing.assert_allclose(g(psi), f(np.mod(psi @ M.T, TWO_PI)), atol=1e-11)
    # composing with M then M^-1 returns f
    back = compose_linear(g, np.array([[1, -1], [-1, 2]]))
    assert back.allclose(f, atol=1e-14)


def test_compose_linear_drops_escaping_modes():
    f = TrigSeries.cos((3, 2), 2.0, k_max=10) + TrigSeries.sin((1, 0), 1.0, k_max=10)
    g = compose_linear(f, [[2, 1], [1, 1]])  # (3, 2) -> (8, 5), (1, 0) -> (2, 1)
    assert len(g) == 2 and g.dropped == 0.0
    g3 = compose_linear(g, [[2, 1], [1, 1]])  # (8, 5) -> (21, 13) leaves the ball
    assert len(g3) == 1
    assert g3.dropped == pytest.approx(2.0)


@given(series2())
@settings(max_examples=40, deadline=None)
def test_directional_derivative_finite_difference(f):
    v = np.array([0.3, -1.1])
    psi = points(8)
    h = 1e-6
    fd = (f(psi + h * v) - f(psi - h * v)) / (2 * h)
    np.testing.assert_allclose(directional_derivative(f, v)(psi), fd, atol=1e-6)


def test_truncate_accounts_for_dropped_mass():
    f = TrigSeries.from_modes(2, {(1, 0): 1.0, (5, 0): 0.5, (0, 1): 1e-9, (0, 0): 2.0}, tau=0.0)
    g, lost = truncate(f, k_max=4, tau=1e-6)
    # (5, 0) leaves the ball, (0, 1) is below tau; mass counts both +k and -k
    assert lost == pytest.approx(2 * 0.5 + 2 * 1e-9)
    assert g.norm1() + lost == pytest.approx(f.norm1())
    assert g.coefficients() == {(-1, 0): 1.0, (0, 0): 2.0, (1, 0): 1.0}
    with pytest.raises(ValueError):
        truncate(f, tau=-1.0)


def test_text_roundtrip():
    f = TrigSeries.from_modes(2, {(1, -2): 0.125 - 1e-3j, (0, 0): -0.5, (3, 1): 2j}, tau=0.0)
    g = from_text(to_text(f), tau=0.0)
    assert g.allclose(f, atol=0.0)


def test_mean_and_norm():
    f = TrigSeries.from_modes(2, {(0, 0): 0.75, (1, 1): 0.5j}, tau=0.0)
    assert f.mean() == pytest.approx(0.75)
    assert f.norm1() == pytest.approx(0.75 + 1.0)


def test_bundle_matches_individual_evaluation():
    f = TrigSeries.sin((1, 2), 0.7) + TrigSeries.cos((0, 1), 0.1)
    g = TrigSeries.cos((1, 2), -0.2) + TrigSeries.constant(2, 4.0)
    z = TrigSeries.zero(2)
    psi = points(40)
    out = SeriesBundle([f, g, z])(psi)
    np.testing.assert_allclose(out, np.stack([f(psi), g(psi), np.zeros(40)], 1), atol=1e-13)


def test_long_double_evaluation():
    f = TrigSeries.sin((1, 1), 1.0)
    psi = np.array([[0.1, 0.2]], dtype=np.longdouble)
    v = evaluate(f, psi)
    assert v.dtype == np.longdouble
    assert abs(float(v[0]) - np.sin(0.3)) < 1e-15


def test_vector_series_transform():
    F = VectorTrigSeries([TrigSeries.sin((0, 1)), TrigSeries.cos((1, 1))])
    T = np.array([[1.0, 2.0], [0.5, -1.0]])
    psi = points(10)
    np.testing.assert_allclose(F.transform(T)(psi), F(psi) @ T.T, atol=1e-13)


def test_errors():
    f = TrigSeries.sin((1, 0))
    with pytest.raises(DimensionMismatch):
        f + TrigSeries.sin((1, 0, 0))
    with pytest.raises(DimensionMismatch):
        evaluate(f, np.zeros(3))
    with pytest.raises(ValueError):
        TrigSeries.from_modes(2, {(1, 0): 1.0, (-1, 0): 2.0})
    with pytest.raises(ValueError):
        Truncation(k_max=K_MAX_DEFAULT + 1)
    with pytest.raises(ValueError):
        directional_derivative(f, [np.inf, 0])

"""Convergence constants, the alpha sequence and empirical radii.

The constants follow the convergence proof for the secular series with the
multipliers Lambda_i constant, so their Hoelder seminorms vanish and
||Lambda||_beta = ||Lambda||_inf.  C_beta and R are estimated from computed
data, which makes every radius here indicative rather than certified.

Norms of series are coefficient sums, an upper bound on the sup norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .errors import BetaTooLarge, InsufficientOrders
from .fourier import TWO_PI, TrigSeries, directional_derivative, evaluate
from .hyperbolic import EigenData, eigendecompose
from .series import ConjugacyData, PerturbedSystem, SecularData

CERTIFICATE_NOTE = ("C_beta and R are empirical estimates; the radius eps_bar(beta) is "
                    "indicative, not certified.")


ALPHA_GROWTH = 4.0 + 2.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class AlphaSequence:
    """alpha_0..alpha_N as exact Python integers.

    The generating function B = sum_{n>=1} alpha_n x^n solves
    B^2 - (1 - c) B + c = 0 with c = x / (1 - x), whose branch point gives
    alpha_n ~ (4 + 2 sqrt 2)^n up to a power of n.
    """

    values: tuple

    def __len__(self):
        return len(self.values)

    def __getitem__(self, n):
        return self.values[n]

    @property
    def order(self) -> int:
        return len(self.values) - 1

    def ratios(self):
        return [self.values[n] / self.values[n - 1] for n in range(1, len(self.values))]

    def satisfies_recursion(self) -> bool:
        a = self.values
        if a[0] != 1:
            return False
        return all(a[n] == sum(a[n - j] * a[j] for j in range(1, n)) + sum(a[:n])
                   for n in range(1, len(a)))

    def bound_violations(self, base: int = 4) -> list:
        """Orders n with alpha_n > base**n (exact comparison)."""
        return [n for n, x in enumerate(self.values) if x > base ** n]


def alpha_sequence(N: int) -> AlphaSequence:
    """alpha_0 = 1, alpha_n = sum_{j=1}^{n-1} alpha_{n-j} alpha_j + sum_{j<n} alpha_j.

    Exact integers.  The geometric bound alpha_n <= 4**n is not enforced
    here; it fails from n = 10 on (see :meth:`AlphaSequence.bound_violations`).
    """
    if N < 0:
        raise ValueError("N must be non-negative")
    a = [1]
    running = 1  # sum of alpha_0..alpha_{n-1}
    for n in range(1, N + 1):
        a.append(sum(a[n - j] * a[j] for j in range(1, n)) + running)
        running += a[n]
    return AlphaSequence(tuple(a))


# ---------------------------------------------------------------------------
# empirical inputs


def _directions(E) -> np.ndarray:
    return E.V if isinstance(E, EigenData) else E.W


def derivative_radius(F, E, s_max: int = 6) -> float:
    """R >= 1 with ||D_{v_s1}...D_{v_ss} F||_inf <= s! R^s for s <= s_max.

    Directional derivatives commute, so multisets of directions suffice.
    """
    V = _directions(E)
    d = V.shape[1]
    R = 1.0
    for s in range(1, s_max + 1):
        worst = 0.0
        for sigma in combinations_with_replacement(range(d), s):
            for comp in F:
                f = comp
                for idx in sigma:
                    f = directional_derivative(f, V[:, idx])
                worst = max(worst, f.norm1())
        if worst > 0:
            R = max(R, (worst / math.factorial(s)) ** (1.0 / s))
    return float(R)


def conjugacy_growth(C: ConjugacyData) -> float:
    """C_beta estimate: max_n ||h^(n)||^(1/n) (0 for a trivial system)."""
    out = 0.0
    for n in range(1, C.order + 1):
        nrm = max(c.norm1() for c in C.h[n])
        if nrm > 0:
            out = max(out, nrm ** (1.0 / n))
    return float(out)


# ---------------------------------------------------------------------------
# constants


@dataclass
class DiagnosticsConstants:
    """Constants of the convergence proof at one beta (maxima over pairs)."""

    Omega: float
    Omega_used: float
    beta: float
    K_beta: float
    K1_beta: float
    B_beta: float
    C_beta: float
    R: float
    E_beta: float
    eps_bar: float
    dim: int
    pairs: list = field(default_factory=list, repr=False)
    note: str = CERTIFICATE_NOTE

    def bound(self, n: int, alpha: AlphaSequence | None = None) -> float:
        """alpha_n E_beta^n."""
        alpha = alpha or alpha_sequence(n)
        return float(alpha[n]) * self.E_beta ** n


def convergence_constants(S: PerturbedSystem, E: EigenData | None, beta: float,
                          C_empirical, R_empirical: float | None = None
                          ) -> DiagnosticsConstants:
    """K_beta, K_{1,beta}, B_beta, E_beta and eps_bar(beta).

    ``C_empirical`` is a number or a ConjugacyData (then C_beta is its
    growth estimate); R defaults to :func:`derivative_radius`.  The
    composition bound is applied with Omega = max(||A||, ||A^-1||), which
    covers negative powers of A; the literal Omega is reported alongside.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    E = E or eigendecompose(S.A)
    lam = np.abs(np.asarray(E.eigenvalues, dtype=float))
    d = lam.size
    Om = float(E.omega_alt)
    C = conjugacy_growth(C_empirical) if isinstance(C_empirical, ConjugacyData) \
        else float(C_empirical)
    R = derivative_radius(S.F, E) if R_empirical is None else float(R_empirical)
    ob = Om ** beta
    pairs = []
    K_max = K1_max = 0.0
    for i in range(d):
        for k in range(d):
            if i == k:
                continue
            r = lam[i] / lam[k]
            omega = 1 if r < 1 else -1
            geometric = r * Om ** (3 * beta) if omega == 1 else Om ** (3 * beta) / r
            if geometric >= 1.0:
                raise BetaTooLarge(f"beta={beta:g}: geometric factor {geometric:.4g} >= 1 "
                                   f"for pair ({i + 1}, {k + 1})")
            K = float(lam[i] * lam[k] * lam[k] ** 2 / abs(ob - 1.0) ** 2)
            K1 = float(K * Om * r / (omega * (1.0 - r * Om ** (3 * omega * beta))))
            pairs.append(dict(i=i + 1, k=k + 1, omega=omega, ratio=float(r), geometric=float(geometric),
                              K_beta=K, K1_beta=K1))
            K_max = max(K_max, K)
            K1_max = max(K1_max, K1)
    B = 3.0 ** (2.0 / 3.0) * 2.0 * R * C
    Eb = K1_max * B * d
    eps_bar = 1.0 / (4 * d * Eb) if Eb > 0 else math.inf
    return DiagnosticsConstants(Omega=float(E.omega), Omega_used=Om, beta=float(beta),
                                K_beta=K_max, K1_beta=K1_max, B_beta=B, C_beta=C, R=R,
                                E_beta=Eb, eps_bar=eps_bar, dim=d, pairs=pairs)


# ---------------------------------------------------------------------------
# empirical radius


def _order_norms(series) -> list:
    if isinstance(series, SecularData):
        return [max(nv, nl) for _n, nv, nl in series.norms()]
    if isinstance(series, ConjugacyData):
        return [max(c.norm1() for c in series.h[n]) for n in range(1, series.order + 1)]
    return [float(x) for x in series]


def empirical_radius(series, *, first: int = 1) -> float:
    """1 / (geometric growth rate of ||coef_n||) from a fit of log-norms.

    Accepts SecularData, ConjugacyData or a plain sequence of norms for
    n = 1, 2, ...; orders below ``first`` are left out of the fit.
    """
    norms = _order_norms(series)
    if len(norms) < 4:
        raise InsufficientOrders(f"need at least 4 orders, have {len(norms)}")
    n = np.arange(1, len(norms) + 1)
    y = np.asarray(norms, dtype=float)
    keep = (n >= first) & (y > 0)
    if not keep.any():
        return math.inf
    if keep.sum() < 2:
        raise InsufficientOrders("fewer than 2 non-zero orders to fit")
    slope, _icpt = np.polyfit(n[keep], np.log(y[keep]), 1)
    return float(math.exp(-slope))


# ---------------------------------------------------------------------------
# norms against the proof's bounds


@dataclass
class BoundRow:
    n: int
    norm_v: float
    norm_L: float
    alpha: int
    bound: float

    @property
    def ok(self) -> bool:
        return self.norm_v <= self.bound and self.norm_L <= self.bound

    @property
    def required_E(self) -> float:
        """Smallest E_beta for which this order would satisfy the bound."""
        return (max(self.norm_v, self.norm_L) / self.alpha) ** (1.0 / self.n)


def bound_table(sd: SecularData, consts: DiagnosticsConstants):
    """Per order: max ||v_ik^(n)||, max ||L_i^(n)|| against alpha_n E_beta^n.

    Returns (rows, violations, message); violations do not raise.
    """
    alpha = alpha_sequence(sd.order)
    rows = [BoundRow(n, nv, nl, alpha[n], float(alpha[n]) * consts.E_beta ** n)
            for n, nv, nl in sd.norms()]
    bad = [r for r in rows if not r.ok]
    msg = ""
    if bad:
        need = max(r.required_E for r in bad)
        msg = (f"E_beta = {consts.E_beta:.4g} is too optimistic at orders "
               f"{[r.n for r in bad]}; the data need E_beta >= {need:.4g}. E_beta is built "
               f"from the empirical C_beta = {consts.C_beta:.4g} and R = {consts.R:.4g}, "
               f"so one of these underestimates the true constant.")
    return rows, bad, msg


# ---------------------------------------------------------------------------
# Hoelder seminorms


def _torus_distance(x, y):
    diff = np.mod(x - y + math.pi, TWO_PI) - math.pi
    return np.sqrt((diff ** 2).sum(axis=-1))


def sample_pairs(d: int, n_pairs: int = 10_000, seed: int = 0):
    """Random point pairs with separations log-uniform in [1e-4, pi]."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, TWO_PI, size=(n_pairs, d))
    u = rng.normal(size=(n_pairs, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = np.exp(rng.uniform(math.log(1e-4), math.log(math.pi), size=(n_pairs, 1)))
    return x, np.mod(x + r * u, TWO_PI)


def holder_norm(f, beta: float, x, y) -> tuple:
    """(||f||_beta, |f|_beta, sup |f|) estimated on the pairs (x, y).

    ``f`` is a TrigSeries or any callable on arrays of points.
    """
    fx = evaluate(f, x) if isinstance(f, TrigSeries) else np.asarray(f(x))
    fy = evaluate(f, y) if isinstance(f, TrigSeries) else np.asarray(f(y))
    dist = _torus_distance(x, y)
    ok = dist > 0
    semi = float((np.abs(fx - fy)[ok] / dist[ok] ** beta).max()) if ok.any() else 0.0
    sup = float(max(np.abs(fx).max(), np.abs(fy).max()))
    return sup + semi, semi, sup


def _wrap(x):
    return np.mod(x + math.pi, TWO_PI) - math.pi


def _quotients(f, beta, x, y, fx, fy):
    dist = _torus_distance(x, y)
    ok = dist > 0
    semi = float((np.abs(fx - fy)[ok] / dist[ok] ** beta).max()) if ok.any() else 0.0
    return float(max(np.abs(fx).max(), np.abs(fy).max())) + semi


def holder_composition_check(f: TrigSeries, A, beta: float, *, m_max: int = 8,
                             n_pairs: int = 10_000, seed: int = 0):
    """Check ||f o A^m||_beta <= Omega^{beta |m|} ||f||_beta for |m| <= m_max.

    Omega = max(||A||, ||A^-1||).  For a base pair (x, y) with shortest
    lift difference delta, the image pair is (A^m x, A^m x + A^m delta), so
    the distance of the images is at most ||A^m|| |delta|.  ||f||_beta is
    estimated on the base pairs together with all their images, which makes
    the sampled inequality a consequence of that Lipschitz bound.
    Returns rows (m, lhs, rhs, ok).
    """
    A = np.asarray(A, dtype=float)
    Ainv = np.linalg.inv(A)
    Om = max(np.linalg.norm(A, 2), np.linalg.norm(Ainv, 2))
    x, y = sample_pairs(A.shape[0], n_pairs, seed)
    delta = _wrap(y - x)
    vals = {}
    allx, ally = [], []
    for m in range(-m_max, m_max + 1):
        M = np.linalg.matrix_power(A if m >= 0 else Ainv, abs(m))
        X = x @ M.T
        Y = X + delta @ M.T
        X, Y = np.mod(X, TWO_PI), np.mod(Y, TWO_PI)
        allx.append(X)
        ally.append(Y)
        vals[m] = (evaluate(f, X), evaluate(f, Y))
    allx, ally = np.concatenate(allx), np.concatenate(ally)
    base = _quotients(f, beta, allx, ally, np.concatenate([v[0] for v in vals.values()]),
                      np.concatenate([v[1] for v in vals.values()]))
    rows = []
    for m in range(-m_max, m_max + 1):
        lhs = _quotients(f, beta, x, y, *vals[m])
        rhs = Om ** (beta * abs(m)) * base
        rows.append((m, lhs, rhs, bool(lhs <= rhs * (1 + 1e-12))))
    return rows

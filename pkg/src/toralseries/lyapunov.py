"""Lyapunov spectra of A_eps: a QR (Benettin) oracle and the series formula.

Two estimators run along the same kind of A_eps-orbits, started from the
volume measure and iterated past a transient so that Birkhoff averages
sample the SRB measure:

* :func:`benettin_spectrum` iterates the tangent map with QR
  re-orthonormalisation;
* :func:`exponent_from_series` averages log|L_{i,eps}(H_eps^{-1} psi_t)|, with
  H_eps^{-1} computed pointwise by fixed-point iteration.

Standard errors come from batch means, one batch per (orbit, time segment).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import (IllConditionedFit, MaxIterations, NoContraction, NonConvergence,
                     NotDiffeomorphism, ZeroMultiplier)
from .fourier import (TWO_PI, SeriesBundle, TrigSeries, directional_derivative,
                      linear_combination, truncate)
from .series import (ConjugacyData, PerturbedSystem, SecularData, assemble_and_check,
                     secular_series)

MIN_BATCHES = 20
ZERO_MULTIPLIER = 1e-14


@dataclass(frozen=True)
class OrbitSampler:
    """Initial points uniform on T^d, a transient, then ``steps`` samples.

    ``n_orbits`` independent orbits are iterated side by side.
    """

    seed: int = 0
    transient: int = 1000
    steps: int = 10_000
    n_orbits: int = 100

    def __post_init__(self):
        if self.steps < 2 or self.n_orbits < 1 or self.transient < 0:
            raise ValueError("need steps >= 2, n_orbits >= 1, transient >= 0")

    def initial_points(self, dim: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.uniform(0.0, TWO_PI, size=(self.n_orbits, dim))

    def with_steps(self, steps: int) -> "OrbitSampler":
        return replace(self, steps=int(steps))

    @property
    def n_segments(self) -> int:
        return max(1, math.ceil(MIN_BATCHES / self.n_orbits))


@dataclass
class SpectrumResult:
    """Exponents sorted ascending, with batch-mean standard errors.

    ``batches`` holds the per-batch means (rows are batches, columns follow
    the sorted exponents); ``drift`` is the mean difference between the
    second and first half of the run, per exponent.
    """

    eps: float
    exponents: np.ndarray
    stderr: np.ndarray
    estimator: str
    steps: int
    transient: int
    seed: int
    n_orbits: int
    batches: np.ndarray = field(repr=False, default=None)
    drift: np.ndarray = field(repr=False, default=None)
    info: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.exponents.size

    @property
    def total(self) -> float:
        return float(self.exponents.sum())

    @property
    def total_stderr(self) -> float:
        """Standard error of the exponent sum (batches are summed first)."""
        if self.batches is None or self.batches.shape[0] < 2:
            return 0.0
        s = self.batches.sum(axis=1)
        return float(s.std(ddof=1) / math.sqrt(s.size))

    def covariance(self) -> np.ndarray:
        """Covariance matrix of the exponent estimates."""
        d = self.dim
        if self.batches is None or self.batches.shape[0] < 2:
            return np.zeros((d, d))
        return np.atleast_2d(np.cov(self.batches, rowvar=False)) / self.batches.shape[0]

    def rows(self):
        for i, (lam, se) in enumerate(zip(self.exponents, self.stderr)):
            yield dict(eps=self.eps, i=i + 1, estimator=self.estimator, exponent=float(lam),
                       stderr=float(se), T=self.steps, T0=self.transient, seed=self.seed,
                       n_orbits=self.n_orbits)


# ---------------------------------------------------------------------------
# orbit stepping


class _Dynamics:
    """F and DF of a system evaluated with one shared set of phases."""

    def __init__(self, S: PerturbedSystem, eps: float):
        self.S = S
        self.eps = float(eps)
        self.d = S.dim
        self.AT = S.A.A.T.astype(float)
        self.A = S.A.A.astype(float)
        J = S.jacobian_series()
        self.active = self.eps != 0.0 and not S.is_trivial
        if self.active:
            self.bundle = SeriesBundle(list(S.F) + [J[c][e] for c in range(self.d)
                                                    for e in range(self.d)])

    def evaluate(self, psi):
        """(image of psi, Jacobian at psi)."""
        P, d = psi.shape
        if not self.active:
            return np.mod(psi @ self.AT, TWO_PI), np.broadcast_to(self.A, (P, d, d))
        vals = self.bundle(psi)
        img = np.mod(psi @ self.AT + self.eps * vals[:, :d], TWO_PI)
        J = self.A + self.eps * vals[:, d:].reshape(P, d, d)
        return img, J

    def step(self, psi):
        if not self.active:
            return np.mod(psi @ self.AT, TWO_PI)
        vals = self.bundle(psi)
        return np.mod(psi @ self.AT + self.eps * vals[:, :self.d], TWO_PI)


def _gradient_bound(series: Sequence[TrigSeries], d: int) -> np.ndarray:
    """M[c, e] >= sup |d f_c / d psi_e| from coefficient sums."""
    M = np.zeros((len(series), d))
    for c, f in enumerate(series):
        if len(f):
            M[c] = (np.abs(f.amps)[:, None] * np.abs(f.freqs)).sum(axis=0)
    return M


def check_diffeomorphism(S: PerturbedSystem, eps: float) -> float:
    """Raise NotDiffeomorphism unless |eps| sup||DF|| < 1/||A^-1||.

    Returns the margin 1/||A^-1|| - |eps| * bound.
    """
    bound = np.linalg.norm(_gradient_bound(S.F, S.dim), 2)
    limit = 1.0 / np.linalg.norm(np.asarray(S.A.inverse, dtype=float), 2)
    margin = limit - abs(eps) * bound
    if margin <= 0:
        raise NotDiffeomorphism(f"|eps| * sup||DF|| = {abs(eps) * bound:.4g} is not below "
                                f"1/||A^-1|| = {limit:.4g}")
    return float(margin)


def _summarize(sums, halves, sampler: OrbitSampler, eps, estimator, *, order=None,
               drift_sigmas=6.0, info=None) -> SpectrumResult:
    """Turn per-segment sums into a sorted SpectrumResult.

    ``sums`` has shape (segments, P, d) holding per-segment means;
    ``halves`` holds the first- and second-half means, shape (2, P, d).
    """
    batches = sums.reshape(-1, sums.shape[-1])
    means = batches.mean(axis=0)
    if order is None:
        order = np.argsort(means, kind="stable")
    batches = batches[:, order]
    means = means[order]
    nb = batches.shape[0]
    se = batches.std(axis=0, ddof=1) / math.sqrt(nb) if nb > 1 else np.zeros_like(means)
    diff = (halves[1] - halves[0]).reshape(-1, means.size)[:, order]
    drift = diff.mean(axis=0)
    if diff.shape[0] > 1:
        dse = diff.std(axis=0, ddof=1) / math.sqrt(diff.shape[0])
        bad = np.abs(drift) > drift_sigmas * dse + 1e-9
        if bad.any():
            i = int(np.argmax(bad))
            raise NonConvergence(f"{estimator} running averages drift: exponent {i + 1} "
                                 f"changes by {drift[i]:.3g} between halves "
                                 f"(standard error {dse[i]:.2g})")
    return SpectrumResult(eps=float(eps), exponents=means, stderr=se, estimator=estimator,
                          steps=sampler.steps, transient=sampler.transient, seed=sampler.seed,
                          n_orbits=sampler.n_orbits, batches=batches, drift=drift,
                          info=dict(info or {}))


class _Accumulator:
    """Per-segment and per-half running sums of per-step log values."""

    def __init__(self, sampler: OrbitSampler, d: int):
        self.T = sampler.steps
        self.nseg = min(sampler.n_segments, self.T)
        self.edges = np.linspace(0, self.T, self.nseg + 1).astype(int)
        self.half = self.T // 2
        P = sampler.n_orbits
        self.seg = np.zeros((self.nseg, P, d))
        self.halves = np.zeros((2, P, d))
        self._s = 0

    def add(self, t, logs):
        while t >= self.edges[self._s + 1]:
            self._s += 1
        self.seg[self._s] += logs
        self.halves[0 if t < self.half else 1] += logs

    def finish(self):
        lengths = np.diff(self.edges).astype(float)
        seg = self.seg / lengths[:, None, None]
        halves = self.halves / np.array([self.half, self.T - self.half], float)[:, None, None]
        return seg, halves


def benettin_spectrum(S: PerturbedSystem, eps: float, sampler: OrbitSampler = OrbitSampler(),
                      ) -> SpectrumResult:
    """Full Lyapunov spectrum by QR re-orthonormalised tangent iteration."""
    check_diffeomorphism(S, eps)
    d = S.dim
    dyn = _Dynamics(S, eps)
    psi = sampler.initial_points(d)
    P = psi.shape[0]
    Q = np.broadcast_to(np.eye(d), (P, d, d)).copy()
    for _ in range(sampler.transient):
        psi_next, J = dyn.evaluate(psi)
        Q, _r = np.linalg.qr(J @ Q)
        psi = psi_next
    acc = _Accumulator(sampler, d)
    for t in range(sampler.steps):
        psi_next, J = dyn.evaluate(psi)
        Q, R = np.linalg.qr(J @ Q)
        acc.add(t, np.log(np.abs(np.diagonal(R, axis1=1, axis2=2))))
        psi = psi_next
    seg, halves = acc.finish()
    return _summarize(seg, halves, sampler, eps, "benettin")


# ---------------------------------------------------------------------------
# inverting H_eps


def _wrap(x):
    """Representative of x mod 2 pi in [-pi, pi)."""
    return np.mod(x + math.pi, TWO_PI) - math.pi


class ConjugacyInverse:
    """Pointwise H_eps^{-1} for a fixed eps.

    D_eps = sum_n eps^n h^(n) is combined once and amplitudes below ``prune``
    are dropped (their total is kept in ``dropped``).  The contraction
    constant sup ||D D_eps|| is estimated on ``lipschitz_points`` uniform
    points; at or above 1 the inverse is not certified unique and
    NoContraction is raised.

    ``method="fixed-point"`` iterates phi <- psi - D_eps(phi); ``"newton"``
    solves the same equation with the Jacobian I + D D_eps, which shares the
    phases of D_eps and converges in a few steps from a good guess.

    ``extras`` are further series evaluated with the same phases; use
    :meth:`solve` to get their values at the solution.  Iteration stops once
    the last update is below ``tol``, so the residual at the returned point
    is at most ``tol`` times the contraction factor.
    """

    def __init__(self, C: ConjugacyData, eps: float, *, order=None, prune=0.0,
                 tol=1e-12, max_iter=200, method="fixed-point", lipschitz_points=10_000,
                 seed=0, extras=()):
        if method not in ("fixed-point", "newton"):
            raise ValueError(f"unknown method {method!r}")
        self.eps = float(eps)
        self.d = d = C.system.dim
        self.tol = tol
        self.max_iter = max_iter
        self.method = method
        N = C.order if order is None else min(order, C.order)
        comps, dropped = [], 0.0
        for c in range(d):
            if N == 0 or self.eps == 0.0:
                comps.append(TrigSeries.zero(d))
                continue
            s = linear_combination([C.h[n][c] for n in range(1, N + 1)],
                                   [self.eps ** n for n in range(1, N + 1)], tau=0.0)
            if prune > 0:
                s, lost = truncate(s, tau=prune)
                dropped += lost
            comps.append(s)
        self.dropped = dropped
        self.trivial = all(len(c) == 0 for c in comps)
        self.lipschitz = 0.0
        self.n_extra = len(extras)
        eye = np.eye(d)
        grads = [directional_derivative(comps[c], eye[e]) for c in range(d) for e in range(d)]
        if self.trivial and not extras:
            return
        self.bundle = SeriesBundle(comps + grads + list(extras))
        if self.trivial:
            return
        pts = np.random.default_rng(seed).uniform(0.0, TWO_PI, size=(lipschitz_points, d))
        _D, J = self._eval(pts)
        self.lipschitz = float(np.linalg.norm(J, 2, axis=(1, 2)).max())
        if self.lipschitz >= 1.0:
            raise NoContraction(f"sampled Lipschitz constant {self.lipschitz:.3g} of "
                                f"H_eps - id is not below 1 at eps={self.eps:g}")

    def _eval(self, phi, extras=False):
        vals = self.bundle(phi)
        d = self.d
        D, J = vals[:, :d], vals[:, d:d + d * d].reshape(-1, d, d)
        if extras:
            return D, J, vals[:, d + d * d:]
        return D, J

    def displacement(self, phi):
        phi = np.asarray(phi, float)
        if self.trivial:
            return np.zeros_like(phi)
        return self._eval(phi.reshape(-1, self.d))[0].reshape(phi.shape)

    def __call__(self, psi, guess=None):
        return self.solve(psi, guess)[0]

    def solve(self, psi, guess=None):
        """(phi, extras evaluated at phi) with H_eps(phi) = psi."""
        psi = np.asarray(psi, float)
        shape = psi.shape
        psi = psi.reshape(-1, self.d)
        if self.trivial:
            ex = self.bundle(psi)[:, self.d + self.d ** 2:] if self.n_extra else None
            return psi.reshape(shape).copy(), ex
        if guess is None:
            phi = psi.copy()
        else:
            phi = psi - _wrap(psi - np.asarray(guess, float).reshape(-1, self.d))
        eye = np.eye(self.d)
        for _ in range(self.max_iter):
            D, J, ex = self._eval(phi, extras=True)
            resid = phi + D - psi
            if self.method == "newton":
                step = np.linalg.solve(eye + J, resid[..., None])[..., 0]
            else:
                step = resid
            phi = phi - step
            err = np.abs(step).max()
            if err < self.tol:
                return phi.reshape(shape), ex
        raise MaxIterations(f"H_eps inversion did not reach {self.tol:g} in "
                            f"{self.max_iter} iterations (last update {err:.3g})")


def invert_conjugacy_numeric(C: ConjugacyData, eps: float, psi, *, order=None, tol=1e-12,
                             max_iter=200, method="fixed-point"):
    """phi with H_eps(phi) = psi, to ``tol`` in the residual ||H_eps(phi) - psi||.

    phi is returned as the lift closest to psi, so the residual is measured
    without reduction mod 2 pi.
    """
    return ConjugacyInverse(C, eps, order=order, tol=tol, max_iter=max_iter,
                            method=method)(psi)


# ---------------------------------------------------------------------------
# the series formula


def _multiplier_series(sd: SecularData, eps: float, prune: float):
    """The series L_{i,eps} - Lambda_i, and the pruned mass."""
    d, N = sd.dim, sd.order
    comps, dropped = [], 0.0
    for i in range(d):
        s = linear_combination([sd.L[n][i] for n in range(1, N + 1)],
                               [eps ** n for n in range(1, N + 1)], tau=0.0)
        if prune > 0:
            s, lost = truncate(s, tau=prune)
            dropped += lost
        comps.append(s)
    return comps, dropped


def exponent_from_series(S: PerturbedSystem, sd: SecularData, C: ConjugacyData, eps: float,
                         sampler: OrbitSampler = OrbitSampler(), *, prune=1e-9,
                         certificate_points=200) -> SpectrumResult:
    """Exponents as SRB averages of log|L_{i,eps}(H_eps^{-1}(psi_t))|.

    The orbit psi_t is an A_eps-orbit; H_eps^{-1} is evaluated pointwise,
    warm-started from A phi_{t-1}, which is exact for the true conjugacy.
    Amplitudes below ``prune`` in the eps-summed series are discarded; the
    discarded mass is reported in ``info``.
    """
    d = S.dim
    lam = np.asarray(sd.eigen.eigenvalues, dtype=float)
    if eps == 0.0 or S.is_trivial:
        ex = np.log(np.abs(lam))
        order = np.argsort(ex, kind="stable")
        z = np.zeros(d)
        return SpectrumResult(eps=float(eps), exponents=ex[order], stderr=z,
                              estimator="series-formula", steps=sampler.steps,
                              transient=sampler.transient, seed=sampler.seed,
                              n_orbits=sampler.n_orbits, batches=None, drift=z,
                              info=dict(order=sd.order))
    check_diffeomorphism(S, eps)
    _X, cert = assemble_and_check(sd, eps, n_points=certificate_points, seed=sampler.seed)
    Ls, lost = _multiplier_series(sd, eps, prune)
    inv = ConjugacyInverse(C, eps, prune=prune, method="newton", seed=sampler.seed, extras=Ls)
    dyn = _Dynamics(S, eps)
    A = S.A.A.astype(float).T
    psi = sampler.initial_points(d)
    for _ in range(sampler.transient):
        psi = dyn.step(psi)
    phi, dL = inv.solve(psi)
    acc = _Accumulator(sampler, d)
    for t in range(sampler.steps):
        vals = lam + dL
        small = np.abs(vals) < ZERO_MULTIPLIER
        if small.any():
            p, i = np.argwhere(small)[0]
            raise ZeroMultiplier(f"|L_{i + 1},eps| < {ZERO_MULTIPLIER:g} at phi={phi[p]}")
        acc.add(t, np.log(np.abs(vals)))
        psi = dyn.step(psi)
        phi, dL = inv.solve(psi, guess=phi @ A)
    seg, halves = acc.finish()
    return _summarize(seg, halves, sampler, eps, "series-formula",
                      info=dict(order=sd.order, pruned_h=inv.dropped, pruned_L=lost,
                                lipschitz=inv.lipschitz, gershgorin_margin=cert.min_margin))


# ---------------------------------------------------------------------------
# eps sweeps


@dataclass
class SweepFit:
    """Weighted polynomial fits lambda_i(eps) = sum_j c_ij eps^j."""

    eps: np.ndarray
    results: list
    degree: int
    coefficients: np.ndarray  # (d, degree + 1), lowest power first
    coefficient_stderr: np.ndarray
    residuals: np.ndarray  # (n_eps, d)
    noise: np.ndarray  # (n_eps, d) standard errors used as weights
    chi2: np.ndarray

    @property
    def rms_residual(self) -> np.ndarray:
        return np.sqrt((self.residuals ** 2).mean(axis=0))

    @property
    def rms_noise(self) -> np.ndarray:
        return np.sqrt((self.noise ** 2).mean(axis=0))

    @property
    def residuals_below_noise(self) -> bool:
        return bool(np.all(self.rms_residual <= self.rms_noise))

    def odd_coefficients(self):
        """(value, stderr) of every odd power, per exponent."""
        idx = np.arange(1, self.degree + 1, 2)
        return self.coefficients[:, idx], self.coefficient_stderr[:, idx]


def polynomial_fit(x, y, se, degree, *, noise_floor=1e-9, max_condition=1e12):
    """Weighted least squares with coefficient covariance.

    Returns (coefficients lowest power first, their standard errors,
    residuals, chi-square).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.size <= degree:
        raise IllConditionedFit(f"{x.size} points cannot determine a degree-{degree} fit")
    w = 1.0 / np.sqrt(np.asarray(se, float) ** 2 + noise_floor ** 2)
    scale = max(np.abs(x).max(), 1e-300)
    V = np.vander(x / scale, degree + 1, increasing=True)
    G = (V * w[:, None] ** 2).T @ V
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > max_condition:
        raise IllConditionedFit(f"normal matrix condition number {cond:.3g}")
    cov = np.linalg.inv(G)
    c = cov @ ((V * w[:, None] ** 2).T @ y)
    resid = y - V @ c
    chi2 = float(((resid * w) ** 2).sum())
    powers = scale ** np.arange(degree + 1)
    return c / powers, np.sqrt(np.diag(cov)) / powers, resid, chi2


def epsilon_sweep_fit(S: PerturbedSystem, estimator: str | Callable, eps_grid, degree: int,
                      sampler: OrbitSampler = OrbitSampler(), **kw) -> SweepFit:
    """Run ``estimator`` on each eps of the grid and fit every exponent.

    ``estimator`` is "benettin", "series-formula" (coefficients are computed
    to order ``kw['order']``, default 4) or a callable (S, eps, sampler) ->
    SpectrumResult.
    """
    eps_grid = np.asarray(eps_grid, float)
    if eps_grid.size <= degree:
        raise IllConditionedFit(f"{eps_grid.size} grid points cannot determine degree {degree}")
    if estimator == "benettin":
        def run(e):
            return benettin_spectrum(S, e, sampler)
    elif estimator == "series-formula":
        sd, C, _phi = secular_series(S, kw.get("order", 4))

        def run(e):
            return exponent_from_series(S, sd, C, e, sampler, prune=kw.get("prune", 1e-9))
    elif callable(estimator):
        def run(e):
            return estimator(S, e, sampler)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    results = [run(float(e)) for e in eps_grid]
    Y = np.array([r.exponents for r in results])
    SE = np.array([r.stderr for r in results])
    d = Y.shape[1]
    coef = np.zeros((d, degree + 1))
    cse = np.zeros_like(coef)
    resid = np.zeros_like(Y)
    chi2 = np.zeros(d)
    for i in range(d):
        coef[i], cse[i], resid[:, i], chi2[i] = polynomial_fit(eps_grid, Y[:, i], SE[:, i], degree)
    return SweepFit(eps=eps_grid, results=results, degree=degree, coefficients=coef,
                    coefficient_stderr=cse, residuals=resid, noise=SE, chi2=chi2)


SPECTRUM_COLUMNS = ("eps", "i", "estimator", "exponent", "stderr", "T", "T0", "seed",
                    "n_orbits", "config_hash")


def write_spectrum_csv(results: Sequence[SpectrumResult], path, config_hash: str = ""):
    """One row per (eps, i, estimator)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SPECTRUM_COLUMNS)
        for r in results:
            for row in r.rows():
                w.writerow([repr(row["eps"]), row["i"], row["estimator"],
                            f"{row['exponent']:.12e}", f"{row['stderr']:.6e}", row["T"],
                            row["T0"], row["seed"], row["n_orbits"], config_hash])

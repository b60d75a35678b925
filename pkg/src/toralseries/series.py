"""Order-by-order expansion of the conjugacy and of the invariant splitting.

The perturbed map is A_eps(psi) = A psi + eps F(psi) (mod 2 pi) with A an
integer hyperbolic matrix and F a real trigonometric vector field.  Three
families of coefficients are built here:

* h^(n): the conjugacy H_eps = id + sum eps^n h^(n), with H o A = A_eps o H;
* Phi_ik^(n): the eps-expansion of u_k . DF(H_eps(psi)) v_i;
* (v_ik^(n), L_i^(n)): the invariant line fields and multipliers solving
  DA_eps(H_eps) v_{i,eps} = L_{i,eps} v_{i,eps} o A, written in the
  eigenbasis of A (v_ik is the k-th eigen-coordinate of the i-th field);

plus the block analogue (V^(n), L^(n)) for modulus-gapped invariant blocks.

Composition with H_eps is done by a Taylor recursion per Fourier mode kappa
of F: exp(i kappa.(psi + D)) = exp(i kappa.psi) (C + i S), with the eps series
C = cos(kappa.D), S = sin(kappa.D) obtained from

    n C_n = -sum_m m a_m S_{n-m},    n S_n = sum_m m a_m C_{n-m},

where a_m = kappa . h^(m).  Every coefficient that only ever appears
multiplied by eps^n is pruned with the order-n tolerance of the run's
Truncation.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
import numpy as np

from .cohomology import (solve_conjugacy_block, solve_conjugacy_step, solve_twisted_block,
                         solve_twisted_scalar)
from .errors import (BudgetExceeded, ComplexSpectrum, DegenerateModuli, DimensionMismatch,
                     GershgorinFailure, OrderOverflow)
from .fourier import (TrigSeries, Truncation, VectorTrigSeries, MatrixTrigSeries,
                      evaluate_dyadic, evaluate_many_dyadic, linear_combination, multiply, series_sum,
                      directional_derivative, compose_linear, truncate, TWO_PI_LD)
from .hyperbolic import (BlockData, EigenData, ToralAutomorphism, block_partition,
                         eigendecompose)

OVERFLOW_GUARD = 1e12
DYADIC_BITS = 30


# ---------------------------------------------------------------------------
# the system


@dataclass(frozen=True)
class PerturbedSystem:
    """A_eps(psi) = A psi + eps F(psi) (mod 2 pi).

    ``power`` records an A0**N replacement made by :meth:`build`; exponents of
    the powered map are N times those of A0.
    """

    A: ToralAutomorphism
    F: VectorTrigSeries
    power: int = 1
    truncation: Truncation = field(default_factory=Truncation)

    def __post_init__(self):
        A = self.A if isinstance(self.A, ToralAutomorphism) else ToralAutomorphism(self.A)
        object.__setattr__(self, "A", A)
        if len(self.F) != A.dim or self.F.dim != A.dim:
            raise DimensionMismatch("F must be a d-vector of series on T^d")
        t = self.truncation
        object.__setattr__(self, "F", VectorTrigSeries(
            TrigSeries(c.dim, c.freqs, c.amps, tau=t.tau, k_max=t.k_max) for c in self.F))

    @classmethod
    def build(cls, A0, F, *, power=1, truncation=None):
        """System with A0 replaced by A0**power."""
        aut = ToralAutomorphism(A0)
        if power > 1:
            aut = aut.power(power)
        return cls(aut, F, int(power), truncation or Truncation())

    @property
    def dim(self):
        return self.A.dim

    @property
    def is_trivial(self):
        return all(c.is_zero for c in self.F)

    def jacobian_series(self) -> MatrixTrigSeries:
        """DF as a matrix of series: entry (c, e) is dF_c / dpsi_e."""
        d = self.dim
        eye = np.eye(d)
        return MatrixTrigSeries([[directional_derivative(self.F[c], eye[e]) for e in range(d)]
                                 for c in range(d)])

    def __call__(self, psi, eps):
        psi = np.asarray(psi, float)
        return np.mod(psi @ self.A.A.T + eps * self.F(psi), 2 * np.pi)


def vector_field_from_triples(dim, triples, *, kind="sin") -> VectorTrigSeries:
    """F from (frequency, component, amplitude[, kind]) entries.

    Each entry adds amplitude * sin(k.psi) (or cos, when kind == "cos") to
    component ``component`` (0-based).  A zero frequency gives a constant.
    """
    comps = [[] for _ in range(dim)]
    for entry in triples:
        k, comp, amp = entry[0], int(entry[1]), float(entry[2])
        which = entry[3] if len(entry) > 3 else kind
        k = np.asarray(k, dtype=np.int64).reshape(-1)
        if k.size != dim:
            raise DimensionMismatch(f"frequency {tuple(k)} is not {dim}-dimensional")
        if not 0 <= comp < dim:
            raise DimensionMismatch(f"component {comp} out of range")
        if not k.any():
            comps[comp].append(TrigSeries.constant(dim, amp))
        elif which == "cos":
            comps[comp].append(TrigSeries.cos(k, amp))
        elif which == "sin":
            comps[comp].append(TrigSeries.sin(k, amp))
        else:
            raise ValueError(f"unknown term kind {which!r}")
    return VectorTrigSeries(series_sum(c) if c else TrigSeries.zero(dim) for c in comps)


# ---------------------------------------------------------------------------
# Taylor composition with H_eps


class Composer:
    """Caches cos/sin(kappa . D) eps-series for every mode kappa of F."""

    def __init__(self, system: PerturbedSystem, h: list):
        self.S = system
        self.h = h  # h[0] unused; h[m] VectorTrigSeries
        self.t = system.truncation
        d = system.dim
        modes = set()
        for c in system.F:
            modes.update(map(tuple, c.freqs.tolist()))
        self.modes = sorted(m for m in modes if any(m))
        self._theta = {k: [None] for k in self.modes}
        self._C = {k: [TrigSeries.constant(d, 1.0)] for k in self.modes}
        self._S = {k: [TrigSeries.zero(d)] for k in self.modes}

    def _extend(self, kappa, n):
        th, C, S = self._theta[kappa], self._C[kappa], self._S[kappa]
        kv = np.asarray(kappa, float)
        while len(C) <= n:
            m = len(C)
            if m >= len(self.h):
                raise ValueError(f"composition to order {m} needs h up to order {m}")
            tau = self.t.tau_at(m + 1)
            th.append(linear_combination(self.h[m], kv, tau=tau))
            cs, ss = [], []
            for j in range(1, m + 1):
                if th[j].is_zero:
                    continue
                if not S[m - j].is_zero:
                    cs.append(multiply(th[j], S[m - j], tau=tau) * (-j / m))
                if not C[m - j].is_zero:
                    ss.append(multiply(th[j], C[m - j], tau=tau) * (j / m))
            d = self.S.dim
            C.append(series_sum(cs, tau=tau) if cs else TrigSeries.zero(d, tau=tau))
            S.append(series_sum(ss, tau=tau) if ss else TrigSeries.zero(d, tau=tau))

    def coefficient(self, f: TrigSeries, n: int, tau=None) -> TrigSeries:
        """[eps^n] of f(psi + D_eps(psi)) for a series f whose modes belong to F's."""
        d = f.dim
        tau = self.t.tau_at(n + 1) if tau is None else tau
        if n == 0:
            return f
        parts = []
        for k, a in zip(map(tuple, f.freqs.tolist()), f.amps):
            if not any(k):
                continue  # constant: only the eps^0 coefficient survives
            if k not in self._theta:
                raise ValueError(f"mode {k} is not a mode of F")
            self._extend(k, n)
            Cn, Sn = self._C[k][n], self._S[k][n]
            P = TrigSeries(d, [k], [a], tau=0.0)
            Q = TrigSeries(d, [k], [1j * a], tau=0.0)
            if not Cn.is_zero:
                parts.append(multiply(P, Cn, tau=tau))
            if not Sn.is_zero:
                parts.append(multiply(Q, Sn, tau=tau))
        return series_sum(parts, tau=tau) if parts else TrigSeries.zero(d, tau=tau)


def _check_overflow(order, *series):
    for s in series:
        nrm = s.norm1()
        if not math.isfinite(nrm) or nrm > OVERFLOW_GUARD:
            raise OrderOverflow(order, nrm)


# ---------------------------------------------------------------------------
# conjugacy


@dataclass
class ConjugacyData:
    """h^(1..N) of H_eps = id + sum eps^n h^(n).  ``h[0]`` is None."""

    system: PerturbedSystem
    eigen: object  # EigenData or BlockData
    h: list
    dropped: list
    composer: Composer = field(repr=False, default=None)

    @property
    def order(self):
        return len(self.h) - 1

    def norms(self):
        return [self.h[n].norm1() for n in range(1, len(self.h))]

    def displacement(self, psi, eps, order=None):
        """D_eps(psi) = H_eps(psi) - psi."""
        N = self.order if order is None else order
        psi = np.asarray(psi, float)
        out = np.zeros(psi.shape)
        for n in range(N, 0, -1):
            out = (out + self.h[n](psi)) * eps
        return out

    def __call__(self, psi, eps, order=None):
        return np.asarray(psi, float) + self.displacement(psi, eps, order)


def conjugacy_coefficients(S: PerturbedSystem, N: int, E=None) -> ConjugacyData:
    """Solve h^(n) o A - A h^(n) = [eps^(n-1)] F o H_eps for n = 1..N.

    ``E`` is the EigenData of A, or a BlockData when the spectrum is complex
    or has repeated moduli (the step is then solved block by block).
    """
    if N < 1:
        raise ValueError("order must be >= 1")
    if E is None:
        try:
            E = eigendecompose(S.A)
        except (ComplexSpectrum, DegenerateModuli):
            E = block_partition(S.A)
    step = solve_conjugacy_block if isinstance(E, BlockData) else solve_conjugacy_step
    t = S.truncation
    h = [None]
    dropped = [0.0]
    comp = Composer(S, h)
    for n in range(1, N + 1):
        tau = t.tau_at(n)
        if n == 1:
            g = S.F
        else:
            g = VectorTrigSeries(comp.coefficient(c, n - 1, tau=tau) for c in S.F)
        hn = step(g, E, S.A, tau=tau, k_max=t.k_max)
        lost = g.dropped + hn.dropped
        if lost > t.budget_at(n):
            raise BudgetExceeded(lost, t.budget_at(n), f"conjugacy order {n}")
        _check_overflow(n, *hn)
        h.append(hn)
        dropped.append(lost)
    return ConjugacyData(S, E, h, dropped, comp)


# ---------------------------------------------------------------------------
# Phi table


def frame_derivative(F: VectorTrigSeries, left, right) -> list:
    """out[a][b] = left[a] . D_{right[:, b]} F, as scalar series."""
    left = np.asarray(left, float)
    right = np.asarray(right, float)
    dF = [[directional_derivative(F[c], right[:, b]) for b in range(right.shape[1])]
          for c in range(len(F))]
    return [[linear_combination([dF[c][b] for c in range(len(F))], left[a])
             for b in range(right.shape[1])] for a in range(left.shape[0])]


@dataclass
class PhiTable:
    """Phi[n][i][k] = [eps^n] u_k . DF(H_eps) v_i."""

    phi: list
    dropped: list

    @property
    def order(self):
        return len(self.phi) - 1

    def __getitem__(self, key):
        i, k, n = key
        return self.phi[n][i][k]


def phi_coefficients(S: PerturbedSystem, C: ConjugacyData, E: EigenData, N: int) -> PhiTable:
    """Phi_ik^(n) for n = 0..N by Taylor composition of D_{v_i} F_k with H_eps."""
    if N > C.order:
        raise ValueError(f"Phi to order {N} needs the conjugacy to order {N}, have {C.order}")
    d = S.dim
    base = frame_derivative(S.F, E.U, E.V)  # base[k][i] = u_k . D_{v_i} F
    comp = C.composer or Composer(S, C.h)
    phi, dropped = [], []
    for n in range(N + 1):
        tau = S.truncation.tau_at(n + 1)
        table = [[comp.coefficient(base[k][i], n, tau=tau) for k in range(d)] for i in range(d)]
        phi.append(table)
        dropped.append(sum(s.dropped for row in table for s in row))
    return PhiTable(phi, dropped)


def phi_multinomial(S: PerturbedSystem, C: ConjugacyData, E: EigenData, N: int) -> list:
    """Phi by the literal multivariate Taylor formula (slow; test oracle).

    Phi^(n) = sum_{s=1..n} 1/s! sum_{q_1+..+q_s = n} sum_{j_1..j_s}
              d^s(u_k DF v_i)/dpsi_{j_1}..dpsi_{j_s} h^(q_1)_{j_1} ... h^(q_s)_{j_s}
    """
    import itertools

    d = S.dim
    base = frame_derivative(S.F, E.U, E.V)
    eye = np.eye(d)
    out = []
    for n in range(N + 1):
        table = []
        for i in range(d):
            row = []
            for k in range(d):
                f = base[k][i]
                if n == 0:
                    row.append(f)
                    continue
                acc = []
                for s in range(1, n + 1):
                    for qs in itertools.product(range(1, n + 1), repeat=s):
                        if sum(qs) != n:
                            continue
                        for js in itertools.product(range(d), repeat=s):
                            term = f
                            for j in js:
                                term = directional_derivative(term, eye[j])
                            for q, j in zip(qs, js):
                                term = multiply(term, C.h[q][j], tau=0.0)
                            acc.append(term * (1.0 / math.factorial(s)))
                row.append(series_sum(acc, tau=0.0) if acc else TrigSeries.zero(d))
            table.append(row)
        out.append(table)
    return out


# ---------------------------------------------------------------------------
# 1-D secular recursion


@dataclass
class SecularData:
    """v[n][i][k] (eigen-coordinate k of v_i^(n)) and L[n][i] for n = 0..N."""

    system: PerturbedSystem
    eigen: EigenData
    v: list
    L: list
    dropped: list

    @property
    def order(self):
        return len(self.L) - 1

    @property
    def dim(self):
        return self.eigen.dim

    def normalization_defect(self) -> float:
        """max |v_ii^(n)| over n >= 1 (identically zero by construction)."""
        worst = 0.0
        for n in range(1, self.order + 1):
            for i in range(self.dim):
                worst = max(worst, self.v[n][i][i].norm1())
        return worst

    def norms(self):
        """Per order: max over i != k of ||v_ik^(n)|| and max over i of ||L_i^(n)||."""
        rows = []
        d = self.dim
        for n in range(1, self.order + 1):
            nv = max((self.v[n][i][k].norm1() for i in range(d) for k in range(d) if k != i),
                     default=0.0)
            nl = max(self.L[n][i].norm1() for i in range(d))
            rows.append((n, nv, nl))
        return rows

    def frame(self, psi, eps, order=None):
        """Eigen-coordinate matrix X[..., k, i] = v_ik,eps(psi)."""
        N = self.order if order is None else order
        d = self.dim
        psi = np.asarray(psi, float)
        X = np.zeros(psi.shape[:-1] + (d, d))
        for n in range(N, 0, -1):
            vals = np.stack([np.stack([self.v[n][i][k](psi) for i in range(d)], axis=-1)
                             for k in range(d)], axis=-2)
            X = (X + vals) * eps
        return X + np.eye(d)

    def multipliers(self, psi, eps, order=None):
        """L_{i,eps}(psi) for every i, shape (..., d)."""
        N = self.order if order is None else order
        d = self.dim
        psi = np.asarray(psi, float)
        out = np.zeros(psi.shape[:-1] + (d,))
        for n in range(N, 0, -1):
            out = (out + np.stack([self.L[n][i](psi) for i in range(d)], axis=-1)) * eps
        return out + self.eigen.eigenvalues


def _zero_like(d, tau):
    return TrigSeries.zero(d, tau=tau)


def secular_first_order(S: PerturbedSystem, E: EigenData, phi0=None):
    """(L^(1), v^(1)) with L_i^(1) = Phi_ii^(0) and v_ik^(1) solving the twisted equation."""
    d = S.dim
    t = S.truncation
    if phi0 is None:
        base = frame_derivative(S.F, E.U, E.V)
        phi0 = [[base[k][i] for k in range(d)] for i in range(d)]
    L1 = [phi0[i][i] for i in range(d)]
    v1 = []
    for i in range(d):
        row = []
        for k in range(d):
            if k == i:
                row.append(_zero_like(d, t.tau_at(1)))
            else:
                row.append(solve_twisted_scalar(phi0[i][k], E.eigenvalues[i], E.eigenvalues[k],
                                                S.A, tau=t.tau_at(1), k_max=t.k_max))
        v1.append(row)
    return L1, v1


def eta(n: int, i: int, k: int, sd: SecularData, phi: PhiTable, tau=None) -> TrigSeries:
    """eta_ik^(n) = sum_j sum_{p<n} v_ij^(p) Phi_jk^(n-1-p)."""
    d = sd.dim
    tau = sd.system.truncation.tau_at(n) if tau is None else tau
    parts = [phi[i, k, n - 1]]  # p = 0: v_ij^(0) = delta_ij
    for p in range(1, n):
        for j in range(d):
            if j == i:
                continue  # v_ii^(p) = 0
            a, b = sd.v[p][i][j], phi[j, k, n - 1 - p]
            if not a.is_zero and not b.is_zero:
                parts.append(multiply(a, b, tau=tau))
    return series_sum(parts, tau=tau)


def secular_order_n(n: int, S: PerturbedSystem, E: EigenData, sd: SecularData,
                    phi: PhiTable) -> SecularData:
    """Append order n: L_i^(n) = eta_ii^(n), and for k != i solve

        Lambda_k x + r = Lambda_i x o A,
        r = eta_ik^(n) - sum_{p=1}^{n-1} L_i^(p) (v_ik^(n-p) o A).
    """
    if n != sd.order + 1:
        raise ValueError(f"next order is {sd.order + 1}, got {n}")
    if phi.order < n - 1:
        raise ValueError(f"order {n} needs Phi up to order {n - 1}")
    d = S.dim
    t = S.truncation
    tau = t.tau_at(n)
    A = S.A.A
    Ln, vn = [], []
    lost = 0.0
    for i in range(d):
        Li = eta(n, i, i, sd, phi, tau)
        lost += Li.dropped
        Ln.append(Li)
        row = []
        for k in range(d):
            if k == i:
                row.append(_zero_like(d, tau))
                continue
            r = eta(n, i, k, sd, phi, tau)
            corr = []
            for p in range(1, n):
                a, b = sd.L[p][i], sd.v[n - p][i][k]
                if not a.is_zero and not b.is_zero:
                    corr.append(multiply(a, compose_linear(b, A), tau=tau))
            if corr:
                r = r - series_sum(corr, tau=tau)
            x = solve_twisted_scalar(r, E.eigenvalues[i], E.eigenvalues[k], A, tau=tau,
                                     k_max=t.k_max)
            lost += r.dropped + x.dropped
            row.append(x)
        vn.append(row)
    if lost > t.budget_at(n):
        raise BudgetExceeded(lost, t.budget_at(n), f"secular order {n}")
    _check_overflow(n, *Ln, *(x for row in vn for x in row))
    return SecularData(S, E, sd.v + [vn], sd.L + [Ln], sd.dropped + [lost])


def secular_series(S: PerturbedSystem, N: int, *, conjugacy: ConjugacyData | None = None,
                   E: EigenData | None = None):
    """Full pipeline to order N; returns (SecularData, ConjugacyData, PhiTable)."""
    E = eigendecompose(S.A) if E is None else E
    C = conjugacy
    if C is None or C.order < max(N - 1, 1):
        C = conjugacy_coefficients(S, max(N - 1, 1), E)
    phi = phi_coefficients(S, C, E, N - 1)
    d = S.dim
    v0 = [[TrigSeries.constant(d, 1.0) if i == k else TrigSeries.zero(d) for k in range(d)]
          for i in range(d)]
    L0 = [TrigSeries.constant(d, float(E.eigenvalues[i])) for i in range(d)]
    L1, v1 = secular_first_order(S, E, [[phi[i, k, 0] for k in range(d)] for i in range(d)])
    lost1 = sum(x.dropped for row in v1 for x in row)
    sd = SecularData(S, E, [v0, v1], [L0, L1], [0.0, lost1])
    for n in range(2, N + 1):
        sd = secular_order_n(n, S, E, sd, phi)
    return sd, C, phi


# ---------------------------------------------------------------------------
# block recursion


def _mat_mul(X, Y, tau, dim):
    """Product of two matrices of series (lists of lists)."""
    p, q, r = len(X), len(Y), len(Y[0])
    out = []
    for a in range(p):
        row = []
        for c in range(r):
            parts = [multiply(X[a][b], Y[b][c], tau=tau) for b in range(q)
                     if not X[a][b].is_zero and not Y[b][c].is_zero]
            row.append(series_sum(parts, tau=tau) if parts else TrigSeries.zero(dim, tau=tau))
        out.append(row)
    return out


def _mat_add(X, Y, tau, sign=1.0):
    return [[linear_combination([x, y], [1.0, sign], tau=tau) for x, y in zip(rx, ry)]
            for rx, ry in zip(X, Y)]


def _sub(X, rs, cs):
    return [[X[r][c] for c in range(cs.start, cs.stop)] for r in range(rs.start, rs.stop)]


@dataclass
class BlockSecularData:
    """Adapted-basis coefficients: V[n], M[n] and Lblk[n] are d x d lists of series.

    In the adapted basis W (columns) the equation reads
    (Abar + eps M(psi)) V(psi) = V(A psi) Lblk(psi), with Abar = W^-1 A W,
    M = W^-1 DF(H_eps) W, V^(0) = I, Lblk^(0) = Abar, V_ii^(n) = 0.
    """

    system: PerturbedSystem
    blocks: BlockData
    V: list
    Lblk: list
    M: list
    dropped: list
    conjugacy: ConjugacyData = field(repr=False, default=None)

    @property
    def order(self):
        return len(self.V) - 1

    def block(self, n, i, j, which="V"):
        B = self.blocks
        src = self.V if which == "V" else self.Lblk
        return MatrixTrigSeries(_sub(src[n], B.slices[i], B.slices[j]))

    def _field(self, coefs, psi, eps, order, zeroth):
        N = self.order if order is None else order
        d = self.blocks.dim
        psi = np.asarray(psi, float)
        X = np.zeros(psi.shape[:-1] + (d, d))
        for n in range(N, 0, -1):
            X = (X + MatrixTrigSeries(coefs[n])(psi)) * eps
        return X + zeroth

    def frame(self, psi, eps, order=None):
        """Adapted-basis V_eps(psi)."""
        return self._field(self.V, psi, eps, order, np.eye(self.blocks.dim))

    def multiplier(self, psi, eps, order=None):
        B = self.blocks
        return self._field(self.Lblk, psi, eps, order, B.Winv @ B.A @ B.W)

    def frame_original(self, psi, eps, order=None):
        """W V_eps(psi): columns span the perturbed invariant blocks."""
        return self.blocks.W @ self.frame(psi, eps, order)


def block_series(S: PerturbedSystem, B: BlockData | None = None, N: int = 1, *,
                 conjugacy: ConjugacyData | None = None) -> BlockSecularData:
    """Block recursion to order N.

    Order n, block (i, j):  A_i V_ij - (V_ij o A) A_j = -G_ij with
        Eta   = sum_{p<n} M^(n-1-p) V^(p),
        G_ij  = Eta_ij - sum_{p=1}^{n-1} (V_ij^(n-p) o A) L_jj^(p),
    and L_ii^(n) = Eta_ii.
    """
    B = block_partition(S.A) if B is None else B
    d = S.dim
    t = S.truncation
    C = conjugacy
    if C is None or C.order < max(N - 1, 1):
        C = conjugacy_coefficients(S, max(N - 1, 1), B)
    comp = C.composer or Composer(S, C.h)
    base = frame_derivative(S.F, B.Winv, B.W)
    M = []
    for n in range(N):
        tau = t.tau_at(n + 1)
        M.append([[comp.coefficient(base[a][b], n, tau=tau) for b in range(d)]
                  for a in range(d)])
    Abar = B.Winv @ B.A @ B.W
    I = [[TrigSeries.constant(d, 1.0) if a == b else TrigSeries.zero(d) for b in range(d)]
         for a in range(d)]
    L0 = [[TrigSeries.constant(d, Abar[a, b]) if abs(Abar[a, b]) > 0 else TrigSeries.zero(d)
           for b in range(d)] for a in range(d)]
    V, L, dropped = [I], [L0], [0.0]
    A = S.A.A
    for n in range(1, N + 1):
        tau = t.tau_at(n)
        Eta = None
        for p in range(n):
            term = _mat_mul(M[n - 1 - p], V[p], tau, d)
            Eta = term if Eta is None else _mat_add(Eta, term, tau)
        Vn = [[TrigSeries.zero(d, tau=tau) for _ in range(d)] for _ in range(d)]
        Ln = [[TrigSeries.zero(d, tau=tau) for _ in range(d)] for _ in range(d)]
        lost = sum(s.dropped for row in Eta for s in row)
        for bi, si in enumerate(B.slices):
            for r in range(si.start, si.stop):
                for c in range(si.start, si.stop):
                    Ln[r][c] = Eta[r][c]
        for bi, si in enumerate(B.slices):
            for bj, sj in enumerate(B.slices):
                if bi == bj:
                    continue
                G = _sub(Eta, si, sj)
                for p in range(1, n):
                    Vp = [[compose_linear(x, A) for x in row] for row in _sub(V[n - p], si, sj)]
                    corr = _mat_mul(Vp, _sub(L[p], sj, sj), tau, d)
                    G = _mat_add(G, corr, tau, sign=-1.0)
                X = solve_twisted_block(MatrixTrigSeries(G), B.blocks[bi], B.blocks[bj], A,
                                        tau=tau, k_max=t.k_max)
                lost += X.dropped + sum(s.dropped for row in G for s in row)
                for a, r in enumerate(range(si.start, si.stop)):
                    for b, c in enumerate(range(sj.start, sj.stop)):
                        Vn[r][c] = X[a][b]
        if lost > t.budget_at(n):
            raise BudgetExceeded(lost, t.budget_at(n), f"block order {n}")
        _check_overflow(n, *(x for row in Vn for x in row), *(x for row in Ln for x in row))
        V.append(Vn)
        L.append(Ln)
        dropped.append(lost)
    return BlockSecularData(S, B, V, L, M, dropped, C)


# ---------------------------------------------------------------------------
# Gershgorin certificate


@dataclass
class Certificate:
    ok: bool
    min_margin: float
    worst_point: np.ndarray
    eps: float
    n_points: int
    failures: np.ndarray = field(repr=False, default=None)
    pruned: float = 0.0


def _pruned_frame(sd: SecularData, eps: float, prune: float, points):
    """X[p, k, i] from the eps-summed off-diagonal series, and the pruned mass per column i."""
    d, N = sd.dim, sd.order
    X = np.broadcast_to(np.eye(d), (points.shape[0], d, d)).copy()
    lost = np.zeros(d)
    if eps == 0.0 or N == 0:
        return X, lost
    w = [eps ** n for n in range(1, N + 1)]
    for i in range(d):
        for k in range(d):
            if k == i:
                continue  # v_ii = 1 exactly
            s = linear_combination([sd.v[n][i][k] for n in range(1, N + 1)], w, tau=0.0)
            if prune > 0:
                s, gone = truncate(s, tau=prune)
                lost[i] += gone
            X[:, k, i] = s(points)
    return X, lost


def assemble_and_check(sd: SecularData, eps: float, *, points=None, n_points=1000, seed=0,
                       raise_on_failure=True, prune=1e-13):
    """Evaluate V_eps on sample points and certify column diagonal dominance.

    Returns (X, certificate) where X[p, k, i] = v_ik,eps(psi_p) in eigen
    coordinates.  The certificate holds iff sum_{k != i} |v_ik,eps| < 1 for
    every i at every sampled point.  Amplitudes below ``prune`` in the
    eps-summed series are skipped; their total (a bound on their sup norm)
    is added to every off-diagonal column sum, so skipping never weakens
    the certificate.
    """
    d = sd.dim
    if points is None:
        rng = np.random.default_rng(seed)
        points = rng.uniform(0.0, 2 * np.pi, size=(n_points, d))
    points = np.asarray(points, float)
    X, lost = _pruned_frame(sd, float(eps), prune, points)
    off = np.abs(X).sum(axis=-2) - np.abs(np.diagonal(X, axis1=-2, axis2=-1)) + lost
    margin = 1.0 - off.max(axis=-1)
    bad = margin <= 0.0
    w = int(np.argmin(margin))
    cert = Certificate(ok=not bad.any(), min_margin=float(margin[w]), worst_point=points[w],
                       eps=float(eps), n_points=points.shape[0], failures=points[bad],
                       pruned=float(lost.max()))
    if bad.any() and raise_on_failure:
        raise GershgorinFailure(points[bad], margin[bad])
    return X, cert


# ---------------------------------------------------------------------------
# residuals at dyadic points


def dyadic_points(n, d, seed=0, bits=DYADIC_BITS):
    """Integer labels j of psi = 2 pi j / 2**bits, drawn uniformly."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 1 << bits, size=(n, d), dtype=np.int64)


def _dyadic_image(A, j, bits=DYADIC_BITS):
    """Labels of A psi for psi with labels j (exact)."""
    mod = np.int64(1 << bits)
    out = np.zeros_like(j)
    for r in range(A.shape[0]):
        acc = np.zeros(j.shape[0], dtype=np.int64)
        for c in range(A.shape[1]):
            acc = (acc + (np.int64(A[r, c]) % mod) * j[:, c]) % mod
        out[:, r] = acc
    return out


LD = np.longdouble


def _many(series, j):
    return evaluate_many_dyadic(series, j, DYADIC_BITS, extended=True)


def _vec_dy(vs, j):
    return _many(list(vs), j)


def _mat_dy(rows, j):
    r, c = len(rows), len(rows[0])
    return _many([x for row in rows for x in row], j).reshape(-1, r, c)


def _dyadic_psi(j):
    return TWO_PI_LD * j.astype(LD) / LD(1 << DYADIC_BITS)


def _poly(coef_vals, eps, shape=None):
    """sum_{n>=1} eps^n coef_vals[n-1] by Horner."""
    if not coef_vals:
        return np.zeros(shape, dtype=LD)
    out = np.zeros_like(coef_vals[0])
    for v in coef_vals[::-1]:
        out = (out + v) * eps
    return out


def _jacobian_at(J: MatrixTrigSeries, x):
    d = len(J)
    return np.stack([np.stack([J[c][e](x) for e in range(d)], axis=-1) for c in range(d)],
                    axis=-2)


# Residuals are formed in long double at dyadic points psi = 2 pi j / 2**30:
# series phases are reduced exactly in integers, and the O(1) terms of each
# identity cancel analytically, so an O(eps^(N+1)) residual stays visible
# above rounding down to eps = 1e-4 for N <= 4.


def conjugacy_residual(C: ConjugacyData, eps_values, *, order=None, n_points=100, seed=0):
    """sup over sample points of |D(A psi) - A D(psi) - eps F(psi + D(psi))|_inf.

    D = H_eps - id truncated at ``order``; the identity terms of
    H o A = A_eps o H cancel exactly and are not formed.
    """
    S = C.system
    N = C.order if order is None else order
    A = S.A.A
    j = dyadic_points(n_points, S.dim, seed)
    jA = _dyadic_image(A, j)
    psi = _dyadic_psi(j)
    hv = [_vec_dy(C.h[n], j) for n in range(1, N + 1)]
    hvA = [_vec_dy(C.h[n], jA) for n in range(1, N + 1)]
    AT = A.T.astype(LD)
    out = []
    for eps in np.atleast_1d(eps_values):
        eps = LD(eps)
        D = _poly(hv, eps)
        DA = _poly(hvA, eps)
        R = DA - D @ AT - eps * S.F(psi + D)
        out.append(float(np.abs(R).max()))
    return np.array(out)


def secular_residual(sd: SecularData, C: ConjugacyData, eps_values, *, order=None,
                     n_points=100, seed=0):
    """sup over points and i of |DA_eps(H) v_{i,eps} - L_{i,eps} v_{i,eps} o A|.

    Evaluated in eigen coordinates (A acting as diag(Lambda)) with the
    Lambda_i v_i terms cancelled:
        R_k = Lambda_k dv_ik(psi) + eps sum_j v_ij(psi) Phit_jk(psi)
              - Lambda_i dv_ik(A psi) - dL_i(psi) v_ik(A psi),
    where Phit_jk = u_k . DF(psi + D(psi)) v_j is evaluated directly, then
    mapped back to the original coordinates by V.
    """
    S = sd.system
    E = sd.eigen
    d = S.dim
    N = sd.order if order is None else order
    A = S.A.A
    lam = E.eigenvalues.astype(LD)
    U, V = E.U.astype(LD), E.V.astype(LD)
    j = dyadic_points(n_points, d, seed)
    jA = _dyadic_image(A, j)
    psi = _dyadic_psi(j)
    # H to order N-1 suffices: DF(H) enters multiplied by eps
    hv = [_vec_dy(C.h[n], j) for n in range(1, min(C.order, N - 1) + 1)]
    J = S.jacobian_series()

    def frame_vals(n, labels):
        # rows k, columns i
        return _mat_dy([[sd.v[n][i][k] for i in range(d)] for k in range(d)], labels)

    dv = [frame_vals(n, j) for n in range(1, N + 1)]
    dvA = [frame_vals(n, jA) for n in range(1, N + 1)]
    dL = [_vec_dy(sd.L[n], j) for n in range(1, N + 1)]
    eye = np.eye(d, dtype=LD)
    out = []
    for eps in np.atleast_1d(eps_values):
        eps = LD(eps)
        D = _poly(hv, eps, psi.shape)
        Phit = U @ _jacobian_at(J, psi + D) @ V  # Phit[p, k, j] = u_k DF v_j
        X, XA, Lt = _poly(dv, eps), _poly(dvA, eps), _poly(dL, eps)
        R = (lam[:, None] * X + eps * (Phit @ (X + eye)) - XA * lam[None, :]
             - (XA + eye) * Lt[:, None, :])
        out.append(float(np.abs(V @ R).max()))
    return np.array(out)


def block_residual(bd: BlockSecularData, eps_values, *, order=None, n_points=100, seed=0):
    """sup over points of |W[(Abar + eps M~) V - (V o A) Lblk]|_max, identity part cancelled.

    M~ = W^-1 DF(psi + D(psi)) W is evaluated directly.
    """
    S = bd.system
    B = bd.blocks
    C = bd.conjugacy
    d = S.dim
    N = bd.order if order is None else order
    A = S.A.A
    W, Winv = B.W.astype(LD), B.Winv.astype(LD)
    Abar = np.zeros((d, d), dtype=LD)
    for b, sl in enumerate(B.slices):
        Abar[sl, sl] = B.blocks[b]
    j = dyadic_points(n_points, d, seed)
    jA = _dyadic_image(A, j)
    psi = _dyadic_psi(j)
    hv = [_vec_dy(C.h[n], j) for n in range(1, min(C.order, N - 1) + 1)]
    J = S.jacobian_series()
    dV = [_mat_dy(bd.V[n], j) for n in range(1, N + 1)]
    dVA = [_mat_dy(bd.V[n], jA) for n in range(1, N + 1)]
    dL = [_mat_dy(bd.Lblk[n], j) for n in range(1, N + 1)]
    eye = np.eye(d, dtype=LD)
    out = []
    for eps in np.atleast_1d(eps_values):
        eps = LD(eps)
        D = _poly(hv, eps, psi.shape)
        Mt = Winv @ _jacobian_at(J, psi + D) @ W
        X, XA, Lt = _poly(dV, eps), _poly(dVA, eps), _poly(dL, eps)
        R = Abar @ X + eps * (Mt @ (X + eye)) - XA @ Abar - (XA + eye) @ Lt
        out.append(float(np.abs(W @ R).max()))
    return np.array(out)


def loglog_slope(eps_values, residuals):
    """Least-squares slope of log r against log eps."""
    x = np.log(np.asarray(eps_values, float))
    y = np.log(np.asarray(residuals, float))
    if not np.all(np.isfinite(y)):
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------------------
# dumps


def dump_secular(sd: SecularData, directory, config_hash=""):
    """One text block per (i, k, n) plus manifest.json with norms and dropped masses."""
    os.makedirs(directory, exist_ok=True)
    d = sd.dim
    entries = []
    with open(os.path.join(directory, "secular_series.txt"), "w") as fh:
        if config_hash:
            fh.write(f"# config {config_hash}\n")
        for n in range(1, sd.order + 1):
            for i in range(d):
                fh.write(f"## L i={i} n={n}\n")
                fh.write(sd.L[n][i].to_text())
                entries.append({"kind": "L", "i": i, "n": n, "norm1": sd.L[n][i].norm1(),
                                "modes": len(sd.L[n][i])})
                for k in range(d):
                    s = sd.v[n][i][k]
                    fh.write(f"## v i={i} k={k} n={n}\n")
                    fh.write(s.to_text())
                    entries.append({"kind": "v", "i": i, "k": k, "n": n, "norm1": s.norm1(),
                                    "modes": len(s)})
    manifest = {"config_hash": config_hash, "order": sd.order,
                "dropped_per_order": sd.dropped, "series": entries}
    with open(os.path.join(directory, "secular_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def dump_conjugacy(C: ConjugacyData, directory, config_hash=""):
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "conjugacy_series.txt"), "w") as fh:
        if config_hash:
            fh.write(f"# config {config_hash}\n")
        for n in range(1, C.order + 1):
            for c, s in enumerate(C.h[n]):
                fh.write(f"## h component={c} n={n}\n")
                fh.write(s.to_text())

"""Twisted cohomological equations solved as geometric orbit sums.

Every order of the perturbative recursion reduces to an equation of the form

    lam_k * x(psi) + g(psi) = lam_i * x(A psi)

(or its block analogue).  In Fourier space the composition with A only moves
mode k to A^T k, so the solution is a sum over the forward or backward orbit
of each source mode with geometrically decaying weights.  Orbits are marched
for all source modes at once; a mode stops when its weighted amplitude drops
below tau or when it leaves the k_max ball, and the geometric tail it leaves
behind is charged to the dropped mass.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import BudgetExceeded, DimensionMismatch, ResonantBlocks, ResonantPair
from .fourier import (K_MAX_DEFAULT, MatrixTrigSeries, TrigSeries, VectorTrigSeries,
                      _canonical, _is_zero_row, _lex_negative, advance_frequencies)
from .hyperbolic import EigenData, ToralAutomorphism, integer_inverse

MAX_ORBIT_STEPS = 100_000


class TwistDirection(enum.Enum):
    """+ : forward orbit sum (m >= 0); - : backward orbit sum (m <= -1)."""

    FORWARD = "+"
    BACKWARD = "-"

    @classmethod
    def for_pair(cls, lam_i, lam_k):
        if abs(abs(lam_i) - abs(lam_k)) <= 1e-12 * max(abs(lam_i), abs(lam_k)):
            raise ResonantPair(f"|lam_i| = |lam_k| = {abs(lam_i):.12g}")
        return cls.FORWARD if abs(lam_i) < abs(lam_k) else cls.BACKWARD


def _matrix(A):
    if isinstance(A, ToralAutomorphism):
        return A.A
    return ToralAutomorphism(A).A


def _fold(freqs, amps):
    neg = _lex_negative(freqs)
    if neg.any():
        freqs = freqs.copy()
        amps = amps.copy()
        freqs[neg] = -freqs[neg]
        amps[neg] = np.conj(amps[neg])
    return freqs, amps


def _march(freqs, coef, MT, left, right, ratio, tau, k_max, shift_first):
    """Shared orbit marcher for scalar (1x1) and block coefficients.

    coef has shape (n, p, q); each step maps coef -> left @ coef @ right and
    freqs -> MT freqs.  Returns (out_freqs, out_coefs, dropped).
    """
    out_f, out_c = [], []
    dropped = 0.0
    p, q = coef.shape[1:]
    scale = np.sqrt(p * q)
    tail = 1.0 / (1.0 - ratio)
    mt = MT
    k = freqs.copy()
    c = coef.copy()
    if shift_first:
        k, esc = advance_frequencies(k, mt, k_max)
        if esc.any():
            dropped += float(scale * np.linalg.norm(c[esc], axis=(1, 2)).sum() * tail)
            k, c = k[~esc], c[~esc]
    steps = 0
    while k.shape[0]:
        steps += 1
        if steps > MAX_ORBIT_STEPS:
            raise RuntimeError("orbit sum did not terminate")
        mag = np.abs(c).max(axis=(1, 2))
        # threshold in ordinary-coefficient units (amplitudes are 2 c_k)
        live = 0.5 * mag >= tau
        if not live.all():
            dead = ~live
            dropped += float(scale * np.linalg.norm(c[dead], axis=(1, 2)).sum() * tail)
            k, c = k[live], c[live]
            if not k.shape[0]:
                break
        out_f.append(k)
        out_c.append(c)
        c = left @ c @ right
        k, esc = advance_frequencies(k, mt, k_max)
        if esc.any():
            dropped += float(scale * np.linalg.norm(c[esc], axis=(1, 2)).sum() * tail)
            k, c = k[~esc], c[~esc]
    if not out_f:
        return np.zeros((0, freqs.shape[1]), np.int64), np.zeros((0, p, q), complex), dropped
    return np.concatenate(out_f), np.concatenate(out_c), dropped


def solve_twisted_scalar(g: TrigSeries, lam_i: float, lam_k: float, A, *, tau=None,
                         k_max=None, budget=None) -> TrigSeries:
    """Solve lam_k x + g = lam_i (x o A) for the scalar series x.

    Forward sum  x = -sum_{m>=0} lam_i^m / lam_k^(m+1) g o A^m   if |lam_i| < |lam_k|,
    backward sum x =  sum_{m>=1} lam_k^(m-1) / lam_i^m g o A^-m  otherwise.
    The mean mode is summed in closed form.

    Raises:
        ResonantPair: |lam_i| == |lam_k|.
        BudgetExceeded: the dropped mass exceeds ``budget``.
    """
    A = _matrix(A)
    if A.shape[0] != g.dim:
        raise DimensionMismatch("matrix and series dimensions differ")
    direction = TwistDirection.for_pair(lam_i, lam_k)
    tau = g.tau if tau is None else float(tau)
    k_max = g.k_max if k_max is None else int(k_max)
    if g.is_zero:
        return TrigSeries.zero(g.dim, tau=tau, k_max=k_max)
    zero = _is_zero_row(g.freqs)
    mean = g.amps[zero].real.sum()
    freqs, amps = g.freqs[~zero], g.amps[~zero]
    if direction is TwistDirection.FORWARD:
        MT, w0, ratio, shift = A.T, -1.0 / lam_k, lam_i / lam_k, False
    else:
        MT, w0, ratio, shift = integer_inverse(A).T, 1.0 / lam_i, lam_k / lam_i, True
    rf, rc, dropped = _march(freqs, (amps * w0)[:, None, None], MT,
                             np.array([[ratio]]), np.array([[1.0]]), abs(ratio), tau, k_max,
                             shift)
    rf, ra = _fold(rf, rc[:, 0, 0])
    if mean != 0.0:
        rf = np.concatenate([rf, np.zeros((1, g.dim), np.int64)])
        ra = np.concatenate([ra, [-mean / (lam_k - lam_i)]])
    cf, ca, extra = _canonical(rf, ra, tau, k_max)
    dropped += extra
    if budget is not None and dropped > budget:
        raise BudgetExceeded(dropped, budget, "solve_twisted_scalar")
    return TrigSeries(g.dim, cf, ca, tau=tau, k_max=k_max, dropped=dropped,
                      _canonical_input=True)


def solve_conjugacy_step(g: VectorTrigSeries, E: EigenData, A=None, *, tau=None, k_max=None,
                         budget=None) -> VectorTrigSeries:
    """Solve h(A psi) - A h(psi) = g(psi) componentwise in the eigenbasis.

    Component j (along v_j) satisfies h_j o A - lam_j h_j = u_j . g, i.e. the
    twisted scalar equation with (lam_i, lam_k) = (1, lam_j): forward sums for
    expanding directions, backward sums for contracting ones.
    """
    A = E.A if A is None else _matrix(A)
    d = E.dim
    if len(g) != d or g.dim != d:
        raise DimensionMismatch("conjugacy step needs a d-vector of series on T^d")
    tau = g[0].tau if tau is None else tau
    k_max = g[0].k_max if k_max is None else k_max
    comps = g.transform(E.U, tau=tau, k_max=k_max)
    hs = []
    dropped = 0.0
    for j in range(d):
        h = solve_twisted_scalar(comps[j], 1.0, float(E.eigenvalues[j]), A, tau=tau, k_max=k_max)
        dropped += h.dropped
        hs.append(h)
    if budget is not None and dropped > budget:
        raise BudgetExceeded(dropped, budget, "solve_conjugacy_step")
    out = VectorTrigSeries(hs).transform(E.V, tau=tau, k_max=k_max)
    # carry the solver's dropped mass on the first component for accounting
    first = out[0]
    first = TrigSeries(first.dim, first.freqs, first.amps, tau=first.tau, k_max=first.k_max,
                       dropped=first.dropped + dropped, _canonical_input=True)
    return VectorTrigSeries((first,) + tuple(out[1:]))


def _block_modulus(M):
    ev = np.abs(np.linalg.eigvals(np.asarray(M, float)))
    return float(ev.min()), float(ev.max())


def solve_twisted_block(G: MatrixTrigSeries, A_i, A_j, A, *, tau=None, k_max=None,
                        budget=None) -> MatrixTrigSeries:
    """Solve A_i V(psi) - V(A psi) A_j = -G(psi) for the d_i x d_j matrix series V.

    When every modulus of A_j is below every modulus of A_i the forward sum
    V = -sum_{m>=0} A_i^-(m+1) G(A^m psi) A_j^m converges; in the opposite
    case the backward sum V = sum_{m>=1} A_i^(m-1) G(A^-m psi) A_j^-m is used.
    The blocks are assumed normal (diagonal or rotation-scaling), which holds
    for the adapted bases built by block_partition.

    Raises:
        ResonantBlocks: the modulus ranges of A_i and A_j overlap.
    """
    A = _matrix(A)
    A_i = np.atleast_2d(np.asarray(A_i, float))
    A_j = np.atleast_2d(np.asarray(A_j, float))
    p, q = A_i.shape[0], A_j.shape[0]
    if G.shape != (p, q):
        raise DimensionMismatch(f"G has shape {G.shape}, expected {(p, q)}")
    dim = G.dim
    ref = G[0][0]
    tau = ref.tau if tau is None else float(tau)
    k_max = ref.k_max if k_max is None else int(k_max)
    lo_i, hi_i = _block_modulus(A_i)
    lo_j, hi_j = _block_modulus(A_j)
    if hi_j < lo_i:
        forward = True
        ratio = hi_j / lo_i
    elif hi_i < lo_j:
        forward = False
        ratio = hi_i / lo_j
    else:
        raise ResonantBlocks(f"block moduli overlap: [{lo_i:.6g}, {hi_i:.6g}] vs "
                             f"[{lo_j:.6g}, {hi_j:.6g}]")

    # gather coefficient matrices on the union of source frequencies
    entries = [(r, c, G[r][c]) for r in range(p) for c in range(q) if not G[r][c].is_zero]
    if not entries:
        return MatrixTrigSeries.zero(dim, (p, q), tau=tau, k_max=k_max)
    allf = np.concatenate([e.freqs for _, _, e in entries])
    uniq, inv = np.unique(allf, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    coef = np.zeros((uniq.shape[0], p, q), complex)
    pos = 0
    for r, c, e in entries:
        n = len(e)
        coef[inv[pos:pos + n], r, c] += e.amps
        pos += n
    zero = _is_zero_row(uniq)
    out_parts = []
    Ai_inv = np.linalg.inv(A_i)
    Aj_inv = np.linalg.inv(A_j)
    if zero.any():
        # constant mode: Sylvester equation A_i X - X A_j = -C
        C = coef[zero][0].real
        K = np.kron(np.eye(q), A_i) - np.kron(A_j.T, np.eye(p))
        X = np.linalg.solve(K, -C.reshape(-1, order="F")).reshape((p, q), order="F")
        out_parts.append((np.zeros((1, dim), np.int64), X[None].astype(complex)))
    src_f, src_c = uniq[~zero], coef[~zero]
    if forward:
        rf, rc, dropped = _march(src_f, -(Ai_inv @ src_c), A.T, Ai_inv, A_j, ratio, tau,
                                 k_max, False)
    else:
        rf, rc, dropped = _march(src_f, src_c @ Aj_inv, integer_inverse(A).T, A_i, Aj_inv,
                                 ratio, tau, k_max, True)
    out_parts.append((rf, rc))
    rf = np.concatenate([f for f, _ in out_parts])
    rc = np.concatenate([c for _, c in out_parts])
    rows = []
    for r in range(p):
        row = []
        for c in range(q):
            ff, aa = _fold(rf, rc[:, r, c])
            cf, ca, extra = _canonical(ff, aa, tau, k_max)
            dropped += extra
            row.append(TrigSeries(dim, cf, ca, tau=tau, k_max=k_max, dropped=extra,
                                  _canonical_input=True))
        rows.append(row)
    if budget is not None and dropped > budget:
        raise BudgetExceeded(dropped, budget, "solve_twisted_block")
    out = MatrixTrigSeries(rows)
    # attribute the march's dropped mass to the (0, 0) entry
    e00 = out[0][0]
    march_drop = dropped - sum(e.dropped for row in out for e in row)
    rows[0][0] = TrigSeries(dim, e00.freqs, e00.amps, tau=tau, k_max=k_max,
                            dropped=e00.dropped + march_drop, _canonical_input=True)
    return MatrixTrigSeries(rows)


def solve_conjugacy_block(g: VectorTrigSeries, B, A=None, *, tau=None, k_max=None,
                          budget=None) -> VectorTrigSeries:
    """h(A psi) - A h(psi) = g(psi) solved in the adapted basis of a BlockData.

    Block b of the adapted coordinates satisfies A_b x - x o A = -g_b, i.e.
    solve_twisted_block with right factor 1.  Works for complex spectra.
    """
    A = B.A if A is None else _matrix(A)
    d = B.dim
    if len(g) != d or g.dim != d:
        raise DimensionMismatch("conjugacy step needs a d-vector of series on T^d")
    tau = g[0].tau if tau is None else tau
    k_max = g[0].k_max if k_max is None else k_max
    gt = g.transform(B.Winv, tau=tau, k_max=k_max)
    comps = []
    dropped = 0.0
    one = np.array([[1.0]])
    for b, s in enumerate(B.slices):
        G = MatrixTrigSeries([[gt[r]] for r in range(s.start, s.stop)])
        X = solve_twisted_block(G, B.blocks[b], one, A, tau=tau, k_max=k_max)
        dropped += X.dropped
        comps.extend(row[0] for row in X)
    if budget is not None and dropped > budget:
        raise BudgetExceeded(dropped, budget, "solve_conjugacy_block")
    out = VectorTrigSeries(comps).transform(B.W, tau=tau, k_max=k_max)
    first = out[0]
    first = TrigSeries(first.dim, first.freqs, first.amps, tau=first.tau, k_max=first.k_max,
                       dropped=first.dropped + dropped, _canonical_input=True)
    return VectorTrigSeries((first,) + tuple(out[1:]))

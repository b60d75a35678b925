"""Sparse real trigonometric series on the d-torus.

A real function on T^d is stored through its Fourier coefficients on the
half-lattice H = {0} u {k : first nonzero entry of k is positive}; the
coefficient at -k is implied to be the conjugate of the one at k, so the
reality of every series is structural rather than checked after the fact.

Internally the amplitude array holds the "analytic" amplitudes

    f(psi) = Re sum_{k in H} a_k exp(i k.psi),

i.e. a_0 = c_0 and a_k = 2 c_k for k != 0, where c_k is the ordinary Fourier
coefficient.  This makes products and linear substitutions uniform (no
special casing of the mean mode).  All public accessors speak in terms of the
ordinary coefficients c_k.

Every pruning step records the discarded mass (the sum of |c_k| over the full
lattice that was removed); it is exposed as ``series.dropped`` on the series
produced by the operation.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, NotUnimodular

TAU_DEFAULT = 1e-14
K_MAX_DEFAULT = 2**61
TWO_PI = 2.0 * math.pi

# Pair counts above this are processed in chunks inside multiply().
_PAIR_CHUNK = 2_000_000
# Elements per (points x modes) block during evaluation.
_EVAL_BLOCK = 4_000_000


@dataclass(frozen=True)
class Truncation:
    """The (tau, k_max, budget) triple governing every series of a run.

    ``tau_growth`` scales the drop tolerance with the epsilon order of the
    coefficient being built: order n uses ``tau * tau_growth**(n-1)``
    (and the same factor on the budget).  With the default 1.0 a single
    tolerance governs all orders.
    """

    tau: float = TAU_DEFAULT
    k_max: int = K_MAX_DEFAULT
    budget: float = 1e-8
    tau_growth: float = 1.0

    def __post_init__(self):
        if self.tau < 0 or self.budget < 0:
            raise ValueError("tau and budget must be non-negative")
        if not 0 <= self.k_max <= K_MAX_DEFAULT:
            raise ValueError(f"k_max must lie in [0, 2**61], got {self.k_max}")
        if self.tau_growth < 1.0:
            raise ValueError("tau_growth must be >= 1")

    def tau_at(self, order: int) -> float:
        return self.tau * self.tau_growth ** max(order - 1, 0)

    def budget_at(self, order: int) -> float:
        return self.budget * self.tau_growth ** max(order - 1, 0)


# ---------------------------------------------------------------------------
# low level helpers on (freqs, amps) arrays


def _lex_negative(freqs: np.ndarray) -> np.ndarray:
    """Mask of rows whose first nonzero entry is negative."""
    if freqs.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    nz = freqs != 0
    first = nz.argmax(axis=1)
    lead = freqs[np.arange(freqs.shape[0]), first]
    return lead < 0


def _is_zero_row(freqs: np.ndarray) -> np.ndarray:
    return ~np.any(freqs != 0, axis=1)


def _mass(freqs: np.ndarray, amps: np.ndarray) -> float:
    """Full-lattice coefficient mass sum |c_k| of half-lattice amplitudes."""
    # |a_k| = 2|c_k| = |c_k| + |c_-k| for k != 0, and |a_0| = |c_0|.
    return float(np.abs(amps).sum())


def _canonical(freqs, amps, tau, k_max, *, presorted=False):
    """Fold to the half lattice, aggregate, prune; return (freqs, amps, dropped)."""
    freqs = np.asarray(freqs, dtype=np.int64)
    amps = np.asarray(amps, dtype=np.complex128)
    dropped = 0.0
    if freqs.shape[0] == 0:
        return freqs, amps, dropped
    if not presorted:
        neg = _lex_negative(freqs)
        if neg.any():
            freqs = freqs.copy()
            amps = amps.copy()
            freqs[neg] = -freqs[neg]
            amps[neg] = np.conj(amps[neg])
        if k_max < K_MAX_DEFAULT:
            far = np.abs(freqs).max(axis=1) > k_max
            if far.any():
                dropped += float(np.abs(amps[far]).sum())
                freqs = freqs[~far]
                amps = amps[~far]
                if freqs.shape[0] == 0:
                    return freqs, amps, dropped
        order = np.lexsort(freqs.T[::-1])
        freqs = freqs[order]
        amps = amps[order]
        if freqs.shape[0] > 1:
            step = np.any(freqs[1:] != freqs[:-1], axis=1)
            if not step.all():
                starts = np.concatenate(([0], np.flatnonzero(step) + 1))
                amps = np.add.reduceat(amps, starts)
                freqs = freqs[starts]
    zero = _is_zero_row(freqs)
    if zero.any():
        amps = amps.copy()
        amps[zero] = amps[zero].real
    mag = np.abs(amps)
    # c-magnitude: |a|/2 off the mean mode, |a| on it
    cmag = np.where(zero, mag, 0.5 * mag)
    small = (cmag < tau) | (mag == 0.0)
    if small.any():
        dropped += float(mag[small].sum())
        freqs = freqs[~small]
        amps = amps[~small]
    return freqs, amps, dropped


class TrigSeries:
    """Immutable sparse real trigonometric series on T^dim.

    Attributes:
        dim: torus dimension d.
        freqs: (n, d) int64 half-lattice frequencies, lexicographically sorted.
        amps: (n,) complex analytic amplitudes (see module docstring).
        tau: drop tolerance carried by the series.
        k_max: truncation radius (max-norm of stored frequencies).
        dropped: mass discarded by the operation that produced this series.
    """

    __slots__ = ("dim", "freqs", "amps", "tau", "k_max", "dropped", "_pos")

    def __init__(self, dim, freqs, amps, *, tau=TAU_DEFAULT, k_max=K_MAX_DEFAULT,
                 dropped=0.0, _canonical_input=False):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        freqs = np.asarray(freqs, dtype=np.int64).reshape(-1, dim)
        amps = np.asarray(amps, dtype=np.complex128).reshape(-1)
        if freqs.shape[0] != amps.shape[0]:
            raise ValueError("freqs and amps lengths differ")
        if not _canonical_input:
            freqs, amps, extra = _canonical(freqs, amps, tau, k_max)
            dropped = dropped + extra
        freqs.setflags(write=False)
        amps.setflags(write=False)
        self.dim = int(dim)
        self.freqs = freqs
        self.amps = amps
        self.tau = float(tau)
        self.k_max = int(k_max)
        self.dropped = float(dropped)

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, dim, *, tau=TAU_DEFAULT, k_max=K_MAX_DEFAULT):
        return cls(dim, np.zeros((0, dim), np.int64), np.zeros(0), tau=tau, k_max=k_max)

    @classmethod
    def constant(cls, dim, value, *, tau=TAU_DEFAULT, k_max=K_MAX_DEFAULT):
        return cls(dim, np.zeros((1, dim), np.int64), [float(value)], tau=tau, k_max=k_max)

    @classmethod
    def cos(cls, k, amplitude=1.0, **meta):
        """amplitude * cos(k . psi)"""
        k = np.atleast_1d(np.asarray(k, dtype=np.int64))
        return cls(k.size, k[None, :], [amplitude], **meta)

    @classmethod
    def sin(cls, k, amplitude=1.0, **meta):
        """amplitude * sin(k . psi)"""
        k = np.atleast_1d(np.asarray(k, dtype=np.int64))
        return cls(k.size, k[None, :], [-1j * amplitude], **meta)

    @classmethod
    def from_modes(cls, dim, modes: Mapping, *, tau=TAU_DEFAULT, k_max=K_MAX_DEFAULT,
                   check_reality=True, atol=1e-12):
        """Build from a full map {k: c_k} of ordinary Fourier coefficients.

        The map must be conjugate symmetric (``c_{-k} = conj(c_k)``); a partner
        missing from the map is treated as its implied conjugate.
        """
        full = {tuple(int(x) for x in k): complex(c) for k, c in modes.items()}
        for k in full:
            if len(k) != dim:
                raise DimensionMismatch(f"frequency {k} is not {dim}-dimensional")
        freqs, amps = [], []
        for k, c in full.items():
            nk = tuple(-x for x in k)
            if all(x == 0 for x in k):
                if check_reality and abs(c.imag) > atol:
                    raise ValueError("mean coefficient must be real")
                freqs.append(k)
                amps.append(c.real)
                continue
            if nk in full and check_reality and abs(full[nk] - c.conjugate()) > atol:
                raise ValueError(f"coefficients at {k} and {nk} are not conjugate")
            if _lex_negative(np.array([k]))[0]:
                if nk in full:
                    continue
                freqs.append(nk)
                amps.append(2.0 * c.conjugate())
            else:
                freqs.append(k)
                amps.append(2.0 * c)
        return cls(dim, np.array(freqs, dtype=np.int64).reshape(-1, dim), np.array(amps),
                   tau=tau, k_max=k_max)

    def _like(self, freqs, amps, dropped=0.0, canonical=False, tau=None, k_max=None):
        return TrigSeries(self.dim, freqs, amps, tau=self.tau if tau is None else tau,
                          k_max=self.k_max if k_max is None else k_max,
                          dropped=dropped, _canonical_input=canonical)

    # -- inspection ---------------------------------------------------------

    def __len__(self):
        return self.freqs.shape[0]

    @property
    def is_zero(self) -> bool:
        return self.freqs.shape[0] == 0

    def coefficients(self) -> dict:
        """Full conjugate-symmetric map {k: c_k} (both k and -k present)."""
        out = {}
        for k, a in zip(map(tuple, self.freqs.tolist()), self.amps.tolist()):
            if not any(k):
                out[k] = complex(a.real, 0.0)
            else:
                out[k] = a / 2
                out[tuple(-x for x in k)] = (a / 2).conjugate()
        return dict(sorted(out.items()))

    def coefficient(self, k) -> complex:
        k = tuple(int(x) for x in k)
        if not any(k):
            hit = self._find(k)
            return complex(self.amps[hit].real) if hit is not None else 0j
        if _lex_negative(np.array([k]))[0]:
            hit = self._find(tuple(-x for x in k))
            return complex(self.amps[hit] / 2).conjugate() if hit is not None else 0j
        hit = self._find(k)
        return complex(self.amps[hit] / 2) if hit is not None else 0j

    def _find(self, k):
        if self.freqs.shape[0] == 0:
            return None
        hits = np.flatnonzero(np.all(self.freqs == np.asarray(k), axis=1))
        return int(hits[0]) if hits.size else None

    def mean(self) -> float:
        return self.coefficient((0,) * self.dim).real

    def norm1(self) -> float:
        """Coefficient-sum norm sum_k |c_k|; an upper bound for the sup norm."""
        return _mass(self.freqs, self.amps)

    def max_frequency(self) -> int:
        return int(np.abs(self.freqs).max()) if len(self) else 0

    def __repr__(self):
        return f"TrigSeries(dim={self.dim}, modes={len(self)}, norm1={self.norm1():.4g})"

    # -- linear algebra -------------------------------------------------------

    def _check(self, other):
        if not isinstance(other, TrigSeries):
            raise TypeError(f"expected TrigSeries, got {type(other).__name__}")
        if other.dim != self.dim:
            raise DimensionMismatch(f"dimensions differ: {self.dim} vs {other.dim}")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = TrigSeries.constant(self.dim, other)
        self._check(other)
        return self._like(np.concatenate([self.freqs, other.freqs]),
                          np.concatenate([self.amps, other.amps]))

    __radd__ = __add__

    def __neg__(self):
        return self._like(self.freqs, -self.amps, canonical=True)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, TrigSeries):
            return multiply(self, other)
        c = float(other)
        if c == 0.0 or self.is_zero:
            return TrigSeries.zero(self.dim, tau=self.tau, k_max=self.k_max)
        return self._like(self.freqs, self.amps * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / float(c))

    def allclose(self, other, atol=1e-12) -> bool:
        """True when the coefficient-sum norm of the difference is <= atol."""
        diff = TrigSeries(self.dim, np.concatenate([self.freqs, other.freqs]),
                          np.concatenate([self.amps, -other.amps]), tau=0.0)
        return diff.norm1() <= atol

    # -- operations (thin wrappers over the module functions) -----------------

    def __call__(self, psi):
        return evaluate(self, psi)

    def multiply(self, other, **kw):
        return multiply(self, other, **kw)

    def compose_linear(self, M, **kw):
        return compose_linear(self, M, **kw)

    def directional_derivative(self, v):
        return directional_derivative(self, v)

    def truncate(self, k_max=None, tau=None):
        return truncate(self, k_max=k_max, tau=tau)

    def to_text(self) -> str:
        return to_text(self)


# ---------------------------------------------------------------------------
# operations


def linear_combination(series: Sequence[TrigSeries], weights: Iterable[float], *,
                       tau=None, k_max=None) -> TrigSeries:
    """sum_i weights[i] * series[i] aggregated in one canonicalisation pass."""
    series = list(series)
    weights = [float(w) for w in weights]
    if not series:
        raise ValueError("need at least one series")
    dim = series[0].dim
    fs, as_ = [], []
    for s, w in zip(series, weights):
        if s.dim != dim:
            raise DimensionMismatch("dimensions differ in linear combination")
        if w != 0.0 and len(s):
            fs.append(s.freqs)
            as_.append(s.amps * w)
    tau = series[0].tau if tau is None else tau
    k_max = series[0].k_max if k_max is None else k_max
    if not fs:
        return TrigSeries.zero(dim, tau=tau, k_max=k_max)
    return TrigSeries(dim, np.concatenate(fs), np.concatenate(as_), tau=tau, k_max=k_max)


def series_sum(series: Sequence[TrigSeries], **kw) -> TrigSeries:
    return linear_combination(series, [1.0] * len(series), **kw)


TWO_PI_LD = np.longdouble("6.283185307179586476925286766559005768")


def evaluate(f: TrigSeries, psi) -> np.ndarray | float:
    """Value of f at point(s) psi (shape (..., d)); real by construction.

    A long double ``psi`` is evaluated in long double throughout.
    """
    ext = np.asarray(psi).dtype == np.longdouble
    dt = np.longdouble if ext else np.float64
    psi = np.asarray(psi, dtype=dt)
    if psi.shape[-1] != f.dim:
        raise DimensionMismatch(f"point dimension {psi.shape[-1]} != series dimension {f.dim}")
    scalar = psi.ndim == 1
    pts = np.mod(psi.reshape(-1, f.dim), TWO_PI_LD if ext else TWO_PI)
    out = np.zeros(pts.shape[0], dtype=dt)
    if len(f):
        kf = f.freqs.astype(dt)
        ar, ai = f.amps.real.astype(dt), f.amps.imag.astype(dt)
        step = max(1, _EVAL_BLOCK // max(pts.shape[0], 1))
        for s in range(0, len(f), step):
            theta = pts @ kf[s:s + step].T
            out += np.cos(theta) @ ar[s:s + step] - np.sin(theta) @ ai[s:s + step]
    out = out.reshape(psi.shape[:-1])
    return out.item() if scalar and not ext else (out[()] if scalar else out)


@functools.lru_cache(maxsize=8)
def _cis_tables(bits, dt):
    """cos/sin of 2 pi m / 2**bits on the high and low halves of m."""
    lo_bits = bits // 2
    two_pi = TWO_PI_LD if dt is np.longdouble else TWO_PI
    m_lo = np.arange(1 << lo_bits).astype(dt)
    m_hi = np.arange(1 << (bits - lo_bits)).astype(dt)
    a_lo = two_pi * m_lo / dt(1 << bits)
    a_hi = two_pi * m_hi * dt(1 << lo_bits) / dt(1 << bits)
    out = (np.cos(a_hi), np.sin(a_hi), np.cos(a_lo), np.sin(a_lo), lo_bits)
    for arr in out[:4]:
        arr.setflags(write=False)
    return out


def _dyadic_phases(pts, kmod, bits):
    """(pts . k) mod 2**bits for all pairs; entries < 2**30 keep int64 exact."""
    return (pts @ kmod.T) & np.int64((1 << bits) - 1)


def _dyadic_cis(acc, bits, dt):
    ch, sh, cl, sl, lo_bits = _cis_tables(bits, dt)
    hi = acc >> lo_bits
    lo = acc & ((1 << lo_bits) - 1)
    c_hi, s_hi, c_lo, s_lo = ch[hi], sh[hi], cl[lo], sl[lo]
    return c_hi * c_lo - s_hi * s_lo, s_hi * c_lo + c_hi * s_lo


def _dyadic_sum(freqs, amps, pts, bits, dt):
    out = np.zeros(pts.shape[0], dtype=dt)
    if not len(freqs):
        return out
    kmod = np.mod(freqs, np.int64(1 << bits))
    ar, ai = amps.real.astype(dt), amps.imag.astype(dt)
    step = max(1, _EVAL_BLOCK // max(pts.shape[0], 1))
    for s in range(0, len(freqs), step):
        cos_t, sin_t = _dyadic_cis(_dyadic_phases(pts, kmod[s:s + step], bits), bits, dt)
        out += cos_t @ ar[s:s + step] - sin_t @ ai[s:s + step]
    return out


def evaluate_dyadic(f: TrigSeries, j, bits: int = 30, *, extended=False,
                    split=1e-6) -> np.ndarray | float:
    """Value of f at psi = 2 pi j / 2**bits with exactly reduced phases.

    j holds integers in [0, 2**bits).  The phase k.psi is reduced modulo 2 pi
    in integer arithmetic, so high-frequency modes are evaluated without the
    catastrophic phase error a float dot product would incur.  With
    ``extended`` the result is long double; modes with amplitude above
    ``split`` are summed in long double, the (many, tiny) rest in float64.
    """
    if bits > 30:
        raise ValueError("bits must be <= 30 to keep integer products in int64")
    j = np.asarray(j, dtype=np.int64)
    if j.shape[-1] != f.dim:
        raise DimensionMismatch(f"point dimension {j.shape[-1]} != series dimension {f.dim}")
    scalar = j.ndim == 1
    pts = np.mod(j.reshape(-1, f.dim), 1 << bits)
    if extended:
        big = np.abs(f.amps) > split
        out = _dyadic_sum(f.freqs[big], f.amps[big], pts, bits, np.longdouble)
        out += _dyadic_sum(f.freqs[~big], f.amps[~big], pts, bits, np.float64)
    else:
        out = _dyadic_sum(f.freqs, f.amps, pts, bits, np.float64)
    out = out.reshape(j.shape[:-1])
    if scalar:
        return out[()] if extended else float(out)
    return out


def evaluate_many_dyadic(series: Sequence[TrigSeries], j, bits: int = 30, *,
                         extended=False, split=1e-6) -> np.ndarray:
    """Values of several series at the dyadic points j, shape (n_points, len(series)).

    Frequencies shared between series are evaluated once.
    """
    series = list(series)
    j = np.asarray(j, dtype=np.int64).reshape(-1, series[0].dim)
    pts = np.mod(j, 1 << bits)
    sizes = [len(s) for s in series]
    dt_out = np.longdouble if extended else np.float64
    if not sum(sizes):
        return np.zeros((pts.shape[0], len(series)), dtype=dt_out)
    allf = np.concatenate([s.freqs for s in series])
    uniq, inv = np.unique(allf, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    col = np.repeat(np.arange(len(series)), sizes)
    amps = np.zeros((uniq.shape[0], len(series)), dtype=np.complex128)
    np.add.at(amps, (inv, col), np.concatenate([s.amps for s in series]))
    out = np.zeros((pts.shape[0], len(series)), dtype=dt_out)
    if extended:
        big = np.abs(amps).max(axis=1) > split
        groups = [(big, np.longdouble), (~big, np.float64)]
    else:
        groups = [(np.ones(uniq.shape[0], bool), np.float64)]
    mod = np.int64(1 << bits)
    for mask, dt in groups:
        if not mask.any():
            continue
        kmod = np.mod(uniq[mask], mod)
        ar, ai = amps[mask].real.astype(dt), amps[mask].imag.astype(dt)
        step = max(1, _EVAL_BLOCK // max(pts.shape[0], 1))
        for s0 in range(0, kmod.shape[0], step):
            acc = _dyadic_phases(pts, kmod[s0:s0 + step], bits)
            cos_t, sin_t = _dyadic_cis(acc, bits, dt)
            out += cos_t @ ar[s0:s0 + step] - sin_t @ ai[s0:s0 + step]
    return out


def multiply(f: TrigSeries, g: TrigSeries, *, tau=None, k_max=None) -> TrigSeries:
    """Product f*g by sparse convolution.

    Pairs of modes whose amplitude product falls below tau are never formed;
    their mass is added to ``dropped`` together with whatever the final
    pruning removes.
    """
    f._check(g)
    tau = max(f.tau, g.tau) if tau is None else float(tau)
    k_max = min(f.k_max, g.k_max) if k_max is None else int(k_max)
    dim = f.dim
    if f.is_zero or g.is_zero:
        return TrigSeries.zero(dim, tau=tau, k_max=k_max)
    if len(f) < len(g):
        f, g = g, f
    a, b = f.amps, g.amps
    ma, mb = np.abs(a), np.abs(b)
    order = np.argsort(-mb, kind="stable")
    gb_f, gb_a, mb_s = g.freqs[order], b[order], mb[order]
    csum = np.cumsum(mb_s)
    total_b = csum[-1]
    with np.errstate(divide="ignore"):
        thr = np.where(ma > 0, tau / ma, np.inf)
    counts = np.searchsorted(-mb_s, -thr, side="right")
    kept_b = np.where(counts > 0, csum[np.maximum(counts - 1, 0)], 0.0)
    dropped = float(np.sum(ma * (total_b - kept_b)))

    fs, as_ = [], []
    pending = 0

    def flush():
        nonlocal fs, as_, pending, dropped
        if not fs:
            return
        cf, ca, extra = _canonical(np.concatenate(fs), np.concatenate(as_), 0.0, k_max)
        dropped += extra
        fs, as_ = [cf], [ca]
        pending = cf.shape[0]

    cum = np.cumsum(counts)
    start = 0
    while start < len(f):
        # take rows until the chunk holds about _PAIR_CHUNK pairs
        base = cum[start - 1] if start else 0
        stop = int(np.searchsorted(cum, base + _PAIR_CHUNK, side="right"))
        stop = max(stop, start + 1)
        cnt = counts[start:stop]
        n_pairs = int(cnt.sum())
        if n_pairs:
            J = np.repeat(np.arange(start, stop), cnt)
            offs = np.repeat(np.cumsum(cnt) - cnt, cnt)
            K = np.arange(n_pairs) - offs
            fj, fk = f.freqs[J], gb_f[K]
            aj, bk = a[J], gb_a[K]
            fs.append(fj + fk)
            as_.append(0.5 * aj * bk)
            fs.append(fj - fk)
            as_.append(0.5 * aj * np.conj(bk))
            pending += 2 * n_pairs
            if pending > 2 * _PAIR_CHUNK:
                flush()
        start = stop
    if not fs:
        return TrigSeries(dim, np.zeros((0, dim), np.int64), np.zeros(0), tau=tau,
                          k_max=k_max, dropped=dropped, _canonical_input=True)
    cf, ca, extra = _canonical(np.concatenate(fs), np.concatenate(as_), tau, k_max)
    return TrigSeries(dim, cf, ca, tau=tau, k_max=k_max, dropped=dropped + extra,
                      _canonical_input=True)


def _as_integer_matrix(M, dim) -> np.ndarray:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NotUnimodular(f"matrix must be square, got shape {M.shape}")
    if M.shape[0] != dim:
        raise DimensionMismatch(f"matrix size {M.shape[0]} != series dimension {dim}")
    Mi = np.rint(M).astype(np.int64)
    if not np.array_equal(Mi, M):
        raise NotUnimodular("matrix must have integer entries")
    det = round(np.linalg.det(Mi.astype(float)))
    if abs(det) != 1:
        raise NotUnimodular(f"|det M| must be 1, got {det}")
    return Mi


def advance_frequencies(freqs: np.ndarray, MT: np.ndarray, k_max: int):
    """Apply the integer matrix MT to each frequency row.

    Returns (new_freqs, escaped_mask); rows whose image would leave the
    k_max ball (or overflow int64) are flagged and left as zeros.
    """
    if freqs.shape[0] == 0:
        return freqs.copy(), np.zeros(0, bool)
    bound = np.abs(MT).sum(axis=1).max() * np.abs(freqs).max(axis=1).astype(np.float64)
    risky = bound > k_max
    safe = freqs.copy()
    safe[risky] = 0
    out = safe @ MT.T
    if risky.any():
        # exact check for the borderline rows using Python ints
        for r in np.flatnonzero(risky):
            row = [int(sum(int(MT[i, j]) * int(freqs[r, j]) for j in range(MT.shape[1])))
                   for i in range(MT.shape[0])]
            if max(abs(x) for x in row) <= k_max:
                out[r] = row
                risky[r] = False
    return out, risky


def compose_linear(f: TrigSeries, M, *, k_max=None) -> TrigSeries:
    """The series psi -> f(M psi) for a unimodular integer matrix M.

    Mode k moves to M^T k with unchanged amplitude.  Modes leaving the k_max
    ball are discarded; their mass is reported in ``dropped``.
    """
    Mi = _as_integer_matrix(M, f.dim)
    k_max = f.k_max if k_max is None else int(k_max)
    if f.is_zero:
        return f._like(f.freqs, f.amps, canonical=True, k_max=k_max)
    nf, esc = advance_frequencies(f.freqs, Mi.T, k_max)
    dropped = float(np.abs(f.amps[esc]).sum())
    keep = ~esc
    return f._like(nf[keep], f.amps[keep], dropped=dropped, k_max=k_max)


def directional_derivative(f: TrigSeries, v) -> TrigSeries:
    """Derivative of f along the constant vector v: mode k gets factor i k.v."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size != f.dim:
        raise DimensionMismatch(f"vector length {v.size} != series dimension {f.dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError("direction must be finite")
    kv = f.freqs.astype(np.float64) @ v
    return f._like(f.freqs, f.amps * (1j * kv))


def truncate(f: TrigSeries, k_max=None, tau=None):
    """Prune f to (k_max, tau); returns (series, dropped_mass)."""
    k_max = f.k_max if k_max is None else k_max
    tau = f.tau if tau is None else tau
    if k_max is not None and k_max == math.inf:
        k_max = K_MAX_DEFAULT
    if k_max < 0 or tau < 0:
        raise ValueError("k_max and tau must be non-negative")
    k_max = int(min(k_max, K_MAX_DEFAULT))
    freqs, amps = f.freqs, f.amps
    dropped = 0.0
    if len(f):
        far = np.abs(freqs).max(axis=1) > k_max
        dropped += float(np.abs(amps[far]).sum())
        freqs, amps = freqs[~far], amps[~far]
        zero = _is_zero_row(freqs)
        cmag = np.where(zero, np.abs(amps), 0.5 * np.abs(amps))
        small = cmag < tau
        dropped += float(np.abs(amps[small]).sum())
        freqs, amps = freqs[~small], amps[~small]
    out = TrigSeries(f.dim, freqs, amps, tau=tau, k_max=k_max, dropped=dropped,
                     _canonical_input=True)
    return out, dropped


# ---------------------------------------------------------------------------
# text serialisation


def to_text(f: TrigSeries) -> str:
    """One line per mode of the full lattice: ``k_1 ... k_d  re  im``, sorted."""
    lines = [f"# dim {f.dim}"]
    for k, c in f.coefficients().items():
        ks = " ".join(str(x) for x in k)
        lines.append(f"{ks}  {c.real:.17e}  {c.imag:.17e}")
    return "\n".join(lines) + "\n"


def from_text(text: str, *, tau=TAU_DEFAULT, k_max=K_MAX_DEFAULT) -> TrigSeries:
    dim = None
    modes = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "dim":
                dim = int(parts[1])
            continue
        parts = line.split()
        k = tuple(int(x) for x in parts[:-2])
        modes[k] = complex(float(parts[-2]), float(parts[-1]))
        if dim is None:
            dim = len(k)
    if dim is None:
        raise ValueError("cannot infer dimension of an empty series without a '# dim' header")
    return TrigSeries.from_modes(dim, modes, tau=tau, k_max=k_max, atol=1e-9)


# ---------------------------------------------------------------------------
# vector and matrix valued series


class VectorTrigSeries(tuple):
    """Tuple of TrigSeries components sharing one dimension."""

    def __new__(cls, components):
        comps = tuple(components)
        if not comps:
            raise ValueError("empty vector series")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise DimensionMismatch("components have different torus dimensions")
        return super().__new__(cls, comps)

    @property
    def dim(self) -> int:
        return self[0].dim

    @property
    def dropped(self) -> float:
        return float(sum(c.dropped for c in self))

    @classmethod
    def zero(cls, dim, n=None, **meta):
        return cls(TrigSeries.zero(dim, **meta) for _ in range(dim if n is None else n))

    def __call__(self, psi):
        return np.stack([evaluate(c, psi) for c in self], axis=-1)

    def evaluate_dyadic(self, j, bits=30, **kw):
        return np.stack([evaluate_dyadic(c, j, bits, **kw) for c in self], axis=-1)

    def norm1(self) -> float:
        return max(c.norm1() for c in self)

    def transform(self, T, **kw) -> "VectorTrigSeries":
        """Componentwise real linear map: out_r = sum_c T[r, c] * self[c]."""
        T = np.asarray(T, dtype=np.float64)
        return VectorTrigSeries(linear_combination(self, T[r], **kw) for r in range(T.shape[0]))

    def __add__(self, other):
        return VectorTrigSeries(a + b for a, b in zip(self, other))

    def __sub__(self, other):
        return VectorTrigSeries(a - b for a, b in zip(self, other))

    def scale(self, c):
        return VectorTrigSeries(a * c for a in self)

    def compose_linear(self, M, **kw):
        return VectorTrigSeries(compose_linear(c, M, **kw) for c in self)


class MatrixTrigSeries(tuple):
    """Row-major tuple of tuples of TrigSeries."""

    def __new__(cls, rows):
        rows = tuple(tuple(r) for r in rows)
        if not rows or len({len(r) for r in rows}) != 1:
            raise ValueError("ragged or empty matrix series")
        return super().__new__(cls, rows)

    @property
    def shape(self):
        return (len(self), len(self[0]))

    @property
    def dim(self) -> int:
        return self[0][0].dim

    @property
    def dropped(self) -> float:
        return float(sum(e.dropped for r in self for e in r))

    @classmethod
    def zero(cls, dim, shape, **meta):
        return cls([[TrigSeries.zero(dim, **meta) for _ in range(shape[1])]
                     for _ in range(shape[0])])

    @classmethod
    def identity(cls, dim, n, **meta):
        return cls([[TrigSeries.constant(dim, 1.0, **meta) if i == j
                     else TrigSeries.zero(dim, **meta) for j in range(n)] for i in range(n)])

    def __call__(self, psi):
        return np.stack([np.stack([evaluate(e, psi) for e in r], axis=-1) for r in self], axis=-2)

    def evaluate_dyadic(self, j, bits=30, **kw):
        return np.stack([np.stack([evaluate_dyadic(e, j, bits, **kw) for e in r], axis=-1)
                         for r in self], axis=-2)

    def norm1(self) -> float:
        return max(e.norm1() for r in self for e in r)

    def compose_linear(self, M, **kw):
        return MatrixTrigSeries([[compose_linear(e, M, **kw) for e in r] for r in self])

    def block(self, rows, cols):
        return MatrixTrigSeries([[self[r][c] for c in cols] for r in rows])


class SeriesBundle:
    """Several series on T^d evaluated together at arbitrary float points.

    Shared frequencies are evaluated once; calling the bundle returns an
    array of shape (n_points, len(series)).  Used on orbit points, where one
    evaluation per step of F, DF or a truncated eps-series is needed.
    """

    def __init__(self, series: Sequence[TrigSeries]):
        series = list(series)
        if not series:
            raise ValueError("empty bundle")
        self.dim = series[0].dim
        self.n = len(series)
        sizes = [len(s) for s in series]
        if sum(sizes):
            allf = np.concatenate([s.freqs for s in series])
            uniq, inv = np.unique(allf, axis=0, return_inverse=True)
            amps = np.zeros((uniq.shape[0], self.n), dtype=np.complex128)
            np.add.at(amps, (inv.reshape(-1), np.repeat(np.arange(self.n), sizes)),
                      np.concatenate([s.amps for s in series]))
        else:
            uniq = np.zeros((0, self.dim), np.int64)
            amps = np.zeros((0, self.n), np.complex128)
        self.freqs = uniq
        self._K = uniq.astype(np.float64).T.copy()
        self._ar = np.ascontiguousarray(amps.real)
        self._ai = np.ascontiguousarray(amps.imag)

    def __len__(self):
        return self.freqs.shape[0]

    def __call__(self, psi) -> np.ndarray:
        psi = np.asarray(psi, dtype=np.float64)
        pts = np.mod(psi.reshape(-1, self.dim), TWO_PI)
        if not len(self):
            return np.zeros((pts.shape[0], self.n))
        theta = pts @ self._K
        return np.cos(theta) @ self._ar - np.sin(theta) @ self._ai

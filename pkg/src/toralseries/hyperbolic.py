"""Integer hyperbolic matrices: eigenstructure, dual bases, block splittings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (ComplexSpectrum, DegenerateModuli, GapViolation, NotHyperbolic,
                     NotUnimodular)

HYPERBOLIC_TOL = 1e-10
GROUP_TOL = 1e-8


@dataclass(frozen=True)
class ToralAutomorphism:
    """psi -> A psi (mod 2 pi) for an integer matrix with |det A| = 1."""

    A: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise NotUnimodular(f"matrix must be square, got shape {A.shape}")
        Ai = np.rint(A).astype(np.int64)
        if not np.array_equal(Ai, A):
            raise NotUnimodular("matrix must have integer entries")
        det = _int_det(Ai)
        if abs(det) != 1:
            raise NotUnimodular(f"|det A| must be 1, got {det}")
        Ai.setflags(write=False)
        object.__setattr__(self, "A", Ai)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def inverse(self) -> np.ndarray:
        return integer_inverse(self.A)

    def power(self, n: int) -> "ToralAutomorphism":
        if n < 1:
            raise ValueError("power must be >= 1")
        out = np.eye(self.dim, dtype=np.int64)
        for _ in range(n):
            out = out @ self.A
        return ToralAutomorphism(out)

    def __call__(self, psi):
        return np.mod(np.asarray(psi, float) @ self.A.T, 2 * np.pi)

    @classmethod
    def block_diag(cls, *blocks) -> "ToralAutomorphism":
        blocks = [np.asarray(b, dtype=np.int64) for b in blocks]
        d = sum(b.shape[0] for b in blocks)
        out = np.zeros((d, d), dtype=np.int64)
        i = 0
        for b in blocks:
            n = b.shape[0]
            out[i:i + n, i:i + n] = b
            i += n
        return cls(out)


def _int_det(A) -> int:
    """Exact determinant of a small integer matrix (Bareiss elimination)."""
    M = [[int(x) for x in row] for row in np.asarray(A)]
    n = len(M)
    sign, prev = 1, 1
    for k in range(n - 1):
        if M[k][k] == 0:
            swap = next((r for r in range(k + 1, n) if M[r][k] != 0), None)
            if swap is None:
                return 0
            M[k], M[swap] = M[swap], M[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                M[i][j] = (M[i][j] * M[k][k] - M[i][k] * M[k][j]) // prev
        prev = M[k][k]
    return sign * M[n - 1][n - 1]


def integer_inverse(A) -> np.ndarray:
    """Inverse of a unimodular integer matrix, computed exactly."""
    A = np.asarray(A, dtype=np.int64)
    inv = np.rint(np.linalg.inv(A.astype(float))).astype(np.int64)
    if not np.array_equal(inv @ A, np.eye(A.shape[0], dtype=np.int64)):
        raise NotUnimodular("matrix is not unimodular")
    return inv


def charpoly(A) -> list[int]:
    """Exact characteristic polynomial coefficients (leading 1 first), Faddeev-LeVerrier."""
    M0 = [[int(x) for x in row] for row in np.asarray(A)]
    n = len(M0)

    def matmul(X, Y):
        return [[sum(X[i][k] * Y[k][j] for k in range(n)) for j in range(n)] for i in range(n)]

    coeffs = [1]
    M = [[0] * n for _ in range(n)]
    for k in range(1, n + 1):
        AM = matmul(M0, M)
        M = [[AM[i][j] + (coeffs[-1] if i == j else 0) for j in range(n)] for i in range(n)]
        AM = matmul(M0, M)
        tr = sum(AM[i][i] for i in range(n))
        if tr % k:
            raise ArithmeticError("non-integer characteristic polynomial coefficient")
        coeffs.append(-tr // k)
    return coeffs


def _polish_root(coeffs, x, iters=8):
    p = np.poly1d(np.array(coeffs, dtype=float))
    dp = p.deriv()
    for _ in range(iters):
        d = dp(x)
        if d == 0:
            break
        step = p(x) / d
        x = x - step
        if abs(step) <= 1e-17 * max(1.0, abs(x)):
            break
    return x


def _unit_null_vector(A, lam):
    """Unit vector spanning ker(A - lam I), refined by inverse iteration."""
    d = A.shape[0]
    B = A.astype(np.complex128 if np.iscomplexobj(lam) else np.float64) - lam * np.eye(d)
    _, _, vh = np.linalg.svd(B)
    v = np.conj(vh[-1])
    shift = lam + (1e-13 * max(1.0, abs(lam)))
    try:
        for _ in range(2):
            w = np.linalg.solve(A - shift * np.eye(d), v)
            v = w / np.linalg.norm(w)
    except np.linalg.LinAlgError:
        pass
    return v / np.linalg.norm(v)


def _null_basis(A, lam, m):
    """Orthonormal real basis of ker(A - lam I) of dimension m (repeated eigenvalue)."""
    d = A.shape[0]
    _, _, vh = np.linalg.svd(A.astype(float) - lam * np.eye(d))
    Q = vh[-m:].T
    shift = lam + (1e-13 * max(1.0, abs(lam)))
    try:
        for _ in range(2):
            Q, _r = np.linalg.qr(np.linalg.solve(A - shift * np.eye(d), Q))
    except np.linalg.LinAlgError:
        pass
    return [_sign_fix(Q[:, c]) for c in range(m)]


def _sign_fix(v, tol=1e-15):
    v = np.where(np.abs(v) < tol * np.abs(v).max(), 0.0, v)
    nz = np.flatnonzero(v != 0)
    if nz.size and v[nz[0]] < 0:
        v = -v
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class EigenData:
    """Ordered real eigenstructure of a hyperbolic integer matrix.

    eigenvalues are sorted by modulus; V holds the unit eigenvectors as
    columns and U the dual vectors as rows (U @ V = I).
    """

    A: np.ndarray
    eigenvalues: np.ndarray
    V: np.ndarray
    U: np.ndarray
    d_s: int
    d_u: int
    theta: float
    lam: float
    omega: float
    omega_alt: float

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def v(self, i):
        return self.V[:, i]

    def u(self, i):
        return self.U[i]

    def reconstruct(self) -> np.ndarray:
        return sum(self.eigenvalues[i] * np.outer(self.V[:, i], self.U[i]) for i in range(self.dim))


def _omegas(A):
    A = np.asarray(A, float)
    na = np.linalg.norm(A, 2)
    ninv = np.linalg.norm(np.linalg.inv(A), 2)
    return max(na, 1.0 / ninv), max(na, ninv)


def eigendecompose(aut) -> EigenData:
    """Eigenvalues, unit eigenvectors and dual basis of a hyperbolic matrix.

    Raises:
        NotHyperbolic: an eigenvalue has modulus within 1e-10 of 1.
        ComplexSpectrum: a non-real eigenvalue is present (use block mode).
        DegenerateModuli: two eigenvalues share a modulus.
    """
    if not isinstance(aut, ToralAutomorphism):
        aut = ToralAutomorphism(aut)
    A = aut.A
    d = aut.dim
    ev = np.linalg.eigvals(A.astype(float))
    if np.any(np.abs(np.abs(ev) - 1.0) < HYPERBOLIC_TOL):
        raise NotHyperbolic(f"eigenvalue of modulus 1 in spectrum {ev}")
    if np.any(np.abs(ev.imag) > 1e-9 * np.maximum(1.0, np.abs(ev))):
        raise ComplexSpectrum(f"non-real eigenvalues {ev}; use block_partition")
    ev = ev.real
    cp = charpoly(A)
    ev = np.array([_polish_root(cp, x) for x in ev])
    ev = ev[np.argsort(np.abs(ev), kind="stable")]
    mods = np.abs(ev)
    if np.any(np.diff(mods) <= GROUP_TOL * mods[1:]):
        raise DegenerateModuli(f"eigenvalue moduli are not strictly increasing: {mods}")
    V = np.column_stack([_sign_fix(_unit_null_vector(A, lam).real) for lam in ev])
    U = np.linalg.inv(V)
    d_s = int(np.sum(mods < 1.0))
    d_u = d - d_s
    theta = float(np.linalg.cond(V))
    if d_s == 0 or d_u == 0:
        raise NotHyperbolic("spectrum must contain both stable and unstable directions")
    lam_c = float(max(mods[d_s - 1], 1.0 / mods[d_s]))
    om, om_alt = _omegas(A)
    for arr in (ev, V, U):
        arr.setflags(write=False)
    return EigenData(A=A, eigenvalues=ev, V=V, U=U, d_s=d_s, d_u=d_u, theta=theta,
                     lam=lam_c, omega=om, omega_alt=om_alt)


def hyperbolicity_constants(E: EigenData):
    """(Theta, lambda, Omega) with Omega computed by the literal formula.

    Omega = max(|A|, |A^-1|^-1) in the operator 2-norm; the alternative
    max(|A|, |A^-1|) is available as ``E.omega_alt``.
    """
    return E.theta, E.lam, E.omega


@dataclass(frozen=True)
class BlockData:
    """Partition of the spectrum into modulus-ordered invariant blocks.

    ``W`` is the real basis adapted to the blocks (columns), ``Winv`` its
    inverse; ``blocks[i]`` is the restricted map A_{0,i} in that basis and
    ``projectors[i]`` the projection on V_i along the other blocks.
    """

    A: np.ndarray
    sizes: tuple
    slices: tuple
    eigenvalues: np.ndarray
    W: np.ndarray
    Winv: np.ndarray
    blocks: tuple
    projectors: tuple
    moduli: tuple = field(default=())

    @property
    def k(self) -> int:
        return len(self.sizes)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def modulus_range(self, i):
        m = self.moduli[i]
        return float(min(m)), float(max(m))


def _sorted_spectrum(A):
    ev, vecs = np.linalg.eig(A.astype(float))
    if np.any(np.abs(np.abs(ev) - 1.0) < HYPERBOLIC_TOL):
        raise NotHyperbolic(f"eigenvalue of modulus 1 in spectrum {ev}")
    # modulus first, then real part, then imaginary part (conjugates adjacent)
    keys = np.lexsort((ev.imag, ev.real, np.round(np.abs(ev), 12)))
    return ev[keys], vecs[:, keys]


def block_partition(aut, grouping="auto") -> BlockData:
    """Group eigen-directions into consecutive blocks ordered by modulus.

    Args:
        aut: ToralAutomorphism or integer matrix.
        grouping: "auto" merges eigenvalues whose moduli differ by < 1e-8
            (complex pairs always share a block); otherwise a list of block
            sizes in increasing-modulus order.

    Raises:
        GapViolation: two consecutive blocks share a modulus, or a complex
            pair is split.
    """
    if not isinstance(aut, ToralAutomorphism):
        aut = ToralAutomorphism(aut)
    A = aut.A
    d = aut.dim
    ev, vecs = _sorted_spectrum(A)
    real = np.abs(ev.imag) <= 1e-9 * np.maximum(1.0, np.abs(ev))
    mods = np.abs(ev)

    # columns of the adapted real basis, one or two per eigen-direction
    cols = []
    i = 0
    units = []  # (start, size) of indivisible units
    while i < d:
        if real[i]:
            lam = float(ev[i].real)
            m = 1
            # a double root is only resolved to about sqrt(machine eps)
            while (i + m < d and real[i + m]
                   and abs(ev[i + m].real - lam) < 1e-6 * max(1.0, abs(lam))):
                m += 1
            if m == 1:
                # Newton polish only for simple roots (p' vanishes at repeated ones)
                lam = float(_polish_root(charpoly(A), lam))
                cols.append(_sign_fix(_unit_null_vector(A, lam).real))
            else:
                cols.extend(_null_basis(A, lam, m))
            units.extend((i + c, 1) for c in range(m))
            i += m
        else:
            lam = ev[i] if ev[i].imag > 0 else ev[i + 1]
            v = _unit_null_vector(A, lam)
            # rotate the phase so that Re v and Im v are orthogonal
            a = np.dot(v.real, v.real) - np.dot(v.imag, v.imag)
            b = 2 * np.dot(v.real, v.imag)
            v = v * np.exp(-0.5j * np.arctan2(b, a))
            cols.extend([v.real / np.linalg.norm(v), v.imag / np.linalg.norm(v)])
            units.append((i, 2))
            i += 2

    if isinstance(grouping, str):
        if grouping != "auto":
            raise ValueError(f"unknown grouping {grouping!r}")
        sizes = []
        cur_mod, cur = None, 0
        for start, n in units:
            m = mods[start]
            if cur_mod is not None and abs(m - cur_mod) < GROUP_TOL * max(1.0, m):
                cur += n
            else:
                if cur:
                    sizes.append(cur)
                cur = n
            cur_mod = m
        sizes.append(cur)
    else:
        sizes = [int(s) for s in grouping]
        if sum(sizes) != d or min(sizes) < 1:
            raise GapViolation(f"block sizes {sizes} do not partition dimension {d}")
        cuts = set(np.cumsum(sizes)[:-1].tolist())
        for start, n in units:
            if n == 2 and (start + 1) in cuts:
                raise GapViolation("grouping splits a complex-conjugate pair")

    bounds = np.concatenate(([0], np.cumsum(sizes)))
    slices = tuple(slice(int(bounds[b]), int(bounds[b + 1])) for b in range(len(sizes)))
    moduli = tuple(tuple(float(x) for x in mods[s]) for s in slices)
    for b in range(len(sizes) - 1):
        hi, lo = max(moduli[b]), min(moduli[b + 1])
        if not hi < lo - GROUP_TOL * max(1.0, lo):
            raise GapViolation(
                f"blocks {b} and {b + 1} are not separated in modulus ({hi:.6g} vs {lo:.6g})")

    W = np.column_stack(cols)
    Winv = np.linalg.inv(W)
    T = Winv @ A.astype(float) @ W
    blocks = []
    for b, s in enumerate(slices):
        off = T[s].copy()
        off[:, s] = 0.0
        if np.abs(off).max(initial=0.0) > 1e-8 * max(1.0, np.abs(T).max()):
            raise GapViolation("adapted basis does not block-diagonalise A")
        blk = T[s, s].copy()
        blk.setflags(write=False)
        blocks.append(blk)
    projectors = tuple(W[:, s] @ Winv[s, :] for s in slices)
    return BlockData(A=A, sizes=tuple(sizes), slices=slices, eigenvalues=ev, W=W, Winv=Winv,
                     blocks=tuple(blocks), projectors=projectors, moduli=moduli)

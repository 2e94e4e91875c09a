"""One-dimensional quadrature rules, polynomial bases and shape matrices.

All rules live on the unit interval [0, 1]. Shape matrices are stored
row-major with the quadrature index as the row, so ``S[q, j]`` is the value
of basis function ``j`` in quadrature point ``q``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

NEWTON_TOL = 1e-15
NEWTON_MAX_ITER = 100


class BasisKind(str, enum.Enum):
    LAGRANGE_GAUSS_LOBATTO = "lagrange_gauss_lobatto"
    LAGRANGE_GAUSS = "lagrange_gauss"
    HERMITE_LIKE = "hermite_like"


class FaceAccess(str, enum.Enum):
    NODAL_ON_FACES = "nodal_on_faces"
    HERMITE_TYPE_BASIS = "hermite_type_basis"
    GENERIC = "generic"


class UnsupportedBasisError(ValueError):
    pass


@dataclass(frozen=True)
class Quadrature1D:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or len(pts) == 0:
            raise ValueError("quadrature needs at least one point")
        if np.any(np.diff(pts) <= 0) or pts[0] < 0 or pts[-1] > 1:
            raise ValueError("quadrature points must be strictly increasing in [0, 1]")
        if np.max(np.abs(pts + pts[::-1] - 1.0)) > 1e-14:
            raise ValueError("quadrature must be symmetric about 0.5")

    @property
    def n(self) -> int:
        return len(self.points)


def _legendre(n: int, x: np.ndarray):
    """P_n(x) and P_{n-1}(x) on [-1, 1] by the three-term recurrence."""
    p_prev = np.ones_like(x)
    if n == 0:
        return p_prev, np.zeros_like(x)
    p = x.copy()
    for m in range(2, n + 1):
        p_prev, p = p, ((2 * m - 1) * x * p - (m - 1) * p_prev) / m
    return p, p_prev


def _symmetrize(x: np.ndarray) -> np.ndarray:
    # make the reference-interval nodes exactly antisymmetric about 0
    n = len(x)
    out = np.empty(n)
    for i in range(n // 2):
        t = 0.5 * (x[n - 1 - i] - x[i])
        out[i], out[n - 1 - i] = -t, t
    if n % 2:
        out[n // 2] = 0.0
    return out


def _to_unit(x: np.ndarray, w: np.ndarray) -> Quadrature1D:
    pts = 0.5 * (1.0 + x)
    # exact mirror after the affine map
    n = len(pts)
    for i in range(n // 2):
        pts[n - 1 - i] = 1.0 - pts[i]
    if n % 2:
        pts[n // 2] = 0.5
    ws = 0.5 * w
    ws = 0.5 * (ws + ws[::-1])
    return Quadrature1D(pts, ws)


def gauss_quadrature(n: int) -> Quadrature1D:
    """Gauss-Legendre rule with ``n`` points, exact up to degree ``2n - 1``."""
    if n < 1:
        raise ValueError(f"Gauss quadrature needs n >= 1, got {n}")
    x = np.cos(np.pi * (np.arange(n) + 0.75) / (n + 0.5))[::-1].copy()
    for _ in range(NEWTON_MAX_ITER):
        p, p_prev = _legendre(n, x)
        dp = n * (x * p - p_prev) / (x * x - 1.0)
        dx = p / dp
        x -= dx
        if np.max(np.abs(dx)) < NEWTON_TOL:
            break
    x = _symmetrize(np.sort(x))
    p, p_prev = _legendre(n, x)
    dp = n * (x * p - p_prev) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    return _to_unit(x, w)


def gauss_lobatto_quadrature(n: int) -> Quadrature1D:
    """Gauss-Lobatto-Legendre rule with endpoints, exact up to degree ``2n - 3``."""
    if n < 2:
        raise ValueError(f"Gauss-Lobatto quadrature needs n >= 2, got {n}")
    N = n - 1
    x = -np.cos(np.pi * np.arange(n) / N)
    for _ in range(NEWTON_MAX_ITER):
        p, p_prev = _legendre(N, x)
        dx = (x * p - p_prev) / (n * p)
        x = x - dx
        if np.max(np.abs(dx)) < NEWTON_TOL:
            break
    x[0], x[-1] = -1.0, 1.0
    x = _symmetrize(x)
    p, _ = _legendre(N, x)
    w = 2.0 / (N * n * p * p)
    return _to_unit(x, w)


def lagrange_values(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Matrix ``L[q, j] = l_j(x_q)`` of Lagrange polynomials on ``nodes``."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = len(nodes)
    out = np.ones((len(x), k))
    for j in range(k):
        for m in range(k):
            if m != j:
                out[:, j] *= (x - nodes[m]) / (nodes[j] - nodes[m])
    return out


def lagrange_derivatives(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = len(nodes)
    out = np.zeros((len(x), k))
    for j in range(k):
        for m in range(k):
            if m == j:
                continue
            term = np.full(len(x), 1.0 / (nodes[j] - nodes[m]))
            for n in range(k):
                if n != j and n != m:
                    term *= (x - nodes[n]) / (nodes[j] - nodes[n])
            out[:, j] += term
    return out


def _shifted_legendre_table(n: int, x: np.ndarray):
    """Values and derivatives of P_0..P_{n-1}(2x - 1), columns by degree."""
    t = 2.0 * np.asarray(x, dtype=float) - 1.0
    vals = np.zeros((len(t), n))
    ders = np.zeros((len(t), n))
    for m in range(n):
        c = np.zeros(m + 1)
        c[m] = 1.0
        vals[:, m] = np.polynomial.legendre.legval(t, c)
        ders[:, m] = 2.0 * np.polynomial.legendre.legval(t, np.polynomial.legendre.legder(c))
    return vals, ders


@dataclass(frozen=True)
class Basis1D:
    """Polynomial basis of degree ``p`` with ``k = p + 1`` functions on [0, 1]."""

    kind: BasisKind
    degree: int
    nodes: np.ndarray = field(repr=False)
    _coeffs: np.ndarray | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.degree + 1

    @property
    def face_access(self) -> FaceAccess:
        if self.kind is BasisKind.LAGRANGE_GAUSS_LOBATTO:
            return FaceAccess.NODAL_ON_FACES
        if self.kind is BasisKind.HERMITE_LIKE:
            return FaceAccess.HERMITE_TYPE_BASIS
        return FaceAccess.GENERIC

    def values(self, x) -> np.ndarray:
        if self._coeffs is None:
            return lagrange_values(self.nodes, x)
        vals, _ = _shifted_legendre_table(self.k, np.atleast_1d(x))
        return vals @ self._coeffs

    def derivatives(self, x) -> np.ndarray:
        if self._coeffs is None:
            return lagrange_derivatives(self.nodes, x)
        _, ders = _shifted_legendre_table(self.k, np.atleast_1d(x))
        return ders @ self._coeffs


def _hermite_coefficients(k: int) -> np.ndarray:
    # functionals: value(0), d/dx(0), interior values, -d/dx(1), value(1)
    n_inner = k - 4
    inner = 0.5 * (1.0 - np.cos((2 * np.arange(n_inner) + 1) * np.pi / (2 * n_inner))) if n_inner else np.zeros(0)
    inner = np.sort(inner)
    v0, d0 = _shifted_legendre_table(k, np.array([0.0]))
    v1, d1 = _shifted_legendre_table(k, np.array([1.0]))
    vi, _ = _shifted_legendre_table(k, inner)
    V = np.vstack([v0, d0, vi, -d1, v1])
    return np.linalg.solve(V, np.eye(k))


def make_basis(kind, degree: int) -> Basis1D:
    kind = BasisKind(kind)
    if degree < 0:
        raise ValueError("degree must be non-negative")
    k = degree + 1
    if kind is BasisKind.LAGRANGE_GAUSS_LOBATTO:
        if degree < 1:
            raise ValueError("Gauss-Lobatto basis needs degree >= 1")
        return Basis1D(kind, degree, gauss_lobatto_quadrature(k).points)
    if kind is BasisKind.LAGRANGE_GAUSS:
        return Basis1D(kind, degree, gauss_quadrature(k).points)
    if degree < 3:
        raise UnsupportedBasisError(f"Hermite-like basis needs degree >= 3, got {degree}")
    return Basis1D(kind, degree, np.zeros(0), _hermite_coefficients(k))


@dataclass(frozen=True)
class EvenOddMatrix:
    """Even-odd packed form of an ``l x k`` matrix with mirror symmetry.

    ``sign = +1`` means ``M[l-1-q, k-1-j] = M[q, j]`` (values), ``sign = -1``
    the skew case (derivatives). ``upper`` keeps the unique rows verbatim so
    the full matrix can be rebuilt bit for bit; ``even``/``odd`` (and the
    ``mid_*`` pieces for odd sizes) are the coefficients used by the kernel.
    """

    n_rows: int
    n_cols: int
    sign: int
    upper: np.ndarray
    even: np.ndarray
    odd: np.ndarray
    mid_col: np.ndarray | None
    mid_row: np.ndarray | None
    mid_entry: float

    def full(self) -> np.ndarray:
        l, k = self.n_rows, self.n_cols
        M = np.empty((l, k))
        nu = self.upper.shape[0]
        M[:nu] = self.upper
        for q in range(nu, l):
            M[q] = self.sign * self.upper[l - 1 - q, ::-1]
        return M


def is_mirror_symmetric(M: np.ndarray, sign: int, tol: float = 1e-12) -> bool:
    scale = max(1.0, float(np.max(np.abs(M))))
    return bool(np.max(np.abs(M - sign * M[::-1, ::-1])) <= tol * scale)


def pack_even_odd(M: np.ndarray, sign: int, tol: float = 1e-12) -> EvenOddMatrix:
    M = np.asarray(M, dtype=float)
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if not is_mirror_symmetric(M, sign, tol):
        raise UnsupportedBasisError("matrix lacks the mirror symmetry needed for even-odd")
    l, k = M.shape
    hl, hk = l // 2, k // 2
    a = M[:hl, :hk]
    b = M[:hl, ::-1][:, :hk]
    even = 0.5 * (a + b)
    odd = 0.5 * (a - b)
    mid_col = M[:hl, hk].copy() if k % 2 else None
    if l % 2:
        # middle output row only sees the even (values) or odd (skew) half
        mid_row = M[hl, :hk].copy()
        mid_entry = float(M[hl, hk]) if (k % 2 and sign == 1) else 0.0
    else:
        mid_row, mid_entry = None, 0.0
    upper = M[: l - hl].copy()
    return EvenOddMatrix(l, k, sign, upper, even, odd, mid_col, mid_row, mid_entry)


def _mirror_average(M: np.ndarray, sign: int) -> np.ndarray:
    return 0.5 * (M + sign * M[::-1, ::-1])


@dataclass(frozen=True)
class ShapeMatrices1D:
    basis: Basis1D
    quad: Quadrature1D
    S: np.ndarray
    D: np.ndarray
    Dco: np.ndarray
    Sf: np.ndarray
    Df: np.ndarray
    S_eo: EvenOddMatrix = field(repr=False)
    D_eo: EvenOddMatrix = field(repr=False)
    Dco_eo: EvenOddMatrix = field(repr=False)
    # transposed packs are what integration sweeps consume
    St_eo: EvenOddMatrix = field(repr=False)
    Dt_eo: EvenOddMatrix = field(repr=False)
    Dcot_eo: EvenOddMatrix = field(repr=False)

    @property
    def k(self) -> int:
        return self.S.shape[1]

    @property
    def l(self) -> int:
        return self.S.shape[0]

    @property
    def face_access(self) -> FaceAccess:
        return self.basis.face_access

    @cached_property
    def face_columns(self) -> tuple:
        """Nonzero columns of ``S_f`` and ``D_f`` per side, indexed ``[row][side]``."""
        return tuple(tuple(np.flatnonzero(M[s]) for s in (0, 1)) for M in (self.Sf, self.Df))


def shape_matrices(basis: Basis1D, quad: Quadrature1D) -> ShapeMatrices1D:
    k, l = basis.k, quad.n
    if l < k:
        raise ValueError(f"interpolation needs k <= l, got k={k}, l={l}")
    S = _mirror_average(basis.values(quad.points), 1)
    D = _mirror_average(basis.derivatives(quad.points), -1)
    Dco = _mirror_average(lagrange_derivatives(quad.points, quad.points), -1)
    ends = np.array([0.0, 1.0])
    Sf = basis.values(ends)
    Df = basis.derivatives(ends)
    # exact zeros keep the face shortcuts honest
    Sf[np.abs(Sf) < 1e-13] = 0.0
    Df[np.abs(Df) < 1e-11 * max(1.0, np.max(np.abs(Df)))] = 0.0
    return ShapeMatrices1D(
        basis, quad, S, D, Dco, Sf, Df,
        pack_even_odd(S, 1), pack_even_odd(D, -1), pack_even_odd(Dco, -1),
        pack_even_odd(S.T, 1), pack_even_odd(D.T, -1), pack_even_odd(Dco.T, -1),
    )


def inverse_shape(shape: ShapeMatrices1D) -> np.ndarray:
    """Inverse of the square value matrix, used by the inverse mass operator."""
    if shape.k != shape.l:
        raise ValueError("inverse mass needs as many quadrature points as basis functions")
    return _mirror_average(np.linalg.inv(shape.S), 1)

"""Sum-factorized tensor-product kernels vectorized over cells.

Data layout: a field on ``n**d`` points for ``W`` lanes is an array of shape
``(n_{d-1}, ..., n_1, n_0, W)``, i.e. direction 0 runs fastest and the lane
index is the trailing axis. Flattened, point ``(i_0, i_1, i_2)`` of lane ``L``
sits at ``((i_2 * n + i_1) * n + i_0) * W + L``, which is the interleaved
numbering of cell batches. Every kernel works lane-wise; nothing ever mixes
data across the trailing axis.

Counters count vector (lane-batch) instructions per 1D stripe. FLOPs per
lane follow as ``adds + mults + 2 * fmas``.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .basis import EvenOddMatrix, FaceAccess, ShapeMatrices1D, pack_even_odd

PLAIN = "plain"
EVEN_ODD = "even_odd"
LANE_WIDTHS = (1, 2, 4, 8)


def lane_buffer(n_points: int, lanes: int) -> np.ndarray:
    """Zeroed scratch for ``n_points`` lane batches of width ``lanes``."""
    return np.zeros((n_points, lanes))


@dataclass
class KernelCounters:
    adds: int = 0
    mults: int = 0
    fmas: int = 0
    kernel_invocations: int = 0
    by_kind: Counter = field(default_factory=Counter)
    face_values_read: int = 0

    def record_ops(self, n_stripes: int, adds: int, mults: int, fmas: int) -> None:
        self.adds += n_stripes * adds
        self.mults += n_stripes * mults
        self.fmas += n_stripes * fmas

    def record_invocation(self, kind: str, n: int = 1) -> None:
        self.kernel_invocations += n
        self.by_kind[kind] += n

    @property
    def flops_per_lane(self) -> int:
        return self.adds + self.mults + 2 * self.fmas

    def reset(self) -> None:
        self.adds = self.mults = self.fmas = self.kernel_invocations = 0
        self.face_values_read = 0
        self.by_kind.clear()

    def snapshot(self) -> dict:
        return {
            "adds": self.adds,
            "mults": self.mults,
            "fmas": self.fmas,
            "kernel_invocations": self.kernel_invocations,
            **{f"calls_{k}": v for k, v in sorted(self.by_kind.items())},
        }


def plain_stripe_cost(n_out: int, n_in: int) -> tuple[int, int, int]:
    """(adds, mults, fmas) of one dense 1D stripe."""
    return 0, n_out, n_out * (n_in - 1)


def even_odd_stripe_cost(packed: EvenOddMatrix) -> tuple[int, int, int]:
    """(adds, mults, fmas) of one even-odd 1D stripe.

    Each output of the even and odd half products costs one multiplication
    and one FMA per further term; the input split and output recombination
    cost one addition/subtraction per entry pair member.
    """
    l, k = packed.n_rows, packed.n_cols
    hl, hk = l // 2, k // 2
    adds = 2 * hk + 2 * hl
    terms = []
    terms += [hk + (k % 2)] * hl  # even halves, middle column folded in
    terms += [hk] * hl  # odd halves
    if l % 2:
        terms.append(hk + (1 if (k % 2 and packed.sign == 1) else 0))
    mults = sum(1 for t in terms if t > 0)
    fmas = sum(t - 1 for t in terms if t > 0)
    return adds, mults, fmas


def _np_axis(x: np.ndarray, direction: int) -> int:
    return x.ndim - 2 - direction


def _matmul_last(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    # x has the contracted index in axis -2
    return np.matmul(M, x)


def _even_odd_last(p: EvenOddMatrix, x: np.ndarray) -> np.ndarray:
    l, k = p.n_rows, p.n_cols
    hl, hk = l // 2, k // 2
    top = x[..., :hk, :]
    bot = x[..., ::-1, :][..., :hk, :]
    xp = top + bot
    xm = top - bot
    a = np.matmul(p.even, xp)
    b = np.matmul(p.odd, xm)
    if p.mid_col is not None:
        a = a + p.mid_col[:, None] * x[..., hk : hk + 1, :]
    out = np.empty(x.shape[:-2] + (l, x.shape[-1]))
    out[..., :hl, :] = a + b
    rev = (a - b) if p.sign == 1 else (b - a)
    out[..., l - hl :, :] = rev[..., ::-1, :]
    if l % 2:
        src = xp if p.sign == 1 else xm
        mid = np.matmul(p.mid_row[None, :], src)
        if p.sign == 1 and k % 2:
            mid = mid + p.mid_entry * x[..., hk : hk + 1, :]
        out[..., hl : hl + 1, :] = mid
    return out


def apply_1d(
    matrix: np.ndarray,
    x: np.ndarray,
    direction: int,
    *,
    transpose: bool = False,
    form: str = PLAIN,
    packed: EvenOddMatrix | None = None,
    out: np.ndarray | None = None,
    add: bool = False,
    counters: KernelCounters | None = None,
    kind: str | None = "basis_change",
) -> np.ndarray:
    """Apply a 1D matrix along ``direction`` of a lane-batched tensor field.

    ``matrix`` is ``n_out x n_in`` (or its transpose when ``transpose``).
    With ``form="even_odd"`` the mirror-symmetric packed form is used;
    ``packed`` must then describe the matrix actually applied (pass the pack
    of ``matrix.T`` when transposing) or it is built on the spot.
    """
    M = matrix.T if transpose else matrix
    ax = _np_axis(x, direction)
    n_in = x.shape[ax]
    if M.shape[1] != n_in:
        raise ValueError(f"matrix has {M.shape[1]} columns, field has {n_in} entries along direction {direction}")
    # view as (before, n_in, after): a batched matmul contracts the middle index
    before = math.prod(x.shape[:ax])
    xs = x.reshape(before, n_in, -1)
    if form == PLAIN:
        ys = _matmul_last(M, xs)
        cost = plain_stripe_cost(M.shape[0], n_in)
    elif form == EVEN_ODD:
        if packed is None:
            sign = 1 if np.allclose(M, M[::-1, ::-1], atol=1e-12 * max(1.0, np.abs(M).max())) else -1
            packed = pack_even_odd(M, sign)
        if (packed.n_rows, packed.n_cols) != M.shape:
            raise ValueError("packed matrix does not match the applied matrix")
        ys = _even_odd_last(packed, xs)
        cost = even_odd_stripe_cost(packed)
    else:
        raise ValueError(f"unknown matrix form {form!r}")
    y = ys.reshape(x.shape[:ax] + (M.shape[0],) + x.shape[ax + 1 :])
    if counters is not None:
        n_stripes = x.size // (n_in * x.shape[-1])
        counters.record_ops(n_stripes, *cost)
        if kind is not None:
            counters.record_invocation(kind)
    if out is None:
        return y
    if out.shape != y.shape:
        out = out.reshape(y.shape)
    if add:
        out += y
    else:
        out[...] = y
    return out


def _as_matrix(shape, name: str):
    """(matrix, pack, pack of transpose) from shape matrices or a raw matrix."""
    if isinstance(shape, ShapeMatrices1D):
        return getattr(shape, name), getattr(shape, f"{name}_eo"), getattr(shape, f"{name}t_eo")
    M = np.asarray(shape, dtype=float)
    return M, None, None


def _check_size(buf: np.ndarray, n: int, what: str) -> None:
    if buf.shape[0] != n:
        raise ValueError(f"{what} buffer has {buf.shape[0]} entries, expected {n}")


def basis_change(
    d: int,
    interpolate: bool,
    k: int,
    l: int,
    add: bool,
    shape_values,
    inp: np.ndarray,
    out: np.ndarray,
    *,
    form: str = PLAIN,
    counters: KernelCounters | None = None,
) -> np.ndarray:
    """``out (+)= [S x ... x S] inp`` or its transpose for integration.

    ``inp``/``out`` are ``(points, W)`` buffers. ``out`` may alias ``inp``
    when ``k == l``.
    """
    S, S_eo, St_eo = _as_matrix(shape_values, "S")
    if S.shape != (l, k):
        raise ValueError(f"shape matrix is {S.shape}, expected {(l, k)}")
    if k > l:
        raise ValueError("basis change needs k <= l")
    n_in, n_out = (k, l) if interpolate else (l, k)
    _check_size(inp, n_in**d, "input")
    _check_size(out, n_out**d, "output")
    W = inp.shape[-1]
    x = inp.reshape((n_in,) * d + (W,))
    for c in range(d):
        x = apply_1d(
            S, x, c, transpose=not interpolate, form=form,
            packed=S_eo if interpolate else St_eo, counters=counters, kind="basis_change",
        )
    y = x.reshape(n_out**d, W)
    if add:
        out += y
    else:
        out[...] = y
    return out


def collocation_derivative(
    d: int,
    interpolate: bool,
    k: int,
    add: bool,
    shape_derivatives,
    inp: np.ndarray,
    out: np.ndarray,
    *,
    form: str = PLAIN,
    counters: KernelCounters | None = None,
) -> np.ndarray:
    """Unit-cell gradient in collocation space, or its transpose.

    ``interpolate=True`` maps ``k**d`` values to ``d`` stacked gradient
    components (``d * k**d`` rows, component-major). The transpose sums the
    ``d`` input components into one field.
    """
    Dco, Dco_eo, Dcot_eo = _as_matrix(shape_derivatives, "Dco")
    if Dco.shape != (k, k):
        raise ValueError(f"collocation derivative is {Dco.shape}, expected {(k, k)}")
    n = k**d
    W = inp.shape[-1]
    if interpolate:
        _check_size(inp, n, "input")
        _check_size(out, d * n, "output")
        x = inp.reshape((k,) * d + (W,))
        o = out.reshape((d,) + (k,) * d + (W,))
        for c in range(d):
            apply_1d(Dco, x, c, form=form, packed=Dco_eo, out=o[c], add=add, counters=counters, kind="derivative")
    else:
        _check_size(inp, d * n, "input")
        _check_size(out, n, "output")
        x = inp.reshape((d,) + (k,) * d + (W,))
        acc = None
        for c in range(d):
            y = apply_1d(Dco, x[c], c, transpose=True, form=form, packed=Dcot_eo, counters=counters, kind="derivative")
            acc = y if acc is None else acc + y
        y = acc.reshape(n, W)
        if add:
            out += y
        else:
            out[...] = y
    return out


def face_layers(shape: ShapeMatrices1D, side: int, highest_derivative: int, face_access=None) -> np.ndarray:
    """Coefficient layers (normal-direction indices) a face evaluation needs."""
    access = FaceAccess(face_access or shape.face_access)
    k = shape.k
    if access is FaceAccess.GENERIC:
        return np.arange(k)
    used = np.flatnonzero(shape.Sf[side])
    if access is FaceAccess.HERMITE_TYPE_BASIS or highest_derivative > 0:
        used = np.union1d(used, np.flatnonzero(shape.Df[side]))
    return used


def face_normal_interpolation(
    d: int,
    direction: int,
    interpolate: bool,
    k: int,
    highest_derivative: int,
    shape: ShapeMatrices1D,
    side: int,
    inp: np.ndarray,
    out: np.ndarray,
    *,
    add: bool = False,
    counters: KernelCounters | None = None,
) -> np.ndarray:
    """Interpolate values (and normal derivatives) onto the face ``xi_direction = side``.

    Interpolation reads the ``k**d`` cell buffer and writes ``k**(d-1)``
    values followed by ``k**(d-1)`` normal derivatives when
    ``highest_derivative == 1``. Only the layers where ``S_f``/``D_f`` are
    nonzero are touched, in both directions.
    """
    if not 0 <= direction < d:
        raise ValueError(f"face direction {direction} out of range for d={d}")
    if highest_derivative not in (0, 1):
        raise ValueError("highest_derivative must be 0 or 1")
    rows = [shape.Sf[side]] + ([shape.Df[side]] if highest_derivative else [])
    nonzero = shape.face_columns
    nf = k ** (d - 1)
    W = inp.shape[-1]
    # (outer, normal index, inner) view of the cell buffer
    outer = k ** (d - 1 - direction)
    if interpolate:
        _check_size(inp, k**d, "input")
        _check_size(out, len(rows) * nf, "output")
        x = inp.reshape(outer, k, -1)
        o = out.reshape(len(rows), nf, W)
        for r, row in enumerate(rows):
            cols = nonzero[r][side]
            if len(cols):
                acc = row[cols[0]] * x[:, cols[0]]
                for j in cols[1:]:
                    acc += row[j] * x[:, j]
                acc = acc.reshape(nf, W)
            else:
                acc = np.zeros((nf, W))
            if add:
                o[r] += acc
            else:
                o[r] = acc
            if counters is not None:
                counters.record_ops(nf, 0, 1 if len(cols) else 0, max(len(cols) - 1, 0))
                counters.record_invocation("face_normal")
    else:
        _check_size(inp, len(rows) * nf, "input")
        _check_size(out, k**d, "output")
        x = inp.reshape(len(rows), outer, -1)
        o = out.reshape(outer, k, -1)
        if not add:
            o[...] = 0.0
        for r, row in enumerate(rows):
            cols = nonzero[r][side]
            for j in cols:
                o[:, j] += row[j] * x[r]
            if counters is not None:
                counters.record_ops(nf, 0, len(cols), 0)
                counters.record_invocation("face_normal")
    return out


QPointOp = Callable[[np.ndarray, tuple], np.ndarray]


def untiled_cell_laplacian(
    shape: ShapeMatrices1D,
    qpoint_op: QPointOp,
    inp: np.ndarray,
    out: np.ndarray,
    *,
    add: bool = False,
    form: str = PLAIN,
    counters: KernelCounters | None = None,
) -> np.ndarray:
    """Reference sequence: basis change, gradient, q-point op, transposes."""
    k, l = shape.k, shape.l
    d = 3
    W = inp.shape[-1]
    vq = np.empty((l**d, W))
    basis_change(d, True, k, l, False, shape, inp, vq, form=form, counters=counters)
    grad = np.empty((d * l**d, W))
    collocation_derivative(d, True, l, False, shape, vq, grad, form=form, counters=counters)
    g = grad.reshape((d,) + (l,) * d + (W,))
    flux = qpoint_op(g, (slice(None),) * d)
    collocation_derivative(d, False, l, False, shape, flux.reshape(d * l**d, W), vq, form=form, counters=counters)
    basis_change(d, False, k, l, add, shape, vq, out, form=form, counters=counters)
    return out


def tiled_cell_laplacian(
    shape: ShapeMatrices1D,
    qpoint_op: QPointOp,
    inp: np.ndarray,
    out: np.ndarray,
    *,
    add: bool = False,
    form: str = PLAIN,
    counters: KernelCounters | None = None,
) -> np.ndarray:
    """Cell Laplacian in 3D with the z-layer loop tiling of sum factorization.

    ``qpoint_op(grad, index)`` receives the three reference-gradient
    components on the quadrature points selected by ``index`` (an index into
    the ``(z, y, x)`` grid) and returns the flux to be tested by gradients.
    Requires ``k == l``.
    """
    k, l = shape.k, shape.l
    if k != l:
        raise ValueError("tiled kernel assumes as many quadrature points as basis functions")
    W = inp.shape[-1]
    _check_size(inp, k**3, "input")
    _check_size(out, k**3, "output")
    S, Dco = shape.S, shape.Dco
    kw = dict(form=form, counters=counters, kind=None)

    def line(M, v, transpose=False):
        pk = None
        if form == EVEN_ODD:
            pk = {
                (id(S), False): shape.S_eo, (id(S), True): shape.St_eo,
                (id(Dco), False): shape.Dco_eo, (id(Dco), True): shape.Dcot_eo,
            }[(id(M), transpose)]
        return apply_1d(M, v, 0, transpose=transpose, packed=pk, **kw)

    def plane(M, v, direction, transpose=False):
        pk = None
        if form == EVEN_ODD:
            pk = {
                (id(S), False): shape.S_eo, (id(S), True): shape.St_eo,
                (id(Dco), False): shape.Dco_eo, (id(Dco), True): shape.Dcot_eo,
            }[(id(M), transpose)]
        return apply_1d(M, v, direction, transpose=transpose, packed=pk, **kw)

    u = inp.reshape(k, k, k, W).copy()
    # S_1 along x and S_2 along y, one z layer at a time
    for iz in range(k):
        u[iz] = plane(S, plane(S, u[iz], 0), 1)
    gz = np.empty_like(u)
    # S_3 and D_3^co along z lines
    for iy in range(k):
        for ix in range(k):
            zl = line(S, u[:, iy, ix, :])
            u[:, iy, ix, :] = zl
            gz[:, iy, ix, :] = line(Dco, zl)
    res = np.empty_like(u)
    tz = np.empty_like(u)
    for iz in range(k):
        gy = plane(Dco, u[iz], 1)
        ty = np.empty_like(gy)
        for iy in range(k):
            gx = line(Dco, u[iz, iy])
            grad = np.stack([gx, gy[iy], gz[iz, iy]])
            flux = qpoint_op(grad, (iz, iy, slice(None)))
            res[iz, iy] = line(Dco, flux[0], True)
            ty[iy] = flux[1]
            tz[iz, iy] = flux[2]
        res[iz] += plane(Dco, ty, 1, True)
    for iy in range(k):
        for ix in range(k):
            zl = res[:, iy, ix, :] + line(Dco, tz[:, iy, ix, :], True)
            res[:, iy, ix, :] = line(S, zl, True)
    for iz in range(k):
        res[iz] = plane(S, plane(S, res[iz], 1, True), 0, True)
    if counters is not None:
        # every logical sweep through the cell is one tensor-product kernel
        counters.record_invocation("basis_change", 6)
        counters.record_invocation("derivative", 6)
    y = res.reshape(k**3, W)
    if add:
        out += y
    else:
        out[...] = y
    return out

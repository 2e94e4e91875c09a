"""Geometry factors at quadrature points and the quadrature-point operations.

Cell data comes in five representations:

* ``g1``: mapping support points only; x and J are evaluated per apply with
  tensor kernels,
* ``g2``: quadrature point coordinates; J via the collocation derivative,
* ``g3``: inverse transposed Jacobian and JxW per quadrature point,
* ``g4``: the fully merged coefficient per quadrature point,
* ``cartesian``: one inverse Jacobian and determinant per cell.

Face data (JxW, normal, ``j_n``, coordinates) is always precomputed.
Lane-batched arrays keep quadrature points before the trailing lane axis.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .basis import Quadrature1D, ShapeMatrices1D, lagrange_derivatives, lagrange_values
from .mesh import InvalidMeshError, Mesh
from .tensor_kernels import apply_1d, collocation_derivative

MASS = "mass"
INVERSE_MASS = "inverse_mass"
ADVECTION = "advection"
LAPLACIAN = "laplacian"
EQUATIONS = (MASS, INVERSE_MASS, ADVECTION, LAPLACIAN)


class GeometryVariant(str, enum.Enum):
    G1 = "g1"
    G2 = "g2"
    G3 = "g3"
    G4 = "g4"
    CARTESIAN = "cartesian"


def doubles_per_qpoint(variant, equation: str, d: int) -> int:
    """Stored doubles per cell quadrature point (coefficient coordinates excluded)."""
    v = GeometryVariant(variant)
    if v is GeometryVariant.G2:
        return d
    if v is GeometryVariant.G3:
        return d * d + 1
    if v is GeometryVariant.G4:
        if equation == LAPLACIAN:
            return d * (d + 1) // 2
        if equation == ADVECTION:
            return d
        return 1
    return 0


def reference_points(quad: Quadrature1D, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor points (direction 0 fastest) and weights on the unit cell."""
    q = quad.points
    grids = np.meshgrid(*([q] * d), indexing="ij")
    pts = np.stack([g.ravel(order="F") for g in grids], axis=-1)
    wgrids = np.meshgrid(*([quad.weights] * d), indexing="ij")
    w = np.prod(np.stack([g.ravel(order="F") for g in wgrids], axis=-1), axis=-1)
    return pts, w


def face_reference_points(quad: Quadrature1D, d: int, face_number: int) -> np.ndarray:
    """Cell reference coordinates of the face points, tangential direction ascending, first fastest."""
    c, side = divmod(face_number, 2)
    tp, _ = reference_points(quad, d - 1) if d > 1 else (np.zeros((1, 0)), None)
    pts = np.empty((len(tp), d))
    tang = [t for t in range(d) if t != c]
    pts[:, tang] = tp
    pts[:, c] = float(side)
    return pts


def face_weights(quad: Quadrature1D, d: int) -> np.ndarray:
    return reference_points(quad, d - 1)[1]


def pack_symmetric(T: np.ndarray) -> np.ndarray:
    """``(..., d, d)`` symmetric tensors to ``(..., d(d+1)/2)`` upper triangles."""
    d = T.shape[-1]
    iu = np.triu_indices(d)
    return T[..., iu[0], iu[1]]


def unpack_symmetric(P: np.ndarray, d: int, axis: int = 0) -> np.ndarray:
    """Inverse of :func:`pack_symmetric` with the packed index on ``axis``; result gets ``(d, d)`` in front."""
    P = np.moveaxis(P, axis, 0)
    out = np.empty((d, d) + P.shape[1:])
    for n, (i, j) in enumerate(zip(*np.triu_indices(d))):
        out[i, j] = P[n]
        out[j, i] = P[n]
    return out


def _inv_and_det(J: np.ndarray):
    """``J`` with the ``(d, d)`` indices leading; returns (J^{-T}, det) with the same layout."""
    Jm = np.moveaxis(J, (0, 1), (-2, -1))
    det = np.linalg.det(Jm)
    invT = np.swapaxes(np.linalg.inv(Jm), -1, -2)
    return np.moveaxis(invT, (-2, -1), (0, 1)), det


@dataclass
class CellBatchGeometry:
    """Lane-batched cell geometry: what the quadrature-point operation needs."""

    inv_jac_t: np.ndarray | None = None  # (d, d, nq|1, W)
    jxw: np.ndarray | None = None  # (nq, W)
    coefficient: np.ndarray | None = None  # G4: (npack|d|1, nq, W)
    points: np.ndarray | None = None  # (d, nq, W), coefficient evaluation


@dataclass
class GeometryCache:
    mesh: Mesh
    quad: Quadrature1D
    shape: ShapeMatrices1D
    variant: GeometryVariant
    equation: str
    velocity: object = None
    ref_points: np.ndarray = field(default=None, repr=False)
    weights: np.ndarray = field(default=None, repr=False)
    cell_data: dict = field(default_factory=dict, repr=False)
    face_data: dict = field(default_factory=dict, repr=False)
    cell_volume: np.ndarray = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.mesh.d

    @property
    def n_qpoints(self) -> int:
        return self.quad.n**self.d

    # ---- cell data per lane batch -------------------------------------
    def cell_batch(self, cells: np.ndarray) -> CellBatchGeometry:
        d, v = self.d, self.variant
        cd = self.cell_data
        if v is GeometryVariant.G4:
            g = CellBatchGeometry(coefficient=np.moveaxis(cd["coefficient"][cells], 0, -1))
            if self.equation in (MASS, INVERSE_MASS):
                g.jxw = g.coefficient[0]
            return g
        if v is GeometryVariant.G3:
            g = CellBatchGeometry(
                inv_jac_t=np.moveaxis(cd["inv_jac_t"][cells], 0, -1),
                jxw=np.moveaxis(cd["jxw"][cells], 0, -1),
            )
            if "points" in cd:
                g.points = np.moveaxis(cd["points"][cells], 0, -1)
            return g
        if v is GeometryVariant.CARTESIAN:
            g = CellBatchGeometry(
                inv_jac_t=np.moveaxis(cd["inv_jac_t"][cells], 0, -1)[:, :, None, :],
                jxw=self.weights[:, None] * cd["det"][cells][None, :],
            )
            if "points" in cd:
                g.points = np.moveaxis(cd["points"][cells], 0, -1)
            return g
        if v is GeometryVariant.G2:
            x = np.moveaxis(cd["points"][cells], 0, -1)  # (d, nq, W)
            return self._from_qpoint_coordinates(x)
        return self._from_support_points(np.moveaxis(cd["support"][cells], 0, -1))

    def _from_qpoint_coordinates(self, x: np.ndarray) -> CellBatchGeometry:
        d, l = self.d, self.quad.n
        nq, W = x.shape[1], x.shape[2]
        J = np.empty((d, d, nq, W))
        grad = np.empty((d * nq, W))
        for a in range(d):
            collocation_derivative(d, True, l, False, self.shape.Dco, x[a], grad)
            J[a] = grad.reshape(d, nq, W)
        invT, det = _inv_and_det(J)
        return CellBatchGeometry(inv_jac_t=invT, jxw=det * self.weights[:, None], points=x)

    def _from_support_points(self, X: np.ndarray) -> CellBatchGeometry:
        d, l = self.d, self.quad.n
        Sm, Dm = self.cell_data["map_S"], self.cell_data["map_D"]
        m1 = Sm.shape[1]
        W = X.shape[-1]
        nq = l**d
        x = np.empty((d, nq, W))
        J = np.empty((d, d, nq, W))
        for a in range(d):
            base = X[a].reshape((m1,) * d + (W,))
            v = base
            for c in range(d):
                v = apply_1d(Sm, v, c)
            x[a] = v.reshape(nq, W)
            for b in range(d):
                v = base
                for c in range(d):
                    v = apply_1d(Dm if c == b else Sm, v, c)
                J[a, b] = v.reshape(nq, W)
        invT, det = _inv_and_det(J)
        return CellBatchGeometry(inv_jac_t=invT, jxw=det * self.weights[:, None], points=x)

    # ---- face data per lane batch -------------------------------------
    def face_batch(self, face_ids: np.ndarray) -> dict:
        """Face arrays for the lanes, each shaped ``(..., nfq, W)``."""
        out = {}
        for key, arr in self.face_data.items():
            sel = arr[face_ids]
            out[key] = np.moveaxis(sel, 0, -1)
        return out

    # ---- byte model -----------------------------------------------------
    def cell_doubles(self) -> int:
        """Modeled doubles of stored cell geometry (coefficient coordinates excluded)."""
        d, nq = self.d, self.n_qpoints
        v = self.variant
        if v is GeometryVariant.G1:
            return self.mesh.n_cells * self.cell_data["support"].shape[2] * d
        if v is GeometryVariant.CARTESIAN:
            return self.mesh.n_cells * (d * d + 1)
        return self.mesh.n_cells * nq * doubles_per_qpoint(v, self.equation, d)

    def coefficient_doubles(self) -> int:
        if "points" in self.cell_data and self.variant is not GeometryVariant.G2:
            return int(self.cell_data["points"].size)
        return 0

    def face_doubles(self) -> int:
        return int(sum(a.size for k, a in self.face_data.items() if k != "tau"))


def qpoint_jacobians(mesh: Mesh, quad: Quadrature1D):
    pts, w = reference_points(quad, mesh.d)
    cells = np.arange(mesh.n_cells)
    J = mesh.jacobians(cells, pts)  # (nc, nq, d, d)
    det = np.linalg.det(J)
    if np.min(det) <= 0:
        raise InvalidMeshError("non-positive Jacobian determinant at a quadrature point")
    return pts, w, J, det


def precompute_geometry(mesh: Mesh, quad: Quadrature1D, shape: ShapeMatrices1D, variant,
                        equation: str = LAPLACIAN, velocity=None, penalty_degree: int | None = None) -> GeometryCache:
    """Fill cell data for ``variant`` and the face data.

    ``velocity`` maps points ``(..., d)`` to vectors ``(..., d)`` and is needed
    for advection. ``penalty_degree`` is the polynomial degree in the
    interior penalty factor.
    """
    variant = GeometryVariant(variant)
    d = mesh.d
    l = quad.n
    pts, w, J, det = qpoint_jacobians(mesh, quad)
    cache = GeometryCache(mesh, quad, shape, variant, equation, velocity, pts, w)
    cells = np.arange(mesh.n_cells)
    cache.cell_volume = (det * w).sum(axis=1)
    Jt = np.moveaxis(J, (2, 3), (1, 2))  # (nc, d, d, nq)
    invT, _ = _inv_and_det(np.moveaxis(Jt, 0, -1))
    invT = np.moveaxis(invT, -1, 0)  # (nc, d, d, nq)
    jxw = det * w
    need_points = equation == ADVECTION
    x = np.moveaxis(mesh.map_points(cells, pts), 1, 2) if need_points or variant is GeometryVariant.G2 else None
    cd = cache.cell_data
    if variant is GeometryVariant.G1:
        if mesh.mapping_degree + 1 > l:
            raise ValueError("support-point evaluation needs at least m+1 quadrature points")
        cd["support"] = np.moveaxis(mesh.support_points, 1, 2).copy()  # (nc, d, (m+1)^d)
        cd["map_S"] = lagrange_values(mesh.support_nodes, quad.points)
        cd["map_D"] = lagrange_derivatives(mesh.support_nodes, quad.points)
    elif variant is GeometryVariant.G2:
        if mesh.mapping_degree > l - 1:
            raise ValueError(
                f"mapping degree {mesh.mapping_degree} is not representable on {l} quadrature points per direction"
            )
        cd["points"] = x
    elif variant is GeometryVariant.G3:
        cd["inv_jac_t"] = invT
        cd["jxw"] = jxw
        if need_points:
            cd["points"] = x
    elif variant is GeometryVariant.CARTESIAN:
        if not mesh.is_cartesian:
            raise ValueError("compressed Cartesian geometry needs an axis-aligned mesh")
        cd["inv_jac_t"] = invT[:, :, :, 0].copy()
        cd["det"] = det[:, 0].copy()
        if need_points:
            cd["points"] = x
    else:
        invJ = np.swapaxes(invT, 1, 2)
        if equation == LAPLACIAN:
            T = np.einsum("cabq,cebq->caeq", invJ, invJ) * jxw[:, None, None, :]
            coef = np.moveaxis(pack_symmetric(np.moveaxis(T, 3, 1)), 2, 1)  # (nc, npack, nq)
        elif equation == ADVECTION:
            vel = np.moveaxis(velocity(np.moveaxis(x, 1, 2)), 2, 1)  # (nc, d, nq)
            coef = np.einsum("cabq,cbq->caq", invJ, vel) * jxw[:, None, :]
        else:
            coef = jxw[:, None, :]
        cd["coefficient"] = coef
    _precompute_faces(cache, J_cells=None, penalty_degree=penalty_degree if penalty_degree is not None else shape.k - 1)
    return cache


def _precompute_faces(cache: GeometryCache, J_cells=None, penalty_degree: int = 1) -> None:
    mesh, quad = cache.mesh, cache.quad
    d = mesh.d
    faces = mesh.faces()
    nf = len(faces)
    wf = face_weights(quad, d)
    nfq = len(wf)
    jxw = np.empty((nf, nfq))
    normal = np.empty((nf, d, nfq))
    jn_m = np.empty((nf, d, nfq))
    jn_p = np.zeros((nf, d, nfq))
    xf = np.empty((nf, d, nfq))
    tau = np.empty(nf)
    ref = [face_reference_points(quad, d, f) for f in range(2 * d)]
    for i, face in enumerate(faces):
        fm = face.interior_face_number
        c, side = divmod(fm, 2)
        Jm = mesh.jacobians(face.interior_cell, ref[fm])[0]  # (nfq, d, d)
        invT = np.linalg.inv(Jm).transpose(0, 2, 1)
        e = np.zeros(d)
        e[c] = 1.0 if side else -1.0
        nvec = invT @ e
        norm = np.linalg.norm(nvec, axis=1)
        n = nvec / norm[:, None]
        h = np.linalg.det(Jm) * norm
        jxw[i] = h * wf
        normal[i] = n.T
        xf[i] = mesh.map_points(face.interior_cell, ref[fm])[0].T
        order = [t for t in range(d) if t != c] + [c]
        jm = np.einsum("qba,qb->qa", invT, n)  # J^{-1} n
        jn_m[i] = jm[:, order].T
        area = jxw[i].sum()
        if face.is_boundary:
            tau[i] = (penalty_degree + 1) ** 2 * area / cache.cell_volume[face.interior_cell]
        else:
            fp = face.exterior_face_number
            cp = fp // 2
            Jp = mesh.jacobians(face.exterior_cell, ref[fp])[0]
            invTp = np.linalg.inv(Jp).transpose(0, 2, 1)
            jp = np.einsum("qba,qb->qa", invTp, n)
            order_p = [t for t in range(d) if t != cp] + [cp]
            jn_p[i] = jp[:, order_p].T
            tau[i] = (penalty_degree + 1) ** 2 * 0.5 * (
                area / cache.cell_volume[face.interior_cell] + area / cache.cell_volume[face.exterior_cell]
            )
    cache.face_data = {"jxw": jxw, "normal": normal, "jn_minus": jn_m, "jn_plus": jn_p, "points": xf, "tau": tau}


# ---- quadrature point operations ------------------------------------------

def cell_integrand(equation: str, geo: CellBatchGeometry, value=None, grad=None, velocity=None):
    """Integrand at cell quadrature points.

    Returns ``(value_flux, gradient_flux)``: the factor tested by the basis
    functions and the reference-coordinate vector tested by their gradients.
    Advection returns ``J^{-1} c u JxW``; the weak form's sign is left to the
    caller.
    """
    if equation in (MASS, INVERSE_MASS):
        return value * geo.jxw, None
    if equation == ADVECTION:
        if geo.coefficient is not None:
            return None, geo.coefficient * value[None]
        c = velocity(np.moveaxis(geo.points, 0, -1))  # (nq, W, d)
        c = np.moveaxis(c, -1, 0)
        cu = c * (value * geo.jxw)[None]
        # J^{-1} = (J^{-T})^T
        return None, np.einsum("ba...,b...->a...", geo.inv_jac_t, cu)
    if equation == LAPLACIAN:
        if geo.coefficient is not None:
            d = grad.shape[0]
            T = unpack_symmetric(geo.coefficient, d)
            return None, np.einsum("ab...,b...->a...", T, grad)
        phys = np.einsum("ab...,b...->a...", geo.inv_jac_t, grad)
        return None, np.einsum("ba...,b...->a...", geo.inv_jac_t, phys * geo.jxw[None])
    raise ValueError(f"unknown equation {equation!r}")


def advection_face_flux(c_n, u_minus, u_plus, jxw):
    """Upwind (local Lax-Friedrichs) flux times the area element, as seen from the ``-`` side."""
    return (c_n * 0.5 * (u_minus + u_plus) + 0.5 * np.abs(c_n) * (u_minus - u_plus)) * jxw


def advection_boundary_flux(c_n, u_minus, jxw):
    """Mirror rule with homogeneous data: ``u+ = -u-``."""
    return np.abs(c_n) * u_minus * jxw


def laplace_face_terms(u_minus, u_plus, dn_minus, dn_plus, tau, jxw):
    """SIP terms on an interior face.

    Returns ``(value_minus, normal_test)``: the ``+`` side's value
    coefficient is ``-value_minus``; both sides test their normal
    derivative (along ``n-``) with ``normal_test``.
    """
    jump = u_minus - u_plus
    avg = 0.5 * (dn_minus + dn_plus)
    return (tau * jump - avg) * jxw, -0.5 * jump * jxw


def laplace_boundary_terms(u_minus, dn_minus, tau, jxw):
    """Mirror rule ``u+ = -u-``, ``grad u+ = grad u-``."""
    return (2.0 * tau * u_minus - dn_minus) * jxw, -u_minus * jxw

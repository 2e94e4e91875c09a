"""Matrix-free DG operators: mass, inverse mass, upwind advection, SIP Laplacian."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .basis import (
    BasisKind,
    ShapeMatrices1D,
    UnsupportedBasisError,
    gauss_quadrature,
    inverse_shape,
    make_basis,
    shape_matrices,
)
from .dof_layout import (
    DofAccess,
    FaceInfoBatch,
    GhostedVector,
    RankLayout,
    VectorState,
    batch_faces,
    build_dof_layout,
    face_layer_dofs,
    gather_cell,
    read_face_dofs,
)
from .geometry import (
    ADVECTION,
    EQUATIONS,
    INVERSE_MASS,
    LAPLACIAN,
    MASS,
    CellBatchGeometry,
    GeometryCache,
    GeometryVariant,
    advection_boundary_flux,
    advection_face_flux,
    cell_integrand,
    laplace_boundary_terms,
    laplace_face_terms,
    precompute_geometry,
    reference_points,
)
from .ghost_exchange import GhostExchanger, Needed, ThreadTransport, build_exchange_plans, run_ranks
from .mesh import Mesh, Partition, assign_face_owners, make_partition
from .tensor_kernels import (
    PLAIN,
    KernelCounters,
    basis_change,
    collocation_derivative,
    face_layers,
    face_normal_interpolation,
    tiled_cell_laplacian,
)


def default_velocity(x: np.ndarray) -> np.ndarray:
    d = x.shape[-1]
    c = np.array([1.0, 0.5, 0.25][:d])
    return np.broadcast_to(c, x.shape).copy()


def default_basis(equation: str, degree: int) -> BasisKind:
    if equation == LAPLACIAN and degree >= 3:
        return BasisKind.HERMITE_LIKE
    return BasisKind.LAGRANGE_GAUSS_LOBATTO


@dataclass
class OperatorConfig:
    equation: str
    degree: int
    geometry: GeometryVariant | str = GeometryVariant.G3
    lanes: int = 4
    basis: BasisKind | str | None = None
    n_quad: int | None = None
    velocity: Callable | None = None
    form: str = PLAIN
    slim_exchange: bool = True
    tiled: bool = False

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise ValueError(f"unknown equation {self.equation!r}")
        if self.degree < 1:
            raise ValueError("polynomial degree must be at least 1")
        self.geometry = GeometryVariant(self.geometry)
        self.basis = BasisKind(self.basis) if self.basis is not None else default_basis(self.equation, self.degree)
        if self.basis is BasisKind.HERMITE_LIKE and self.degree < 3:
            raise UnsupportedBasisError("the Hermite-like basis needs degree >= 3")
        if self.n_quad is None:
            self.n_quad = self.degree + 1
        if self.equation == INVERSE_MASS and self.n_quad != self.degree + 1:
            raise ValueError("the inverse mass operator needs as many quadrature points as basis functions")
        if self.velocity is None:
            self.velocity = default_velocity
        if self.lanes < 1:
            raise ValueError("lane width must be positive")

    @property
    def highest_derivative(self) -> int:
        return 1 if self.equation == LAPLACIAN else 0

    @property
    def needed(self) -> Needed:
        if self.equation == ADVECTION:
            return Needed.VALUES
        if self.equation == LAPLACIAN:
            return Needed.VALUES_AND_FIRST_DERIVATIVES
        return Needed.NONE


@dataclass
class CellBatchData:
    cells: np.ndarray
    access: DofAccess
    geometry: CellBatchGeometry | None  # None: computed during apply


@dataclass
class FaceSide:
    access: DofAccess
    face_number: int
    layer_dofs: np.ndarray
    jn: np.ndarray  # (d, nfq, W), tangential first


@dataclass
class FaceBatchData:
    info: FaceInfoBatch
    sides: list
    jxw: np.ndarray
    tau: np.ndarray
    c_n: np.ndarray | None
    points: np.ndarray
    needs_ghosts: bool


class DistributedVector:
    """Owned+ghost vectors of all ranks; the solver sees the owned parts concatenated."""

    def __init__(self, parts: list[GhostedVector]):
        self.parts = parts

    @property
    def size(self) -> int:
        return sum(p.layout.n_owned for p in self.parts)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.owned for p in self.parts])

    def set_flat(self, x: np.ndarray) -> None:
        i = 0
        for p in self.parts:
            n = p.layout.n_owned
            p.owned[:] = x[i : i + n]
            i += n


class RankOperator:
    def __init__(self, op: "MatrixFreeOperator", layout: RankLayout, faces_here: np.ndarray):
        self.op = op
        self.layout = layout
        self.counters = KernelCounters()
        cfg, geo = op.config, op.geometry
        W = cfg.lanes
        precomputed = geo.variant in (GeometryVariant.G3, GeometryVariant.G4, GeometryVariant.CARTESIAN)
        self.cell_batches = []
        batch_of = {}
        for b, cells in enumerate(layout.cell_batches):
            acc = layout.access(cells)
            g = geo.cell_batch(acc.cells) if precomputed else None
            self.cell_batches.append(CellBatchData(acc.cells, acc, g))
            for c in cells:
                batch_of[int(c)] = b
        self.face_batches = []
        if cfg.equation in (ADVECTION, LAPLACIAN):
            mesh = op.mesh
            raw = mesh.faces()
            for info in batch_faces(raw, list(faces_here), W):
                self.face_batches.append(self._face_batch(info))
        # interleaved schedule: a face batch runs right after the last cell batch it needs
        ready = []
        for i, fb in enumerate(self.face_batches):
            cells = [c for s in fb.sides for c in s.access.cells[: s.access.n_filled]]
            owned = [batch_of[int(c)] for c in cells if int(c) in batch_of]
            ready.append((max(owned), i))
        ready.sort()
        self.schedule = []
        j = 0
        for b in range(len(self.cell_batches)):
            self.schedule.append(("cell", b))
            while j < len(ready) and ready[j][0] == b:
                self.schedule.append(("face", ready[j][1]))
                j += 1

    def _face_batch(self, info: FaceInfoBatch) -> FaceBatchData:
        op, cfg = self.op, self.op.config
        d, k, W = op.mesh.d, op.shape.k, cfg.lanes
        nf = info.n_lanes_filled
        ids = np.empty(W, dtype=int)
        ids[:nf] = info.face_ids
        ids[nf:] = info.face_ids[0]
        fd = op.geometry.face_batch(ids)
        hd = cfg.highest_derivative
        sides = []
        numbers = [info.interior_face_number] + ([] if info.is_boundary else [info.exterior_face_number])
        cell_rows = [info.interior_cell_numbers, info.exterior_cell_numbers]
        jn = [fd["jn_minus"], fd["jn_plus"]]
        for s, fn in enumerate(numbers):
            acc = self.layout.access(cell_rows[s][:nf])
            layers = face_layers(op.shape, fn % 2, hd)
            sides.append(FaceSide(acc, fn, face_layer_dofs(d, k, fn, layers), jn[s]))
        c_n = None
        if cfg.equation == ADVECTION:
            c = cfg.velocity(np.moveaxis(fd["points"], 0, -1))
            c_n = np.einsum("qwa,aqw->qw", c, fd["normal"])
        return FaceBatchData(info, sides, fd["jxw"], fd["tau"][None, :], c_n, fd["points"],
                             any(s.access.touches_ghosts for s in sides))

    # ---- cell work ------------------------------------------------------
    def cell_geometry(self, cb: CellBatchData) -> CellBatchGeometry:
        return cb.geometry if cb.geometry is not None else self.op.geometry.cell_batch(cb.cells)

    def apply_cell_batch(self, cb: CellBatchData, u: GhostedVector, y: GhostedVector) -> None:
        op, cfg = self.op, self.op.config
        d, k, l = op.mesh.d, op.shape.k, op.shape.l
        form, cnt = cfg.form, self.counters
        W = cfg.lanes
        x = gather_cell(u, cb.access, k**d)
        geo = self.cell_geometry(cb)
        out = np.empty((k**d, W))
        eq = cfg.equation
        if eq == INVERSE_MASS:
            t = np.empty((l**d, W))
            basis_change(d, False, k, l, False, op.inverse_S, x, t, form=form, counters=cnt)
            t /= geo.jxw
            basis_change(d, True, k, l, False, op.inverse_S, t, out, form=form, counters=cnt)
        elif eq == LAPLACIAN and cfg.tiled and d == 3 and k == l:
            def qop(grad, index):
                return cell_integrand(LAPLACIAN, _slice_geometry(geo, index, l, d), grad=grad)[1]
            tiled_cell_laplacian(op.shape, qop, x, out, form=form, counters=cnt)
        else:
            vq = np.empty((l**d, W))
            basis_change(d, True, k, l, False, op.shape, x, vq, form=form, counters=cnt)
            if eq == MASS:
                vq *= geo.jxw
            else:
                grad = None
                if eq == LAPLACIAN:
                    g = np.empty((d * l**d, W))
                    collocation_derivative(d, True, l, False, op.shape, vq, g, form=form, counters=cnt)
                    grad = g.reshape(d, l**d, W)
                _, flux = cell_integrand(eq, geo, value=vq, grad=grad, velocity=cfg.velocity)
                if eq == ADVECTION:
                    flux = -flux
                collocation_derivative(d, False, l, False, op.shape, flux.reshape(d * l**d, W), vq,
                                       form=form, counters=cnt)
            basis_change(d, False, k, l, False, op.shape, vq, out, form=form, counters=cnt)
        cb.access.scatter(y.data, out, add=False)

    # ---- face work ------------------------------------------------------
    def _evaluate_side(self, side: FaceSide, u: GhostedVector):
        """Face values and, for the Laplacian, the normal derivative along n-."""
        op, cfg = self.op, self.op.config
        d, k, l = op.mesh.d, op.shape.k, op.shape.l
        form, cnt, W = cfg.form, self.counters, cfg.lanes
        hd = cfg.highest_derivative
        nfk, nfq = k ** (d - 1), l ** (d - 1)
        buf = read_face_dofs(u, side.access, side.layer_dofs, k**d, cnt)
        fv = np.empty(((1 + hd) * nfk, W))
        face_normal_interpolation(d, side.face_number // 2, True, k, hd, op.shape, side.face_number % 2,
                                  buf, fv, counters=cnt)
        val = np.empty((nfq, W))
        basis_change(d - 1, True, k, l, False, op.shape, fv[:nfk], val, form=form, counters=cnt)
        if not hd:
            return val, None
        dn_ref = np.empty((nfq, W))
        basis_change(d - 1, True, k, l, False, op.shape, fv[nfk:], dn_ref, form=form, counters=cnt)
        tang = np.empty(((d - 1) * nfq, W))
        collocation_derivative(d - 1, True, l, False, op.shape, val, tang, form=form, counters=cnt)
        tang = tang.reshape(d - 1, nfq, W)
        dn = dn_ref * side.jn[d - 1] + (side.jn[: d - 1] * tang).sum(axis=0)
        return val, dn

    def _integrate_side(self, side: FaceSide, value_coef, normal_coef, y: GhostedVector) -> None:
        op, cfg = self.op, self.op.config
        d, k, l = op.mesh.d, op.shape.k, op.shape.l
        form, cnt, W = cfg.form, self.counters, cfg.lanes
        hd = cfg.highest_derivative
        nfk, nfq = k ** (d - 1), l ** (d - 1)
        tv = value_coef
        if hd:
            tg = (normal_coef[None] * side.jn[: d - 1]).reshape((d - 1) * nfq, W)
            tv = tv.copy()
            collocation_derivative(d - 1, False, l, True, op.shape, tg, tv, form=form, counters=cnt)
        fv = np.empty(((1 + hd) * nfk, W))
        basis_change(d - 1, False, k, l, False, op.shape, tv, fv[:nfk], form=form, counters=cnt)
        if hd:
            basis_change(d - 1, False, k, l, False, op.shape, normal_coef * side.jn[d - 1], fv[nfk:],
                         form=form, counters=cnt)
        cell = np.empty((k**d, W))
        face_normal_interpolation(d, side.face_number // 2, False, k, hd, op.shape, side.face_number % 2,
                                  fv, cell, counters=cnt)
        side.access.scatter(y.data, cell[side.layer_dofs], dofs=side.layer_dofs, add=True)
        if side.access.touches_ghosts:
            y.state = VectorState.HAS_REMOTE_CONTRIBUTIONS

    def apply_face_batch(self, fb: FaceBatchData, u: GhostedVector, y: GhostedVector) -> None:
        eq = self.op.config.equation
        if fb.info.is_boundary:
            s = fb.sides[0]
            um, dnm = self._evaluate_side(s, u)
            if eq == ADVECTION:
                self._integrate_side(s, advection_boundary_flux(fb.c_n, um, fb.jxw), None, y)
            else:
                vc, nc = laplace_boundary_terms(um, dnm, fb.tau, fb.jxw)
                self._integrate_side(s, vc, nc, y)
            return
        sm, sp = fb.sides
        um, dnm = self._evaluate_side(sm, u)
        up, dnp = self._evaluate_side(sp, u)
        if eq == ADVECTION:
            flux = advection_face_flux(fb.c_n, um, up, fb.jxw)
            self._integrate_side(sm, flux, None, y)
            self._integrate_side(sp, -flux, None, y)
        else:
            vc, nc = laplace_face_terms(um, up, dnm, dnp, fb.tau, fb.jxw)
            self._integrate_side(sm, vc, nc, y)
            self._integrate_side(sp, -vc, nc, y)

    # ---- full loop ------------------------------------------------------
    def apply(self, u: GhostedVector, y: GhostedVector, exchanger: GhostExchanger) -> None:
        exchanger.start_update(u)
        received = False
        for kind, i in self.schedule:
            if kind == "cell":
                self.apply_cell_batch(self.cell_batches[i], u, y)
                continue
            fb = self.face_batches[i]
            if fb.needs_ghosts and not received:
                exchanger.finish_update(u)
                received = True
            self.apply_face_batch(fb, u, y)
        if not received:
            exchanger.finish_update(u)
        exchanger.compress(y)
        u.reset_ghosts()


def _slice_geometry(geo: CellBatchGeometry, index, l: int, d: int) -> CellBatchGeometry:
    """Restrict lane-batched cell geometry to a sub-grid of quadrature points."""
    def cut(a, lead):
        if a is None or a.shape[lead] == 1:
            return a  # one entry per cell broadcasts
        grid = a.reshape(a.shape[:lead] + (l,) * d + a.shape[-1:])
        return grid[(slice(None),) * lead + tuple(index)]

    return CellBatchGeometry(
        inv_jac_t=cut(geo.inv_jac_t, 2),
        jxw=cut(geo.jxw, 0),
        coefficient=cut(geo.coefficient, 1),
    )


class MatrixFreeOperator:
    """Operator on a mesh distributed over ``n_ranks`` simulated ranks."""

    def __init__(self, mesh: Mesh, config: OperatorConfig, partition: Partition | None = None,
                 n_ranks: int = 1, geometry: GeometryCache | None = None):
        self.mesh = mesh
        self.config = config
        k = config.degree + 1
        self.basis = make_basis(config.basis, config.degree)
        self.quad = gauss_quadrature(config.n_quad)
        self.shape: ShapeMatrices1D = shape_matrices(self.basis, self.quad)
        self.inverse_S = inverse_shape(self.shape) if config.equation == INVERSE_MASS else None
        self.geometry = geometry or precompute_geometry(
            mesh, self.quad, self.shape, config.geometry, config.equation, config.velocity, config.degree
        )
        if partition is None:
            partition = make_partition(mesh, n_ranks)
        elif partition.face_owner is None:
            partition = assign_face_owners(mesh, partition)
        self.partition = partition
        self.n_ranks = partition.n_ranks
        self.layouts = build_dof_layout(mesh, partition, k, config.lanes)
        self.plans = build_exchange_plans(mesh, partition, self.layouts, self.shape, config.needed,
                                          slim=config.slim_exchange)
        self.transport = ThreadTransport(self.n_ranks)
        self.ranks = [RankOperator(self, lay, partition.faces_of(r)) for r, lay in enumerate(self.layouts)]
        self.n_dofs = mesh.n_cells * k**mesh.d
        perm = np.concatenate([lay.owned_natural_indices() for lay in self.layouts])
        self._flat_to_natural = perm

    # ---- vectors ----------------------------------------------------------
    def create_vector(self) -> DistributedVector:
        return DistributedVector([GhostedVector.zeros(lay) for lay in self.layouts])

    def from_natural(self, x: np.ndarray) -> DistributedVector:
        v = self.create_vector()
        v.set_flat(np.asarray(x, dtype=float)[self._flat_to_natural])
        return v

    def to_natural(self, v: DistributedVector) -> np.ndarray:
        out = np.empty(self.n_dofs)
        out[self._flat_to_natural] = v.flat()
        return out

    def flat_to_natural(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(self.n_dofs)
        out[self._flat_to_natural] = x
        return out

    def natural_to_flat(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self._flat_to_natural]

    # ---- application ------------------------------------------------------
    def apply(self, u: DistributedVector, y: DistributedVector | None = None) -> DistributedVector:
        if y is None:
            y = self.create_vector()
        exchangers = [GhostExchanger(p, self.transport) for p in self.plans]

        def work(r):
            self.ranks[r].apply(u.parts[r], y.parts[r], exchangers[r])

        run_ranks(work, self.n_ranks)
        return y

    def matvec(self, x: np.ndarray) -> np.ndarray:
        u = self.create_vector()
        u.set_flat(x)
        return self.apply(u).flat()

    def apply_natural(self, x: np.ndarray) -> np.ndarray:
        return self.to_natural(self.apply(self.from_natural(x)))

    # ---- bookkeeping ------------------------------------------------------
    @property
    def counters(self) -> KernelCounters:
        total = KernelCounters()
        for r in self.ranks:
            c = r.counters
            total.adds += c.adds
            total.mults += c.mults
            total.fmas += c.fmas
            total.kernel_invocations += c.kernel_invocations
            total.by_kind.update(c.by_kind)
            total.face_values_read += c.face_values_read
        return total

    def reset_counters(self) -> None:
        for r in self.ranks:
            r.counters.reset()
        self.transport.reset_counters()

    # ---- right-hand side ----------------------------------------------------
    def assemble_rhs(self, forcing=None, dirichlet=None) -> DistributedVector:
        """Cell forcing plus Dirichlet data moved to the right-hand side by the mirror rule."""
        mesh, cfg = self.mesh, self.config
        d, k, l = mesh.d, self.shape.k, self.shape.l
        W = cfg.lanes
        pts, w = reference_points(self.quad, d)
        rhs = self.create_vector()
        for r, ro in enumerate(self.ranks):
            y = rhs.parts[r]
            for cb in ro.cell_batches:
                out = np.zeros((k**d, W))
                if forcing is not None:
                    x = mesh.map_points(cb.cells, pts)  # (W, nq, d)
                    det = np.linalg.det(mesh.jacobians(cb.cells, pts))
                    t = (forcing(x) * det * w[None, :]).T
                    basis_change(d, False, k, l, False, self.shape, np.ascontiguousarray(t), out)
                cb.access.scatter(y.data, out, add=False)
            if dirichlet is None or cfg.equation not in (ADVECTION, LAPLACIAN):
                continue
            for fb in ro.face_batches:
                if not fb.info.is_boundary:
                    continue
                g = dirichlet(np.moveaxis(fb.points, 0, -1))
                s = fb.sides[0]
                if cfg.equation == ADVECTION:
                    ro._integrate_side(s, (np.abs(fb.c_n) - fb.c_n) * g * fb.jxw, None, y)
                else:
                    ro._integrate_side(s, 2.0 * fb.tau * g * fb.jxw, -g * fb.jxw, y)
        return rhs

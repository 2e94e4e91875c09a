"""Structured quad/hex meshes, face enumeration and rank partitioning."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .basis import gauss_lobatto_quadrature, lagrange_derivatives, lagrange_values

INVALID_CELL = 2**32 - 1
UNIFORM_SUBFACE = 255


class InvalidMeshError(ValueError):
    pass


@dataclass(frozen=True)
class PolynomialDeformation:
    """Sine bump ``x = y + a * L * prod_i sin(pi z_i)`` interpolated at degree ``m`` per cell."""

    degree: int = 2
    amplitude: float = 0.1

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("mapping degree must be >= 1")
        if not 0 <= self.amplitude <= 0.1:
            raise ValueError("deformation amplitude must lie in [0, 0.1]")


CARTESIAN = "cartesian"


@dataclass(frozen=True)
class RawFace:
    interior_cell: int
    exterior_cell: int | None
    interior_face_number: int
    exterior_face_number: int  # face number, or boundary id on boundary faces
    is_boundary: bool
    orientation: int = 0
    subface_index: int = UNIFORM_SUBFACE

    @property
    def direction(self) -> int:
        return self.interior_face_number // 2


@dataclass
class Mesh:
    d: int
    cells_per_dim: tuple[int, ...]
    lower: np.ndarray
    upper: np.ndarray
    mapping: object
    periodic: tuple[bool, ...]
    boundary_ids: tuple[int, ...]
    support_points: np.ndarray = field(repr=False)  # (n_cells, (m+1)**d, d)
    support_nodes: np.ndarray = field(repr=False)  # 1D reference nodes
    _faces: list | None = field(default=None, repr=False)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells_per_dim))

    @property
    def is_cartesian(self) -> bool:
        return self.mapping == CARTESIAN

    @property
    def mapping_degree(self) -> int:
        return len(self.support_nodes) - 1

    @property
    def cell_size(self) -> np.ndarray:
        return (self.upper - self.lower) / np.array(self.cells_per_dim)

    def cell_index(self, idx) -> int:
        c, stride = 0, 1
        for i, n in zip(idx, self.cells_per_dim):
            c += i * stride
            stride *= n
        return c

    def cell_multi_index(self, cell: int) -> tuple[int, ...]:
        out = []
        for n in self.cells_per_dim:
            out.append(cell % n)
            cell //= n
        return tuple(out)

    def _tensor_eval(self, cells, xi, derivative_dir=None):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        cells = np.atleast_1d(cells)
        nodes = self.support_nodes
        m1 = len(nodes)
        # per-direction 1D factors, shape (n_points, m1)
        factors = []
        for c in range(self.d):
            if c == derivative_dir:
                factors.append(lagrange_derivatives(nodes, xi[:, c]))
            else:
                factors.append(lagrange_values(nodes, xi[:, c]))
        phi = factors[0]
        for c in range(1, self.d):
            # support point index runs with direction 0 fastest
            phi = (factors[c][:, :, None] * phi[:, None, :]).reshape(len(xi), -1)
        X = self.support_points[cells]  # (nc, m1**d, d)
        assert phi.shape[1] == m1**self.d
        return np.einsum("ps,csa->cpa", phi, X)

    def map_points(self, cells, xi) -> np.ndarray:
        """Physical coordinates, shape ``(n_cells, n_points, d)``."""
        return self._tensor_eval(cells, xi)

    def jacobians(self, cells, xi) -> np.ndarray:
        """``J[c, p, a, b] = d x_a / d xi_b`` at the given reference points."""
        cols = [self._tensor_eval(cells, xi, b) for b in range(self.d)]
        return np.stack(cols, axis=-1)

    def faces(self) -> list[RawFace]:
        if self._faces is None:
            self._faces = enumerate_faces(self)
        return self._faces


def _deform(y: np.ndarray, lower, upper, amplitude: float) -> np.ndarray:
    L = upper - lower
    z = (y - lower) / L
    bump = np.prod(np.sin(np.pi * z), axis=-1, keepdims=True)
    return y + amplitude * L * bump


def build_mesh(
    d: int,
    cells_per_dim,
    extent=None,
    mapping=CARTESIAN,
    periodic=None,
    boundary_ids=None,
) -> Mesh:
    """Structured box mesh with lexicographic cells (direction 0 fastest).

    ``extent`` is ``(lower, upper)`` corners (default unit box). ``mapping`` is
    ``"cartesian"`` or a :class:`PolynomialDeformation`. Sides carry boundary
    id ``2 * direction + side`` unless ``boundary_ids`` overrides them.
    """
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    if isinstance(cells_per_dim, int):
        cells_per_dim = (cells_per_dim,) * d
    cells_per_dim = tuple(int(n) for n in cells_per_dim)
    if len(cells_per_dim) != d or min(cells_per_dim) < 1:
        raise ValueError("need at least one cell per direction")
    if extent is None:
        lower, upper = np.zeros(d), np.ones(d)
    else:
        lower, upper = (np.asarray(e, dtype=float).reshape(d) for e in extent)
    if np.any(upper - lower <= 0):
        raise ValueError("extent must be positive in every direction")
    periodic = tuple(bool(p) for p in (periodic or (False,) * d))
    if len(periodic) != d:
        raise ValueError("one periodic flag per direction expected")
    boundary_ids = tuple(boundary_ids or range(2 * d))
    if mapping != CARTESIAN and not isinstance(mapping, PolynomialDeformation):
        raise ValueError(f"unknown mapping {mapping!r}")

    m = 1 if mapping == CARTESIAN else mapping.degree
    nodes = gauss_lobatto_quadrature(m + 1).points
    n = np.array(cells_per_dim)
    h = (upper - lower) / n
    # reference support point grid, direction 0 fastest
    grids = np.meshgrid(*([nodes] * d), indexing="ij")
    ref = np.stack([g.ravel(order="F") for g in grids], axis=-1)
    n_cells = int(np.prod(n))
    pts = np.empty((n_cells, len(ref), d))
    for cell in range(n_cells):
        idx, rem = [], cell
        for nc in cells_per_dim:
            idx.append(rem % nc)
            rem //= nc
        y = lower + (np.array(idx) + ref) * h
        pts[cell] = y if mapping == CARTESIAN else _deform(y, lower, upper, mapping.amplitude)
    mesh = Mesh(d, cells_per_dim, lower, upper, mapping, periodic, boundary_ids, pts, nodes)
    if mapping != CARTESIAN:
        check_mapping(mesh)
    return mesh


def check_mapping(mesh: Mesh, n_samples: int = 5) -> None:
    xi1 = np.linspace(0.0, 1.0, n_samples)
    grids = np.meshgrid(*([xi1] * mesh.d), indexing="ij")
    xi = np.stack([g.ravel() for g in grids], axis=-1)
    J = mesh.jacobians(np.arange(mesh.n_cells), xi)
    if np.min(np.linalg.det(J)) <= 0:
        raise InvalidMeshError("mapping is not orientation preserving")


def enumerate_faces(mesh: Mesh) -> list[RawFace]:
    """All faces, interior (incl. periodic) first by direction, then boundary.

    The lower cell index becomes the interior side ``e-``; for a cell that is
    periodic with itself the lower face number wins.
    """
    inner, bdry = [], []
    for c in range(mesh.d):
        n_c = mesh.cells_per_dim[c]
        for cell in range(mesh.n_cells):
            idx = list(mesh.cell_multi_index(cell))
            if idx[c] + 1 < n_c:
                idx[c] += 1
                inner.append(RawFace(cell, mesh.cell_index(idx), 2 * c + 1, 2 * c, False))
            elif mesh.periodic[c]:
                idx[c] = 0
                other = mesh.cell_index(idx)
                # cell at the upper end meets `other` through its right face
                if (other, 2 * c) <= (cell, 2 * c + 1):
                    inner.append(RawFace(other, cell, 2 * c, 2 * c + 1, False))
                else:
                    inner.append(RawFace(cell, other, 2 * c + 1, 2 * c, False))
            else:
                bdry.append(RawFace(cell, None, 2 * c + 1, mesh.boundary_ids[2 * c + 1], True))
            idx = list(mesh.cell_multi_index(cell))
            if idx[c] == 0 and not mesh.periodic[c]:
                bdry.append(RawFace(cell, None, 2 * c, mesh.boundary_ids[2 * c], True))
    bdry.sort(key=lambda f: (f.interior_face_number, f.interior_cell))
    return inner + bdry


@dataclass
class Partition:
    n_ranks: int
    cell_owner: np.ndarray
    face_owner: np.ndarray | None = None
    ghost_cells: list | None = None

    def owned_cells(self, rank: int) -> np.ndarray:
        return np.flatnonzero(self.cell_owner == rank)

    def faces_of(self, rank: int) -> np.ndarray:
        return np.flatnonzero(self.face_owner == rank)

    @classmethod
    def from_owners(cls, owners, n_ranks: int | None = None) -> "Partition":
        owners = np.asarray(owners, dtype=int)
        n = int(owners.max()) + 1 if n_ranks is None else n_ranks
        return cls(n, owners)


def partition_cells(mesh: Mesh, n_ranks: int) -> Partition:
    """Contiguous lexicographic slabs whose sizes differ by at most one."""
    if n_ranks < 1:
        raise ValueError("need at least one rank")
    if n_ranks > mesh.n_cells:
        raise ValueError(f"{n_ranks} ranks for {mesh.n_cells} cells")
    base, extra = divmod(mesh.n_cells, n_ranks)
    sizes = [base + (1 if r < extra else 0) for r in range(n_ranks)]
    owners = np.repeat(np.arange(n_ranks), sizes)
    return Partition(n_ranks, owners)


def assign_face_owners(mesh: Mesh, partition: Partition) -> Partition:
    """Decide which rank computes each face and derive the ghost layers.

    Faces on an interface between ranks ``i < j`` are split pairwise. When a
    cell of one rank touches two or more faces of that interface, all of
    them go to the other rank so the cell's data is sent once and used
    several times. The remaining faces go to whichever rank has fewer so
    far, the higher rank on ties.
    """
    faces = mesh.faces()
    owner = partition.cell_owner
    face_owner = np.empty(len(faces), dtype=int)
    shared = defaultdict(list)
    for f, face in enumerate(faces):
        if face.is_boundary:
            face_owner[f] = owner[face.interior_cell]
            continue
        r0, r1 = owner[face.interior_cell], owner[face.exterior_cell]
        if r0 == r1:
            face_owner[f] = r0
        else:
            shared[(min(r0, r1), max(r0, r1))].append(f)
    for (ri, rj), flist in sorted(shared.items()):
        side_cell = {}
        uses = defaultdict(int)
        for f in flist:
            face = faces[f]
            a, b = face.interior_cell, face.exterior_cell
            ci, cj = (a, b) if owner[a] == ri else (b, a)
            side_cell[f] = (ci, cj)
            uses[ci] += 1
            uses[cj] += 1
        count = {ri: 0, rj: 0}
        rest = []
        for f in flist:
            ci, cj = side_cell[f]
            if uses[ci] >= 2:
                face_owner[f] = rj
            elif uses[cj] >= 2:
                face_owner[f] = ri
            else:
                rest.append(f)
                continue
            count[face_owner[f]] += 1
        for f in rest:
            r = ri if count[ri] < count[rj] else rj
            face_owner[f] = r
            count[r] += 1
    ghosts = [set() for _ in range(partition.n_ranks)]
    for f, face in enumerate(faces):
        if face.is_boundary:
            continue
        r = face_owner[f]
        for c in (face.interior_cell, face.exterior_cell):
            if owner[c] != r:
                ghosts[r].add(c)
    partition.face_owner = face_owner
    partition.ghost_cells = [np.array(sorted(g), dtype=int) for g in ghosts]
    return partition


def make_partition(mesh: Mesh, n_ranks: int) -> Partition:
    return assign_face_owners(mesh, partition_cells(mesh, n_ranks))

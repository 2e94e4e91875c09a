"""Interleaved DoF numbering, face batching and ghosted vectors."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .mesh import INVALID_CELL, UNIFORM_SUBFACE, Mesh, Partition


class ContractViolation(RuntimeError):
    """A vector was used in an exchange state that does not allow it."""


class IndexStorage(str, enum.Enum):
    CONTIGUOUS = "contiguous"
    INTERLEAVED_CONTIGUOUS = "interleaved_contiguous"
    INTERLEAVED_CONTIGUOUS_STRIDED = "interleaved_contiguous_strided"
    INTERLEAVED_CONTIGUOUS_MIXED_STRIDES = "interleaved_contiguous_mixed_strides"
    FULL = "full"


class VectorState(str, enum.Enum):
    CLEAN = "clean"
    GHOSTS_VALID = "ghosts_valid"
    HAS_REMOTE_CONTRIBUTIONS = "has_remote_contributions"


@dataclass
class FaceInfoBatch:
    interior_cell_numbers: np.ndarray
    exterior_cell_numbers: np.ndarray
    interior_face_number: int
    exterior_face_number: int
    face_ids: np.ndarray  # global face indices, filled lanes only
    n_lanes_filled: int
    is_boundary: bool
    subface_index: int = UNIFORM_SUBFACE
    face_orientation: int = 0


def batch_faces(faces, face_ids, W: int) -> list[FaceInfoBatch]:
    """Group faces with identical structure into batches of ``W`` lanes.

    Stable sort by (interior face number, exterior face number, subface,
    orientation); boundary and interior faces never share a batch.
    """
    def key(f):
        face = faces[f]
        return (face.is_boundary, face.interior_face_number, face.exterior_face_number,
                face.subface_index, face.orientation)

    ordered = sorted(face_ids, key=key)
    batches = []
    i = 0
    while i < len(ordered):
        kf = key(ordered[i])
        j = i
        while j < len(ordered) and j - i < W and key(ordered[j]) == kf:
            j += 1
        ids = np.array(ordered[i:j], dtype=int)
        inner = np.full(W, INVALID_CELL, dtype=np.int64)
        outer = np.full(W, INVALID_CELL, dtype=np.int64)
        for L, f in enumerate(ids):
            inner[L] = faces[f].interior_cell
            if not faces[f].is_boundary:
                outer[L] = faces[f].exterior_cell
        batches.append(FaceInfoBatch(inner, outer, kf[1], kf[2], ids, len(ids), kf[0], kf[3], kf[4]))
        i = j
    return batches


def classify_index_storage(starts, strides, n_filled: int, W: int) -> IndexStorage:
    starts = np.asarray(starts)
    strides = np.asarray(strides)
    if np.all(strides == 1) and (W == 1 or n_filled == W):
        return IndexStorage.CONTIGUOUS
    if n_filled < W:
        return IndexStorage.INTERLEAVED_CONTIGUOUS_MIXED_STRIDES
    if np.all(strides == W):
        if np.array_equal(starts, starts[0] + np.arange(W)):
            return IndexStorage.INTERLEAVED_CONTIGUOUS
        return IndexStorage.INTERLEAVED_CONTIGUOUS_STRIDED
    return IndexStorage.INTERLEAVED_CONTIGUOUS_MIXED_STRIDES


@dataclass
class DofAccess:
    """Index information for one entity of a batch (a cell batch or one face side)."""

    variant: IndexStorage
    starts: np.ndarray  # (W,), dummy lanes repeat lane 0
    strides: np.ndarray  # (W,)
    n_filled: int
    cells: np.ndarray  # (W,), dummy lanes repeat lane 0
    full_indices: np.ndarray  # (n_dofs, W) generic path
    touches_ghosts: bool

    def indices(self, dofs: np.ndarray, variant: IndexStorage | None = None) -> np.ndarray:
        """Local vector indices of the given cell dofs, shape ``(len(dofs), W)``."""
        v = self.variant if variant is None else variant
        W = len(self.starts)
        col = np.asarray(dofs)[:, None]
        if v is IndexStorage.FULL:
            return self.full_indices[np.asarray(dofs)]
        if v is IndexStorage.INTERLEAVED_CONTIGUOUS:
            return self.starts[0] + col * W + np.arange(W)
        if v is IndexStorage.INTERLEAVED_CONTIGUOUS_STRIDED:
            return self.starts + col * W
        if v is IndexStorage.CONTIGUOUS:
            return self.starts + col
        return self.starts + col * self.strides

    def gather(self, vec: np.ndarray, n_dofs: int, variant: IndexStorage | None = None) -> np.ndarray:
        v = self.variant if variant is None else variant
        W = len(self.starts)
        if v is IndexStorage.INTERLEAVED_CONTIGUOUS:
            s = int(self.starts[0])
            return vec[s : s + n_dofs * W].reshape(n_dofs, W).copy()
        return vec[self.indices(np.arange(n_dofs), v)]

    def scatter(self, vec: np.ndarray, values: np.ndarray, dofs=None, add: bool = False) -> None:
        """Write (or add) ``values`` of the filled lanes; dummy lanes are skipped."""
        nf = self.n_filled
        if dofs is None:
            dofs = np.arange(values.shape[0])
        if self.variant is IndexStorage.INTERLEAVED_CONTIGUOUS and len(dofs) == values.shape[0] == len(self.full_indices):
            W = len(self.starts)
            s = int(self.starts[0])
            block = vec[s : s + len(dofs) * W].reshape(len(dofs), W)
            if add:
                block += values
            else:
                block[...] = values
            return
        idx = self.indices(dofs)[:, :nf]
        if add:
            vec[idx] += values[:, :nf]
        else:
            vec[idx] = values[:, :nf]


@dataclass
class RankLayout:
    rank: int
    d: int
    k: int
    W: int
    owned_cells: np.ndarray
    cell_batches: list  # arrays of global cell ids
    ghost_cells: np.ndarray  # storage order
    start: dict = field(repr=False)
    stride: dict = field(repr=False)
    n_owned: int = 0
    n_local: int = 0
    owner_of_ghost: dict = field(default_factory=dict, repr=False)

    @property
    def dofs_per_cell(self) -> int:
        return self.k**self.d

    def index(self, cell: int, dof) -> np.ndarray:
        return self.start[cell] + np.asarray(dof) * self.stride[cell]

    def is_ghost(self, cell: int) -> bool:
        return cell in self.owner_of_ghost

    def owned_natural_indices(self) -> np.ndarray:
        """Natural (``cell * k**d + dof``) index of every owned local entry."""
        n = self.dofs_per_cell
        out = np.empty(self.n_owned, dtype=np.int64)
        dofs = np.arange(n)
        for c in self.owned_cells:
            out[self.index(c, dofs)] = c * n + dofs
        return out

    def access(self, cells, n_filled: int | None = None) -> DofAccess:
        cells = np.asarray(cells, dtype=np.int64)
        nf = len(cells) if n_filled is None else n_filled
        W = self.W
        lane_cells = np.empty(W, dtype=np.int64)
        lane_cells[:nf] = cells[:nf]
        lane_cells[nf:] = cells[0]
        starts = np.array([self.start[c] for c in lane_cells], dtype=np.int64)
        strides = np.array([self.stride[c] for c in lane_cells], dtype=np.int64)
        variant = classify_index_storage(starts, strides, nf, W)
        full = starts[None, :] + np.arange(self.dofs_per_cell)[:, None] * strides[None, :]
        ghosts = any(self.is_ghost(int(c)) for c in lane_cells[:nf])
        return DofAccess(variant, starts, strides, nf, lane_cells, full, ghosts)


def _owner_batches(cells: np.ndarray, W: int) -> list:
    return [cells[i : i + W] for i in range(0, len(cells), W)]


def build_dof_layout(mesh: Mesh, partition: Partition, k: int, W: int) -> list[RankLayout]:
    """Per-rank numbering: owned cells in batches of ``W``, interleaved within a batch.

    Lane ``L`` of owned batch ``b`` holds dof ``j`` at ``b*W*k^d + j*W_b + L``
    where ``W_b`` is the number of filled lanes. Ghost cells are appended
    in (owner rank, owner-local index) order; a ghost keeps the interleaved
    storage of its owner batch when that whole batch is ghosted, and is
    stored contiguously otherwise.
    """
    if W < 1:
        raise ValueError("lane width must be positive")
    if partition.ghost_cells is None:
        raise ValueError("face owners must be assigned first")
    n = k**mesh.d
    owned = [partition.owned_cells(r) for r in range(partition.n_ranks)]
    batches = [_owner_batches(o, W) for o in owned]
    owner_batch = {}
    for r, bl in enumerate(batches):
        for b, cells in enumerate(bl):
            for c in cells:
                owner_batch[int(c)] = (r, b)
    layouts = []
    for r in range(partition.n_ranks):
        start, stride = {}, {}
        for b, cells in enumerate(batches[r]):
            wb = len(cells)
            for L, c in enumerate(cells):
                start[int(c)] = b * W * n + L
                stride[int(c)] = wb
        n_owned = len(owned[r]) * n
        offset = n_owned
        ghosts = set(int(c) for c in partition.ghost_cells[r])
        ordered = sorted(ghosts, key=lambda c: (partition.cell_owner[c], owner_batch[c][1], c))
        owner_of = {c: int(partition.cell_owner[c]) for c in ordered}
        done = set()
        storage = []
        for c in ordered:
            if c in done:
                continue
            ro, b = owner_batch[c]
            group = [int(x) for x in batches[ro][b]]
            if len(group) > 1 and all(x in ghosts for x in group):
                wb = len(group)
                for L, x in enumerate(group):
                    start[x] = offset + L
                    stride[x] = wb
                    done.add(x)
                    storage.append(x)
                offset += wb * n
            else:
                start[c] = offset
                stride[c] = 1
                done.add(c)
                storage.append(c)
                offset += n
        layouts.append(RankLayout(
            r, mesh.d, k, W, owned[r], batches[r], np.array(storage, dtype=int),
            start, stride, n_owned, offset, owner_of,
        ))
    return layouts


@dataclass
class GhostedVector:
    layout: RankLayout
    data: np.ndarray
    state: VectorState = VectorState.CLEAN

    @classmethod
    def zeros(cls, layout: RankLayout) -> "GhostedVector":
        return cls(layout, np.zeros(layout.n_local))

    @property
    def owned(self) -> np.ndarray:
        return self.data[: self.layout.n_owned]

    @property
    def ghosts(self) -> np.ndarray:
        return self.data[self.layout.n_owned :]

    def __len__(self) -> int:
        return self.layout.n_owned

    def require_ghosts(self, access: DofAccess) -> None:
        if access.touches_ghosts and self.state is not VectorState.GHOSTS_VALID:
            raise ContractViolation("ghost values read before update_ghost_values")

    def reset_ghosts(self) -> None:
        """Drop imported ghost values and return to the clean state."""
        self.ghosts[:] = 0.0
        self.state = VectorState.CLEAN


def read_face_dofs(vec: GhostedVector, access: DofAccess, layer_dofs: np.ndarray,
                   n_dofs: int, counters=None) -> np.ndarray:
    """Gather only ``layer_dofs`` of each lane's cell into a zeroed cell buffer."""
    vec.require_ghosts(access)
    W = len(access.starts)
    buf = np.zeros((n_dofs, W))
    buf[layer_dofs] = vec.data[access.indices(layer_dofs)]
    if counters is not None:
        counters.face_values_read += len(layer_dofs)
    return buf


def gather_cell(vec: GhostedVector, access: DofAccess, n_dofs: int, variant=None) -> np.ndarray:
    vec.require_ghosts(access)
    return access.gather(vec.data, n_dofs, variant)


def face_layer_dofs(d: int, k: int, face_number: int, layers) -> np.ndarray:
    """Cell dof indices whose index in the face-normal direction is in ``layers``."""
    direction = face_number // 2
    idx = np.arange(k**d)
    normal_index = (idx // k**direction) % k
    return idx[np.isin(normal_index, np.asarray(layers))]

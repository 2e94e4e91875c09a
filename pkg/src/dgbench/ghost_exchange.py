"""Ghost value import and remote contribution export between simulated ranks.

Ranks are threads that exchange byte messages over in-order queues. A
message is a little-endian int64 header ``(source rank, kind, count)``
followed by ``count`` float64 values in plan order.
"""
from __future__ import annotations

import enum
import queue
import struct
import threading
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .basis import ShapeMatrices1D
from .dof_layout import ContractViolation, GhostedVector, RankLayout, VectorState, face_layer_dofs
from .mesh import Mesh, Partition
from .tensor_kernels import face_layers

HEADER = struct.Struct("<qqq")
KIND_UPDATE = 1
KIND_COMPRESS = 2


class Needed(str, enum.Enum):
    NONE = "none"
    VALUES = "values"
    VALUES_AND_FIRST_DERIVATIVES = "values_and_first_derivatives"


def encode_message(source: int, kind: int, values: np.ndarray) -> bytes:
    values = np.ascontiguousarray(values, dtype="<f8")
    return HEADER.pack(source, kind, values.size) + values.tobytes()


def decode_message(payload: bytes) -> tuple[int, int, np.ndarray]:
    source, kind, count = HEADER.unpack_from(payload)
    values = np.frombuffer(payload, dtype="<f8", count=count, offset=HEADER.size)
    if values.size != count:
        raise ValueError("truncated message")
    return source, kind, values


@dataclass(frozen=True)
class ExchangeEntry:
    cell: int
    face_number: int
    dofs: np.ndarray = field(compare=False)


@dataclass
class ExchangePlan:
    rank: int
    send: dict  # neighbor -> list[ExchangeEntry] of owned cells
    recv: dict  # neighbor -> list[ExchangeEntry] of ghost cells
    send_index: dict = field(default_factory=dict)
    recv_index: dict = field(default_factory=dict)

    @property
    def neighbors(self) -> list[int]:
        return sorted(set(self.send) | set(self.recv))

    def send_counts(self) -> dict:
        return {n: int(len(v)) for n, v in self.send_index.items()}

    def recv_counts(self) -> dict:
        return {n: int(len(v)) for n, v in self.recv_index.items()}

    def values_per_entry(self) -> list[int]:
        return [len(e.dofs) for entries in self.recv.values() for e in entries]


def build_exchange_plans(mesh: Mesh, partition: Partition, layouts: list[RankLayout],
                         shape: ShapeMatrices1D, needed, slim: bool = True,
                         face_access=None) -> list[ExchangePlan]:
    """One entry per (ghost cell, face) pair; mirrored send lists on the owners.

    Slim plans select only the layers where the face value (and normal
    derivative) rows are nonzero; otherwise whole cells are exchanged.
    """
    needed = Needed(needed)
    faces = mesh.faces()
    d, k = mesh.d, shape.k
    hd = 1 if needed is Needed.VALUES_AND_FIRST_DERIVATIVES else 0
    recv = [defaultdict(dict) for _ in range(partition.n_ranks)]
    if needed is not Needed.NONE:
        for f, face in enumerate(faces):
            if face.is_boundary:
                continue
            r = partition.face_owner[f]
            for cell, fn in ((face.interior_cell, face.interior_face_number),
                             (face.exterior_cell, face.exterior_face_number)):
                o = int(partition.cell_owner[cell])
                if o == r:
                    continue
                if slim:
                    dofs = face_layer_dofs(d, k, fn, face_layers(shape, fn % 2, hd, face_access))
                else:
                    dofs = np.arange(k**d)
                recv[r][o][(cell, fn)] = ExchangeEntry(cell, fn, dofs)
    plans = [ExchangePlan(r, {}, {}) for r in range(partition.n_ranks)]
    for r in range(partition.n_ranks):
        for o, entries in recv[r].items():
            ordered = [entries[key] for key in sorted(entries)]
            plans[r].recv[o] = ordered
            plans[o].send[r] = ordered
    for plan in plans:
        lay = layouts[plan.rank]
        for n, entries in plan.recv.items():
            plan.recv_index[n] = np.concatenate([lay.index(e.cell, e.dofs) for e in entries]).astype(np.int64)
        for n, entries in plan.send.items():
            plan.send_index[n] = np.concatenate([lay.index(e.cell, e.dofs) for e in entries]).astype(np.int64)
    return plans


class ThreadTransport:
    """Reliable in-order point-to-point byte channels between rank threads."""

    def __init__(self, n_ranks: int, timeout: float = 60.0):
        self.n_ranks = n_ranks
        self.timeout = timeout
        self._channels = {(s, t): queue.Queue() for s in range(n_ranks) for t in range(n_ranks) if s != t}
        self._lock = threading.Lock()
        self.values_sent = defaultdict(int)
        self.messages_sent = 0

    def send(self, source: int, dest: int, payload: bytes) -> None:
        with self._lock:
            self.values_sent[(source, dest)] += (len(payload) - HEADER.size) // 8
            self.messages_sent += 1
        self._channels[(source, dest)].put(payload)

    def recv(self, dest: int, source: int) -> bytes:
        try:
            return self._channels[(source, dest)].get(timeout=self.timeout)
        except queue.Empty as exc:
            raise TimeoutError(f"rank {dest} waited too long for rank {source}") from exc

    def reset_counters(self) -> None:
        self.values_sent.clear()
        self.messages_sent = 0


def run_ranks(fn, n_ranks: int) -> list:
    """Run ``fn(rank)`` on one thread per rank; re-raise the first failure."""
    if n_ranks == 1:
        return [fn(0)]
    results = [None] * n_ranks
    errors = [None] * n_ranks

    def target(r):
        try:
            results[r] = fn(r)
        except BaseException as exc:  # noqa: BLE001 - re-raised below
            errors[r] = exc

    threads = [threading.Thread(target=target, args=(r,), name=f"rank-{r}") for r in range(n_ranks)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for e in errors:
        if e is not None:
            raise e
    return results


class GhostExchanger:
    """Per-rank endpoint implementing ghost update and compress."""

    def __init__(self, plan: ExchangePlan, transport: ThreadTransport | None):
        self.plan = plan
        self.transport = transport
        self.rank = plan.rank
        self._pending = False

    def start_update(self, vec: GhostedVector) -> None:
        if vec.state is not VectorState.CLEAN:
            raise ContractViolation(f"update_ghost_values on a vector in state {vec.state.value}")
        for n in sorted(self.plan.send):
            self.transport.send(self.rank, n, encode_message(self.rank, KIND_UPDATE, vec.data[self.plan.send_index[n]]))
        self._pending = True

    def finish_update(self, vec: GhostedVector) -> None:
        if not self._pending:
            raise ContractViolation("finish_update without start_update")
        for n in sorted(self.plan.recv):
            src, kind, values = decode_message(self.transport.recv(self.rank, n))
            idx = self.plan.recv_index[n]
            if src != n or kind != KIND_UPDATE or values.size != idx.size:
                raise RuntimeError(f"unexpected message from rank {src} (kind {kind}, {values.size} values)")
            vec.data[idx] = values
        self._pending = False
        vec.state = VectorState.GHOSTS_VALID

    def update_ghost_values(self, vec: GhostedVector) -> None:
        self.start_update(vec)
        self.finish_update(vec)

    def compress(self, vec: GhostedVector) -> None:
        if vec.state is VectorState.GHOSTS_VALID:
            raise ContractViolation("compress on a vector holding imported ghost values")
        lay = vec.layout
        for n in sorted(self.plan.recv):
            chunks = []
            for e in self.plan.recv[n]:
                idx = lay.index(e.cell, e.dofs)
                chunks.append(vec.data[idx].copy())
                vec.data[idx] = 0.0  # overlapping entries must not be counted twice
            self.transport.send(self.rank, n, encode_message(self.rank, KIND_COMPRESS, np.concatenate(chunks)))
        for n in sorted(self.plan.send):
            src, kind, values = decode_message(self.transport.recv(self.rank, n))
            idx = self.plan.send_index[n]
            if src != n or kind != KIND_COMPRESS or values.size != idx.size:
                raise RuntimeError(f"unexpected message from rank {src} (kind {kind}, {values.size} values)")
            np.add.at(vec.data, idx, values)
        vec.ghosts[:] = 0.0
        vec.state = VectorState.CLEAN

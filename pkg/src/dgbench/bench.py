"""Throughput measurement, FLOP/byte accounting and roofline classification."""
from __future__ import annotations

import csv
import os
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .basis import pack_even_odd
from .geometry import ADVECTION, INVERSE_MASS, LAPLACIAN, MASS
from .mesh import build_mesh
from .operators import MatrixFreeOperator, OperatorConfig
from .tensor_kernels import EVEN_ODD, PLAIN, even_odd_stripe_cost, plain_stripe_cost

CSV_HEADER = (
    "operator", "dim", "degree", "cells", "geometry", "lanes", "ranks",
    "n_dofs", "time_s", "dofs_per_s", "flops", "bytes", "intensity",
)
OPERATOR_NAMES = {"mass": MASS, "invmass": INVERSE_MASS, "advection": ADVECTION, "laplace": LAPLACIAN}
WARMUP_SECONDS = 0.5
MIN_REPS = 5


@dataclass
class BenchRecord:
    operator: str
    dim: int
    degree: int
    cells: int
    geometry: str
    lanes: int
    ranks: int
    n_dofs: int
    time_s: float  # median wall time of one operator application
    dofs_per_s: float
    flops: int
    bytes: int  # modeled, not measured
    intensity: float
    flops_model: int | None = None  # schedule prediction, not written to CSV

    def row(self) -> list:
        return [getattr(self, name) for name in CSV_HEADER]


def _stripe_flops(form: str, n_out: int, n_in: int, packed=None) -> int:
    a, m, f = even_odd_stripe_cost(packed) if form == EVEN_ODD else plain_stripe_cost(n_out, n_in)
    return a + m + 2 * f


def model_flops(op: MatrixFreeOperator) -> int:
    """FLOPs of one application predicted from the per-batch kernel-call schedule.

    Every 1D kernel on an ``n``-point tensor field costs ``n / k`` stripes of
    the per-stripe cost; face-normal kernels cost one multiplication plus
    one FMA per additional nonzero of ``S_f``/``D_f`` per face point.
    """
    cfg, shape = op.config, op.shape
    d, k = op.mesh.d, shape.k
    if k != shape.l:
        raise ValueError("the model assumes as many quadrature points as basis functions")
    form = cfg.form
    W = cfg.lanes
    eq = cfg.equation

    def kernel(name, transpose=False):
        pk = getattr(shape, f"{name}t_eo" if transpose else f"{name}_eo")
        return _stripe_flops(form, k, k, pk)

    cell_pts, face_pts = k**d, k ** (d - 1)
    s_cell = (kernel("S") + kernel("S", True)) * d * cell_pts // k
    if eq == INVERSE_MASS:
        s_cell = 0
        for M in (op.inverse_S, op.inverse_S.T):
            sign = 1 if np.allclose(M, M[::-1, ::-1]) else -1
            s_cell += _stripe_flops(form, k, k, pack_even_odd(M, sign) if form == EVEN_ODD else None) * d * cell_pts // k
    elif eq in (ADVECTION, LAPLACIAN):
        if eq == LAPLACIAN:
            s_cell += kernel("Dco") * d * cell_pts // k
        s_cell += kernel("Dco", True) * d * cell_pts // k
    total = 0
    for ro in op.ranks:
        total += s_cell * len(ro.cell_batches)
        for fb in ro.face_batches:
            for side in fb.sides:
                fn = side.face_number
                rows = [shape.Sf[fn % 2]] + ([shape.Df[fn % 2]] if eq == LAPLACIAN else [])
                nnz = [int(np.count_nonzero(r)) for r in rows]
                # interpolation: mult + fmas; integration: one mult per nonzero
                total += sum(face_pts * (1 + 2 * (n - 1)) for n in nnz if n)
                total += sum(face_pts * n for n in nnz)
                bc = (kernel("S") + kernel("S", True)) * (d - 1) * face_pts // k
                if eq == LAPLACIAN:
                    bc *= 2
                    bc += (kernel("Dco") + kernel("Dco", True)) * (d - 1) * face_pts // k
                total += bc
    return total * W


def modeled_bytes(op: MatrixFreeOperator) -> int:
    """Two vector reads and one write plus stored geometry and face data."""
    g = op.geometry
    doubles = 3 * op.n_dofs + g.cell_doubles() + g.coefficient_doubles()
    if op.config.equation in (ADVECTION, LAPLACIAN):
        doubles += g.face_doubles()
    return 8 * int(doubles)


def time_applies(fn, reps: int = MIN_REPS, warmup: float = WARMUP_SECONDS) -> list[float]:
    """Warm up for ``warmup`` seconds, then time ``reps`` single calls."""
    t0 = time.perf_counter()
    fn()
    while time.perf_counter() - t0 < warmup:
        fn()
    out = []
    for _ in range(max(reps, 1)):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return out


def run_bench(operator: str, dim: int, degree: int, cells: int, geometry: str = "g3", lanes: int = 4,
              ranks: int = 1, reps: int = MIN_REPS, form: str = PLAIN, warmup: float = WARMUP_SECONDS,
              basis=None, seed: int = 0) -> BenchRecord:
    """Warm up, time ``reps`` applications and report the median single-apply time."""
    eq = OPERATOR_NAMES.get(operator, operator)
    mesh = build_mesh(dim, cells)
    cfg = OperatorConfig(eq, degree, geometry=geometry, lanes=lanes, form=form, basis=basis)
    op = MatrixFreeOperator(mesh, cfg, n_ranks=ranks)
    u = op.create_vector()
    u.set_flat(np.random.default_rng(seed).standard_normal(op.n_dofs))
    y = op.create_vector()
    op.reset_counters()
    op.apply(u, y)
    flops = op.counters.flops_per_lane * lanes
    times = time_applies(lambda: op.apply(u, y), reps, warmup)
    t = statistics.median(times)
    nbytes = modeled_bytes(op)
    return BenchRecord(
        operator=operator, dim=dim, degree=degree, cells=mesh.n_cells, geometry=cfg.geometry.value,
        lanes=lanes, ranks=ranks, n_dofs=op.n_dofs, time_s=t, dofs_per_s=op.n_dofs / t,
        flops=int(flops), bytes=nbytes, intensity=flops / nbytes,
        flops_model=model_flops(op) if op.shape.k == op.shape.l else None,
    )


def append_csv(path, records) -> None:
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(r.row())


def read_csv(path) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected CSV header {header}")
        out = []
        for row in reader:
            if not row:
                continue
            vals = dict(zip(CSV_HEADER, row))
            out.append(BenchRecord(
                operator=vals["operator"], dim=int(vals["dim"]), degree=int(vals["degree"]),
                cells=int(vals["cells"]), geometry=vals["geometry"], lanes=int(vals["lanes"]),
                ranks=int(vals["ranks"]), n_dofs=int(vals["n_dofs"]), time_s=float(vals["time_s"]),
                dofs_per_s=float(vals["dofs_per_s"]), flops=int(vals["flops"]), bytes=int(vals["bytes"]),
                intensity=float(vals["intensity"]),
            ))
        return out


@dataclass
class RooflinePoint:
    record: BenchRecord
    achieved_flops_per_s: float
    ceiling_flops_per_s: float
    bound: str


def roofline(records, peak: float, bandwidth: float) -> list[RooflinePoint]:
    """Ceiling ``min(peak, intensity * bandwidth)``; the knee is ``peak / bandwidth``."""
    if peak <= 0 or bandwidth <= 0:
        raise ValueError("peak and bandwidth must be positive")
    knee = peak / bandwidth
    out = []
    for r in records:
        bound = "compute-bound" if r.intensity >= knee else "memory-bound"
        out.append(RooflinePoint(r, r.flops / r.time_s, min(peak, r.intensity * bandwidth), bound))
    return out


def format_roofline(points, peak: float, bandwidth: float) -> str:
    lines = [
        f"# roofline: peak {peak:.3e} flop/s, bandwidth {bandwidth:.3e} B/s, knee {peak / bandwidth:.3f} flop/B"
        " (bytes are modeled)",
        "operator,dim,degree,geometry,lanes,intensity,achieved_flops_per_s,ceiling_flops_per_s,bound",
    ]
    for p in points:
        r = p.record
        lines.append(f"{r.operator},{r.dim},{r.degree},{r.geometry},{r.lanes},{r.intensity:.4f},"
                     f"{p.achieved_flops_per_s:.4e},{p.ceiling_flops_per_s:.4e},{p.bound}")
    return "\n".join(lines)


__all__ = [
    "BenchRecord", "CSV_HEADER", "OPERATOR_NAMES", "RooflinePoint", "append_csv",
    "format_roofline", "model_flops", "modeled_bytes", "read_csv",
    "roofline", "run_bench", "time_applies",
]

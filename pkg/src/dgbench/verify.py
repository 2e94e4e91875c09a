"""Verification suites shared by ``dgbench verify`` and the acceptance tests.

Each suite returns a list of :class:`CheckResult`; a suite never raises on a
failed comparison, it reports it.
"""
from __future__ import annotations

import statistics
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .basis import BasisKind, gauss_quadrature, make_basis, shape_matrices
from .bench import model_flops, time_applies
from .convergence import convergence_study
from .dof_layout import GhostedVector, build_dof_layout
from .geometry import ADVECTION, LAPLACIAN, MASS, GeometryVariant, precompute_geometry
from .ghost_exchange import Needed, build_exchange_plans
from .mesh import PolynomialDeformation, build_mesh, make_partition
from .operators import MatrixFreeOperator, OperatorConfig
from .oracle import assemble_operator, dense_kronecker_apply
from .tensor_kernels import (
    EVEN_ODD,
    PLAIN,
    KernelCounters,
    apply_1d,
    basis_change,
    collocation_derivative,
    tiled_cell_laplacian,
    untiled_cell_laplacian,
)


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""
    soft: bool = False  # a failing soft check warns instead of failing

    def line(self) -> str:
        tag = "PASS" if self.passed else ("WARN" if self.soft else "FAIL")
        return f"[{tag}] {self.suite}: {self.name}" + (f" ({self.detail})" if self.detail else "")


def _rel(a, b) -> float:
    scale = max(np.abs(b).max(), 1e-300)
    return float(np.abs(a - b).max() / scale)


def swirl_velocity(x: np.ndarray) -> np.ndarray:
    """Smooth, spatially varying transport field used by the equivalence checks."""
    out = np.empty_like(x)
    out[..., 0] = 1.0 + 0.3 * np.sin(np.pi * x[..., 1])
    out[..., 1] = 0.5 + 0.2 * x[..., 0]
    if x.shape[-1] == 3:
        out[..., 2] = 0.25 - 0.1 * x[..., 0]
    return out


# ---------------------------------------------------------------------------
# operator equivalence against the assembled matrix
# ---------------------------------------------------------------------------
ORACLE_CASES = {2: ((1, 2, 3, 4, 5), 4), 3: ((1, 2, 3), 3)}


def oracle_suite(dims=None, degrees=None, equations=(MASS, ADVECTION, LAPLACIAN), lanes=(1, 4),
                 ranks=(1, 2, 4), tol=1e-11, seed=0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for d, (ps, n) in ORACLE_CASES.items():
        if dims and d not in dims:
            continue
        for mapping_name in ("cartesian", "deformed"):
            for eq in equations:
                worst, worst_cfg, count = 0.0, "", 0
                for p in ps:
                    if degrees and p not in degrees:
                        continue
                    mapping = "cartesian" if mapping_name == "cartesian" else PolynomialDeformation(min(2, p), 0.1)
                    mesh = build_mesh(d, n, mapping=mapping)
                    variants = [v for v in GeometryVariant
                                if v is not GeometryVariant.CARTESIAN or mesh.is_cartesian]
                    A = None
                    for v in variants:
                        base = OperatorConfig(eq, p, geometry=v, lanes=1, velocity=swirl_velocity)
                        if A is None:
                            A = assemble_operator(base, mesh)
                            x = rng.standard_normal(A.n)
                            ref = A @ x
                        geo = precompute_geometry(mesh, gauss_quadrature(base.n_quad),
                                                  shape_matrices(make_basis(base.basis, p), gauss_quadrature(base.n_quad)),
                                                  v, eq, swirl_velocity, p)
                        for W in lanes:
                            for R in ranks:
                                cfg = OperatorConfig(eq, p, geometry=v, lanes=W, velocity=swirl_velocity)
                                op = MatrixFreeOperator(mesh, cfg, n_ranks=R, geometry=geo)
                                err = _rel(op.apply_natural(x), ref)
                                count += 1
                                if err >= worst:
                                    worst, worst_cfg = err, f"p={p} {v.value} W={W} ranks={R}"
                if count:
                    results.append(CheckResult(
                        "oracle", f"{eq} d={d} {mapping_name}", worst <= tol,
                        f"{count} configs, max rel err {worst:.2e} at {worst_cfg}"))
    return results


# ---------------------------------------------------------------------------
# kernel call counts per batch
# ---------------------------------------------------------------------------
def expected_calls(equation: str, d: int) -> dict:
    """Tensor-product kernel calls per cell / inner face / boundary face batch."""
    if equation == ADVECTION:
        return {
            "cell": {"basis_change": 2 * d, "derivative": d},
            "inner face": {"basis_change": 4 * (d - 1), "face_normal": 4},
            "boundary face": {"basis_change": 2 * (d - 1), "face_normal": 2},
        }
    if equation == LAPLACIAN:
        return {
            "cell": {"basis_change": 2 * d, "derivative": 2 * d},
            "inner face": {"basis_change": 8 * (d - 1), "derivative": 4 * (d - 1), "face_normal": 8},
            "boundary face": {"basis_change": 4 * (d - 1), "derivative": 2 * (d - 1), "face_normal": 4},
        }
    return {"cell": {"basis_change": 2 * d}}


def measured_calls(op: MatrixFreeOperator) -> dict:
    ro = op.ranks[0]
    u = GhostedVector.zeros(ro.layout)
    u.owned[:] = 1.0
    y = GhostedVector.zeros(ro.layout)
    out = {}
    ro.counters.reset()
    ro.apply_cell_batch(ro.cell_batches[0], u, y)
    out["cell"] = dict(ro.counters.by_kind)
    for label, boundary in (("inner face", False), ("boundary face", True)):
        fb = next((f for f in ro.face_batches if f.info.is_boundary == boundary), None)
        if fb is None:
            continue
        ro.counters.reset()
        ro.apply_face_batch(fb, u, y)
        out[label] = dict(ro.counters.by_kind)
    ro.counters.reset()
    return out


def counts_suite(dims=None, degrees=None) -> list[CheckResult]:
    results = []
    cases = [(ADVECTION, BasisKind.LAGRANGE_GAUSS_LOBATTO), (LAPLACIAN, BasisKind.HERMITE_LIKE),
             (MASS, BasisKind.LAGRANGE_GAUSS_LOBATTO)]
    for d in (2, 3):
        if dims and d not in dims:
            continue
        for p in (degrees or (3, 5)):
            if p < 3:
                continue
            for eq, basis in cases:
                op = MatrixFreeOperator(build_mesh(d, 3), OperatorConfig(eq, p, basis=basis, lanes=2))
                got = measured_calls(op)
                for row, want in expected_calls(eq, d).items():
                    ok = got.get(row) == want
                    results.append(CheckResult("counts", f"{eq} {basis.value} d={d} p={p} {row}", ok,
                                               f"expected {want}, counted {got.get(row)}"))
    return results


def flop_model_suite(dims=None, degrees=None, tol=0.10) -> list[CheckResult]:
    """Predicted FLOPs from the call schedule vs the instrumented count."""
    results = []
    for d in (dims or (2, 3)):
        for p in (degrees or (3, 5)):
            for eq in (ADVECTION, LAPLACIAN):
                for form in (PLAIN, EVEN_ODD):
                    op = MatrixFreeOperator(build_mesh(d, 3), OperatorConfig(eq, p, geometry="cartesian",
                                                                             lanes=4, form=form))
                    op.reset_counters()
                    op.matvec(np.ones(op.n_dofs))
                    counted = op.counters.flops_per_lane * op.config.lanes
                    model = model_flops(op)
                    dev = abs(model - counted) / counted
                    results.append(CheckResult("counts", f"flop model {eq} d={d} p={p} {form}", dev <= tol,
                                               f"model {model}, counted {counted}, deviation {dev:.1%}"))
    return results


# ---------------------------------------------------------------------------
# 1D kernels
# ---------------------------------------------------------------------------
def _square_shape(k: int):
    return shape_matrices(make_basis(BasisKind.LAGRANGE_GAUSS_LOBATTO, k - 1), gauss_quadrature(k))


def stripe_cost_suite(ks=range(2, 17)) -> list[CheckResult]:
    results = []
    for k in ks:
        shape = _square_shape(k)
        c = KernelCounters()
        apply_1d(shape.S, np.ones((k, 1)), 0, form=EVEN_ODD, packed=shape.S_eo, counters=c)
        want = (2 * k, k, (k * (k - 2)) // 2)
        got = (c.adds, c.mults, c.fmas)
        results.append(CheckResult("flops", f"even-odd stripe k={k}", got == want,
                                   f"expected adds/mults/fmas {want}, counted {got}"))
    return results


def even_odd_suite(ks=range(2, 17), n_stripes=1000, tol=1e-13, seed=1) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for k in ks:
        shape = _square_shape(k)
        x = rng.standard_normal((k, n_stripes))
        worst = 0.0
        for M, pk, pkt in ((shape.S, shape.S_eo, shape.St_eo), (shape.Dco, shape.Dco_eo, shape.Dcot_eo)):
            for transpose, packed in ((False, pk), (True, pkt)):
                a = apply_1d(M, x, 0, transpose=transpose)
                b = apply_1d(M, x, 0, transpose=transpose, form=EVEN_ODD, packed=packed)
                worst = max(worst, _rel(b, a))
        results.append(CheckResult("kernels", f"even-odd equals plain k={k}", worst <= tol, f"max rel diff {worst:.2e}"))
    return results


def gradient_suite(dims=(1, 2, 3), ks=range(2, 9), tol=1e-13, seed=2, lanes=3) -> list[CheckResult]:
    """Collocation-factored gradient vs the stacked per-direction products."""
    rng = np.random.default_rng(seed)
    results = []
    for d in dims:
        worst = 0.0
        for k in ks:
            shape = _square_shape(k)
            u = rng.standard_normal((k**d, lanes))
            vq = np.empty_like(u)
            basis_change(d, True, k, k, False, shape, u, vq)
            g = np.empty((d * k**d, lanes))
            collocation_derivative(d, True, k, False, shape, vq, g)
            g = g.reshape(d, k**d, lanes)
            for a in range(d):
                ref = dense_kronecker_apply([shape.D if b == a else shape.S for b in range(d)], u)
                worst = max(worst, _rel(g[a], ref))
        results.append(CheckResult("kernels", f"factored gradient d={d}", worst <= tol, f"max rel diff {worst:.2e}"))
    return results


def tiling_suite(ks=range(2, 9), tol=1e-13, seed=3, lanes=2) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for k in ks:
        shape = _square_shape(k)
        C = rng.standard_normal((3, 3, k, k, k, lanes))
        C = C + C.swapaxes(0, 1)

        def qop(grad, index):
            c = C[(slice(None), slice(None)) + tuple(index)]
            return np.einsum("ab...,b...->a...", c, grad)

        u = rng.standard_normal((k**3, lanes))
        a = untiled_cell_laplacian(shape, qop, u, np.empty_like(u))
        b = tiled_cell_laplacian(shape, qop, u, np.empty_like(u))
        err = _rel(b, a)
        results.append(CheckResult("kernels", f"tiled equals untiled k={k}", err <= tol, f"max rel diff {err:.2e}"))
    return results


# ---------------------------------------------------------------------------
# exchange
# ---------------------------------------------------------------------------
def exchange_suite(dims=None, degrees=None, seed=4) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for d in (dims or (2, 3)):
        p = max(degrees[0], 3) if degrees else 5  # the Hermite-like basis starts at degree 3
        k = p + 1
        mesh = build_mesh(d, 4 if d == 2 else 3)
        part = make_partition(mesh, 4)
        for needed, basis, want in ((Needed.VALUES, BasisKind.LAGRANGE_GAUSS_LOBATTO, k ** (d - 1)),
                                    (Needed.VALUES_AND_FIRST_DERIVATIVES, BasisKind.HERMITE_LIKE, 2 * k ** (d - 1))):
            shape = shape_matrices(make_basis(basis, p), gauss_quadrature(k))
            layouts = build_dof_layout(mesh, part, k, 4)
            plans = build_exchange_plans(mesh, part, layouts, shape, needed, slim=True)
            sizes = sorted({s for pl in plans for s in pl.values_per_entry()})
            results.append(CheckResult("exchange", f"slim values per interface cell d={d} {basis.value}",
                                       sizes == [want], f"expected {want}, sizes {sizes}"))
        for eq in (ADVECTION, LAPLACIAN):
            x = rng.standard_normal(mesh.n_cells * k**d)
            ref = MatrixFreeOperator(mesh, OperatorConfig(eq, p, lanes=4, velocity=swirl_velocity), n_ranks=1).apply_natural(x)
            full = MatrixFreeOperator(mesh, OperatorConfig(eq, p, lanes=4, velocity=swirl_velocity, slim_exchange=False),
                                      n_ranks=4).apply_natural(x)
            slim = MatrixFreeOperator(mesh, OperatorConfig(eq, p, lanes=4, velocity=swirl_velocity), n_ranks=4).apply_natural(x)
            err = _rel(slim, full)
            results.append(CheckResult("exchange", f"slim vs full {eq} d={d}", err <= 1e-13, f"max rel diff {err:.2e}"))
            worst = 0.0
            for R in (2, 4, 7):
                y = MatrixFreeOperator(mesh, OperatorConfig(eq, p, lanes=4, velocity=swirl_velocity), n_ranks=R).apply_natural(x)
                worst = max(worst, _rel(y, ref))
            results.append(CheckResult("exchange", f"rank-count invariance {eq} d={d} ranks 1/2/4/7", worst <= 1e-12,
                                       f"max rel diff {worst:.2e}"))
    return results


# ---------------------------------------------------------------------------
# SIP matrix properties
# ---------------------------------------------------------------------------
SIP_MESHES = {1: 10, 2: 6, 3: 5}  # cells per direction giving at most 400 dofs in 2D


def sip_suite(degrees=None) -> list[CheckResult]:
    results = []
    for p, n in SIP_MESHES.items():
        if degrees and p not in degrees:
            continue
        for mapping_name in ("cartesian", "deformed"):
            mapping = "cartesian" if mapping_name == "cartesian" else PolynomialDeformation(min(2, p), 0.1)
            mesh = build_mesh(2, n, mapping=mapping)
            A = assemble_operator(OperatorConfig(LAPLACIAN, p), mesh).dense
            asym = float(np.abs(A - A.T).max() / np.abs(A).max())
            lam = float(np.linalg.eigvalsh(0.5 * (A + A.T)).min())
            results.append(CheckResult("sip", f"symmetric p={p} {mapping_name} ({A.shape[0]} dofs)", asym <= 1e-11,
                                       f"max |A-A^T|/max|A| {asym:.2e}"))
            results.append(CheckResult("sip", f"semi-definite p={p} {mapping_name}", lam >= -1e-10,
                                       f"smallest eigenvalue {lam:.3e}"))
    return results


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------
CONVERGENCE_LEVELS = (2, 3, 4)


def convergence_suite(degrees=None, levels=CONVERGENCE_LEVELS) -> list[CheckResult]:
    results = []
    for eq, margin in ((LAPLACIAN, 0.9), (ADVECTION, 0.5)):
        for p in (2, 3):
            if degrees and p not in degrees:
                continue
            table = convergence_study(eq, 2, p, levels)
            rate = table[-1].rate
            ok = all(r.converged for r in table) and rate is not None and rate >= p + margin
            errs = ", ".join(f"{r.error:.3e}" for r in table)
            results.append(CheckResult("convergence", f"{eq} d=2 p={p} rate >= {p + margin}", ok,
                                       f"errors {errs}; last rate {rate:.3f}"))
    return results


# ---------------------------------------------------------------------------
# performance sanity
# ---------------------------------------------------------------------------
PERF_MESH = (5, 4, 4)  # 17280 dofs at p=5, the largest box mesh inside the oracle guard


def perf_suite(speedup=5.0, lane_gain=1.5) -> list[CheckResult]:
    results = []
    mesh = build_mesh(3, PERF_MESH)
    cfg = OperatorConfig(LAPLACIAN, 5, geometry="cartesian", lanes=8)
    op = MatrixFreeOperator(mesh, cfg)
    A = assemble_operator(cfg, mesh)
    x = np.random.default_rng(5).standard_normal(op.n_dofs)
    u = op.from_natural(x)
    y = op.create_vector()
    t_mf = statistics.median(time_applies(lambda: op.apply(u, y)))
    t_dense = statistics.median(time_applies(lambda: A @ x))
    ratio = t_dense / t_mf
    results.append(CheckResult("perf", f"sum factorization vs dense d=3 p=5 ({op.n_dofs} dofs)", ratio >= speedup,
                               f"dense {t_dense * 1e3:.1f} ms, matrix-free {t_mf * 1e3:.1f} ms, ratio {ratio:.1f}"))
    del A
    for p in range(3, 8):
        mesh = build_mesh(3, 3)
        rates = {}
        for W in (1, 4):
            op = MatrixFreeOperator(mesh, OperatorConfig(LAPLACIAN, p, lanes=W))
            u = op.from_natural(np.ones(op.n_dofs))
            y = op.create_vector()
            rates[W] = op.n_dofs / statistics.median(time_applies(lambda: op.apply(u, y), warmup=0.2))
        gain = rates[4] / rates[1]
        ok = gain >= lane_gain
        if not ok:
            warnings.warn(f"lane width 4 only {gain:.2f}x faster than 1 at p={p}", RuntimeWarning, stacklevel=2)
        results.append(CheckResult("perf", f"W=4 vs W=1 throughput d=3 p={p}", ok, f"gain {gain:.2f}x", soft=True))
    return results


# ---------------------------------------------------------------------------
# geometry byte model
# ---------------------------------------------------------------------------
GEOMETRY_DOUBLES_3D = {("g2", LAPLACIAN): 3, ("g3", LAPLACIAN): 10, ("g4", LAPLACIAN): 6, ("g4", ADVECTION): 3}


def geometry_suite() -> list[CheckResult]:
    results = []
    mesh = build_mesh(3, 2, mapping=PolynomialDeformation(2, 0.1))
    p = 3
    quad = gauss_quadrature(p + 1)
    for (variant, eq), want in GEOMETRY_DOUBLES_3D.items():
        basis = make_basis(BasisKind.LAGRANGE_GAUSS_LOBATTO, p)
        geo = precompute_geometry(mesh, quad, shape_matrices(basis, quad), variant, eq, swirl_velocity, p)
        got = geo.cell_doubles() / (mesh.n_cells * geo.n_qpoints)
        results.append(CheckResult("geometry", f"{variant} {eq} doubles per q-point in 3D", got == want,
                                   f"expected {want}, modeled {got:g}"))
    return results


SUITES = {
    "oracle": lambda dims, degrees: oracle_suite(dims, degrees),
    "counts": lambda dims, degrees: counts_suite(dims, degrees) + flop_model_suite(dims, degrees),
    "flops": lambda dims, degrees: stripe_cost_suite(),
    "kernels": lambda dims, degrees: even_odd_suite() + gradient_suite() + tiling_suite(),
    "exchange": lambda dims, degrees: exchange_suite(dims, degrees),
    "sip": lambda dims, degrees: sip_suite(degrees),
    "convergence": lambda dims, degrees: convergence_suite(degrees),
    "perf": lambda dims, degrees: perf_suite(),
    "geometry": lambda dims, degrees: geometry_suite(),
}


def run_suites(names=None, dims=None, degrees=None, report=None) -> list[CheckResult]:
    """Run the selected suites; ``report`` receives each result as it is produced."""
    names = list(names or SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s): {', '.join(unknown)}")
    out = []
    for name in names:
        t = time.perf_counter()
        res = SUITES[name](dims, degrees)
        for r in res:
            if report:
                report(r)
        if report:
            report(CheckResult(name, f"suite finished in {time.perf_counter() - t:.1f} s", True))
        out.extend(res)
    return out


def all_passed(results) -> bool:
    return all(r.passed or r.soft for r in results)

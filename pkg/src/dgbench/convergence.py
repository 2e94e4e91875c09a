"""Manufactured-solution convergence studies with matrix-free Krylov solvers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg, gmres

from .basis import gauss_quadrature
from .geometry import ADVECTION, LAPLACIAN, reference_points
from .mesh import build_mesh
from .oracle import tensor_table
from .operators import MatrixFreeOperator, OperatorConfig

CONST_VELOCITY = (1.0, 0.5, 0.25)


def _constant_velocity(x):
    d = x.shape[-1]
    return np.broadcast_to(np.array(CONST_VELOCITY[:d]), x.shape).copy()


class Manufactured:
    """Smooth solution with forcing for ``-Δu = f`` or ``c·∇u = f``."""

    def __init__(self, equation: str, d: int):
        self.equation = equation
        self.d = d

    def u(self, x):
        v = np.sin(np.pi * x[..., 0] + 0.3) * np.cos(np.pi * x[..., 1])
        if self.d == 3:
            v = v * np.cos(0.5 * np.pi * x[..., 2])
        return v

    def grad(self, x):
        a = np.pi * x[..., 0] + 0.3
        b = np.pi * x[..., 1]
        g = [np.pi * np.cos(a) * np.cos(b), -np.pi * np.sin(a) * np.sin(b)]
        if self.d == 3:
            zc = np.cos(0.5 * np.pi * x[..., 2])
            g = [gi * zc for gi in g]
            g.append(-0.5 * np.pi * np.sin(a) * np.cos(b) * np.sin(0.5 * np.pi * x[..., 2]))
        return np.stack(g, axis=-1)

    def forcing(self, x):
        if self.equation == LAPLACIAN:
            factor = 2 * np.pi**2 + (0.25 * np.pi**2 if self.d == 3 else 0.0)
            return factor * self.u(x)
        return (self.grad(x) * np.array(CONST_VELOCITY[: self.d])).sum(axis=-1)


def l2_error(op: MatrixFreeOperator, x_natural: np.ndarray, exact) -> float:
    """L2 norm of ``u_h - exact`` with a quadrature two points richer than the operator's."""
    mesh, d = op.mesh, op.mesh.d
    k = op.shape.k
    quad = gauss_quadrature(k + 2)
    pts, w = reference_points(quad, d)
    Phi = tensor_table([op.basis.values(quad.points)] * d)
    cells = np.arange(mesh.n_cells)
    X = mesh.map_points(cells, pts)
    det = np.linalg.det(mesh.jacobians(cells, pts))
    uh = x_natural.reshape(mesh.n_cells, k**d) @ Phi.T
    err = (uh - exact(X)) ** 2 * det * w
    return float(np.sqrt(err.sum()))


@dataclass
class LevelResult:
    level: int
    cells: int
    n_dofs: int
    iterations: int
    converged: bool
    error: float
    rate: float | None = None


def inverse_mass_preconditioner(op: MatrixFreeOperator) -> LinearOperator:
    """Matrix-free inverse mass matrix in the operator's basis."""
    cfg = op.config
    inv = MatrixFreeOperator(
        op.mesh,
        OperatorConfig("inverse_mass", cfg.degree, geometry=cfg.geometry, lanes=cfg.lanes, basis=cfg.basis),
        partition=op.partition,
    )
    n = op.n_dofs
    return LinearOperator((n, n), matvec=inv.matvec, dtype=float)


def solve(op: MatrixFreeOperator, rhs: np.ndarray, tol: float = 1e-10, maxiter: int = 5000,
          precondition: bool = True):
    """CG for the symmetric Laplacian, restarted GMRES(30) otherwise; returns (x, iterations, converged).

    Both are preconditioned with the inverse mass matrix unless disabled.
    """
    n = rhs.size
    A = LinearOperator((n, n), matvec=op.matvec, dtype=float)
    M = inverse_mass_preconditioner(op) if precondition else None
    its = [0]

    def count(_):
        its[0] += 1

    if op.config.equation == LAPLACIAN:
        x, info = cg(A, rhs, rtol=tol, atol=0.0, maxiter=maxiter, M=M, callback=count)
    else:
        x, info = gmres(A, rhs, rtol=tol, atol=0.0, restart=30, maxiter=maxiter, M=M,
                        callback=count, callback_type="pr_norm")
    return x, its[0], info == 0


def convergence_study(equation: str, d: int, degree: int, levels, lanes: int = 8,
                      tol: float = 1e-10) -> list[LevelResult]:
    """Solve on ``2**level`` cells per direction and report L2 errors and observed rates."""
    if equation not in (ADVECTION, LAPLACIAN):
        raise ValueError("convergence studies exist for advection and laplacian")
    ms = Manufactured(equation, d)
    out = []
    for level in levels:
        mesh = build_mesh(d, 2**level)
        cfg = OperatorConfig(equation, degree, geometry="cartesian", lanes=lanes, velocity=_constant_velocity)
        op = MatrixFreeOperator(mesh, cfg)
        rhs = op.assemble_rhs(ms.forcing, ms.u).flat()
        x, its, ok = solve(op, rhs, tol)
        err = l2_error(op, op.flat_to_natural(x), ms.u)
        res = LevelResult(level, mesh.n_cells, op.n_dofs, its, ok, err)
        if out:
            prev = out[-1]
            res.rate = float(np.log(prev.error / err) / np.log(2.0 ** (level - prev.level)))
        out.append(res)
    return out

"""Brute-force references without sum factorization.

Everything here builds full ``n_points x n_dofs`` basis tables with Kronecker
products and loops over cells and faces. Geometry is evaluated pointwise
from the mesh mapping.
"""
from __future__ import annotations

from functools import reduce

import numpy as np
import scipy.sparse as sp

from .basis import gauss_quadrature, make_basis
from .geometry import ADVECTION, INVERSE_MASS, LAPLACIAN, MASS, face_reference_points, face_weights, reference_points
from .mesh import Mesh

MAX_ORACLE_DOFS = 20_000
MAX_KRON_K = 8


class OracleGuardError(ValueError):
    pass


def dense_kronecker_apply(factors, x: np.ndarray) -> np.ndarray:
    """Multiply by ``A_{d-1} x ... x A_0`` (direction 0 runs fastest in ``x``)."""
    factors = [np.atleast_2d(np.asarray(f, dtype=float)) for f in factors]
    if len(factors) > 3 or max(max(f.shape) for f in factors) > MAX_KRON_K:
        raise OracleGuardError("Kronecker oracle limited to d <= 3 and 1D sizes <= 8")
    K = reduce(np.kron, factors[::-1])
    return K @ x


def tensor_table(rows_per_direction) -> np.ndarray:
    """Full table from per-direction 1D tables, direction 0 fastest in both indices."""
    return reduce(np.kron, list(rows_per_direction)[::-1])


class AssembledMatrix:
    """Dense ``N x N`` operator matrix in natural numbering."""

    def __init__(self, dense: np.ndarray):
        self.dense = dense
        self.n = dense.shape[0]

    def tocsr(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.dense)

    def __matmul__(self, x):
        return self.dense @ x

    def dump_triplets(self, path) -> None:
        """Write nonzeros as ``row col value`` lines."""
        A = self.tocsr().tocoo()
        with open(path, "w") as fh:
            for r, c, v in zip(A.row, A.col, A.data):
                fh.write(f"{r} {c} {v:.17g}\n")


class _Collector:
    def __init__(self, n):
        self.A = np.zeros((n, n))

    def add(self, rows, cols, block):
        # cell dof ranges are contiguous in natural numbering
        self.A[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1] += block

    def finish(self) -> AssembledMatrix:
        return AssembledMatrix(self.A)


def _unit(d, c, side):
    e = np.zeros(d)
    e[c] = 1.0 if side else -1.0
    return e


def assemble_operator(config, mesh: Mesh) -> AssembledMatrix:
    """Assemble the operator described by ``config`` in natural numbering (``cell * k**d + dof``)."""
    d = mesh.d
    p = config.degree
    k = p + 1
    n = k**d
    N = mesh.n_cells * n
    if N > MAX_ORACLE_DOFS:
        raise OracleGuardError(f"{N} dofs exceed the oracle guard of {MAX_ORACLE_DOFS}")
    basis = make_basis(config.basis, p)
    quad = gauss_quadrature(config.n_quad)
    S = basis.values(quad.points)
    D = basis.derivatives(quad.points)
    Sf = [basis.values(np.array([s], dtype=float)) for s in (0.0, 1.0)]
    Df = [basis.derivatives(np.array([s], dtype=float)) for s in (0.0, 1.0)]
    pts, w = reference_points(quad, d)
    Phi = tensor_table([S] * d)
    dPhi = [tensor_table([D if a == b else S for b in range(d)]) for a in range(d)]
    eq = config.equation
    out = _Collector(N)

    cells = np.arange(mesh.n_cells)
    J = mesh.jacobians(cells, pts)
    det = np.linalg.det(J)
    invT = np.swapaxes(np.linalg.inv(J), -1, -2)
    X = mesh.map_points(cells, pts)
    volume = (det * w).sum(axis=1)

    for c in cells:
        dofs = c * n + np.arange(n)
        jxw = det[c] * w
        if eq in (MASS, INVERSE_MASS):
            M = Phi.T @ (jxw[:, None] * Phi)
            out.add(dofs, dofs, np.linalg.inv(M) if eq == INVERSE_MASS else M)
            continue
        G = [sum(invT[c][:, a, b][:, None] * dPhi[b] for b in range(d)) for a in range(d)]
        if eq == LAPLACIAN:
            A = sum(G[a].T @ (jxw[:, None] * G[a]) for a in range(d))
        else:
            vel = config.velocity(X[c])
            A = -sum(G[a].T @ ((vel[:, a] * jxw)[:, None] * Phi) for a in range(d))
        out.add(dofs, dofs, A)

    if eq in (ADVECTION, LAPLACIAN):
        wf = face_weights(quad, d)
        tau_factor = (p + 1) ** 2

        def side_tables(fn):
            c, s = divmod(fn, 2)
            val = tensor_table([Sf[s] if a == c else S for a in range(d)])
            grads = []
            for a in range(d):
                rows = []
                for b in range(d):
                    if b == c:
                        rows.append(Df[s] if a == c else Sf[s])
                    else:
                        rows.append(D if a == b else S)
                grads.append(tensor_table(rows))
            return val, grads

        tables = [side_tables(fn) for fn in range(2 * d)]
        for face in mesh.faces():
            fm = face.interior_face_number
            cm, sm = divmod(fm, 2)
            rm = face_reference_points(quad, d, fm)
            Jm = mesh.jacobians(face.interior_cell, rm)[0]
            iTm = np.swapaxes(np.linalg.inv(Jm), -1, -2)
            nv = iTm @ _unit(d, cm, sm)
            nrm = np.linalg.norm(nv, axis=1)
            normal = nv / nrm[:, None]
            jxw = np.linalg.det(Jm) * nrm * wf
            area = jxw.sum()
            Vm, gm = tables[fm]
            # normal derivative rows: n . J^{-T} grad_xi
            Nm = sum((np.einsum("qab,qa->qb", iTm, normal)[:, b])[:, None] * gm[b] for b in range(d))
            dm = face.interior_cell * n + np.arange(n)
            if face.is_boundary:
                if eq == LAPLACIAN:
                    tau = tau_factor * area / volume[face.interior_cell]
                    A = Vm.T @ ((2 * tau * jxw)[:, None] * Vm) - Vm.T @ (jxw[:, None] * Nm) - Nm.T @ (jxw[:, None] * Vm)
                else:
                    xq = mesh.map_points(face.interior_cell, rm)[0]
                    cn = (config.velocity(xq) * normal).sum(axis=1)
                    A = Vm.T @ ((np.abs(cn) * jxw)[:, None] * Vm)
                out.add(dm, dm, A)
                continue
            fp = face.exterior_face_number
            rp = face_reference_points(quad, d, fp)
            Jp = mesh.jacobians(face.exterior_cell, rp)[0]
            iTp = np.swapaxes(np.linalg.inv(Jp), -1, -2)
            Vp, gp = tables[fp]
            Np = sum((np.einsum("qab,qa->qb", iTp, normal)[:, b])[:, None] * gp[b] for b in range(d))
            dp = face.exterior_cell * n + np.arange(n)
            jumps = [Vm, -Vp]
            dofs = [dm, dp]
            if eq == LAPLACIAN:
                tau = tau_factor * 0.5 * (area / volume[face.interior_cell] + area / volume[face.exterior_cell])
                avg = [0.5 * Nm, 0.5 * Np]
                for a in range(2):
                    for b in range(2):
                        A = (jumps[a].T @ ((tau * jxw)[:, None] * jumps[b])
                             - jumps[a].T @ (jxw[:, None] * avg[b])
                             - avg[a].T @ (jxw[:, None] * jumps[b]))
                        out.add(dofs[a], dofs[b], A)
            else:
                xq = mesh.map_points(face.interior_cell, rm)[0]
                cn = (config.velocity(xq) * normal).sum(axis=1)
                flux = [(0.5 * cn + 0.5 * np.abs(cn))[:, None] * Vm, (0.5 * cn - 0.5 * np.abs(cn))[:, None] * Vp]
                for a in range(2):
                    for b in range(2):
                        out.add(dofs[a], dofs[b], jumps[a].T @ (jxw[:, None] * flux[b]))
    return out.finish()

import numpy as np
import pytest

from dgbench.basis import BasisKind, UnsupportedBasisError
from dgbench.dof_layout import ContractViolation, GhostedVector, VectorState
from dgbench.geometry import ADVECTION, INVERSE_MASS, LAPLACIAN, MASS
from dgbench.ghost_exchange import GhostExchanger
from dgbench.mesh import PolynomialDeformation, build_mesh
from dgbench.oracle import assemble_operator
from dgbench.operators import MatrixFreeOperator, OperatorConfig


def natural_field(op, fn):
    """Nodal interpolation of ``fn`` in a Lagrange basis (support points match the basis nodes)."""
    from dgbench.geometry import reference_points
    from dgbench.basis import Quadrature1D

    nodes = op.basis.nodes
    pts, _ = reference_points(Quadrature1D(nodes, np.ones_like(nodes)), op.mesh.d)
    x = op.mesh.map_points(np.arange(op.mesh.n_cells), pts)
    return fn(x).ravel()


def test_laplacian_of_linear_field_has_no_interior_residual():
    mesh = build_mesh(2, 3, periodic=(False, False))
    op = MatrixFreeOperator(mesh, OperatorConfig(LAPLACIAN, 2, basis="lagrange_gauss_lobatto"))
    u = natural_field(op, lambda x: 1.0 + 2.0 * x[..., 0] - x[..., 1])
    r = op.apply_natural(u).reshape(mesh.n_cells, -1)
    # only cells touching the boundary see the mirror-rule boundary terms
    interior = [c for c in range(mesh.n_cells) if all(0 < i < 2 for i in mesh.cell_multi_index(c))]
    assert np.abs(r[interior]).max() < 1e-11


def test_periodic_advection_of_constant_is_zero():
    mesh = build_mesh(2, 4, periodic=(True, True))
    op = MatrixFreeOperator(mesh, OperatorConfig(ADVECTION, 3))
    assert np.abs(op.apply_natural(np.ones(op.n_dofs))).max() < 1e-12


@pytest.mark.parametrize("geometry", ["g1", "g2", "g3", "g4"])
def test_inverse_mass_undoes_mass(rng, geometry):
    mesh = build_mesh(2, 3, mapping=PolynomialDeformation(2, 0.1))
    M = MatrixFreeOperator(mesh, OperatorConfig(MASS, 3, geometry=geometry))
    Minv = MatrixFreeOperator(mesh, OperatorConfig(INVERSE_MASS, 3, geometry=geometry))
    x = rng.standard_normal(M.n_dofs)
    np.testing.assert_allclose(Minv.apply_natural(M.apply_natural(x)), x, atol=1e-11)


def test_rhs_of_unit_forcing_sums_to_volume():
    mesh = build_mesh(3, 2, extent=((0, 0, 0), (2, 1, 1)))
    op = MatrixFreeOperator(mesh, OperatorConfig(MASS, 2))
    rhs = op.assemble_rhs(lambda x: np.ones(x.shape[:-1])).flat()
    # Lagrange functions sum to one
    assert rhs.sum() == pytest.approx(2.0)


@pytest.mark.parametrize("equation", [ADVECTION, LAPLACIAN])
def test_results_independent_of_lanes_ranks_and_tiling(rng, equation):
    mesh = build_mesh(2, (5, 3), mapping=PolynomialDeformation(2, 0.1))
    x = rng.standard_normal(15 * 16)
    ref = MatrixFreeOperator(mesh, OperatorConfig(equation, 3, lanes=1)).apply_natural(x)
    for lanes, ranks, tiled in ((4, 1, False), (8, 3, False), (2, 2, True)):
        op = MatrixFreeOperator(mesh, OperatorConfig(equation, 3, lanes=lanes, tiled=tiled), n_ranks=ranks)
        np.testing.assert_allclose(op.apply_natural(x), ref, atol=1e-12 * np.abs(ref).max())


def test_tiled_laplacian_3d_matches_oracle(rng):
    mesh = build_mesh(3, 2)
    cfg = OperatorConfig(LAPLACIAN, 3, tiled=True)
    x = rng.standard_normal(8 * 64)
    np.testing.assert_allclose(MatrixFreeOperator(mesh, cfg).apply_natural(x), assemble_operator(cfg, mesh) @ x,
                               atol=1e-11)


def test_hermite_needs_degree_three():
    with pytest.raises(UnsupportedBasisError):
        OperatorConfig(LAPLACIAN, 2, basis=BasisKind.HERMITE_LIKE)


def test_bad_config():
    with pytest.raises(ValueError):
        OperatorConfig("heat", 2)
    with pytest.raises(ValueError):
        OperatorConfig(INVERSE_MASS, 2, n_quad=4)


def test_natural_roundtrip(rng):
    op = MatrixFreeOperator(build_mesh(2, 3), OperatorConfig(MASS, 2, lanes=4), n_ranks=2)
    x = rng.standard_normal(op.n_dofs)
    np.testing.assert_array_equal(op.to_natural(op.from_natural(x)), x)
    np.testing.assert_array_equal(op.flat_to_natural(op.natural_to_flat(x)), x)


def test_counters_reset():
    op = MatrixFreeOperator(build_mesh(2, 2), OperatorConfig(LAPLACIAN, 3))
    op.apply(op.create_vector())
    assert op.counters.flops_per_lane > 0
    op.reset_counters()
    assert op.counters.flops_per_lane == 0


def test_double_update_is_a_contract_violation():
    op = MatrixFreeOperator(build_mesh(2, 4), OperatorConfig(ADVECTION, 2), n_ranks=2)
    lay = op.layouts[0]
    vec = GhostedVector.zeros(lay)
    vec.state = VectorState.GHOSTS_VALID
    ex = GhostExchanger(op.plans[0], op.transport)
    with pytest.raises(ContractViolation):
        ex.start_update(vec)
    with pytest.raises(ContractViolation):
        ex.compress(vec)
    with pytest.raises(ContractViolation):
        ex.finish_update(GhostedVector.zeros(lay))

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dgbench.basis import BasisKind, gauss_lobatto_quadrature, gauss_quadrature, make_basis, pack_even_odd, shape_matrices
from dgbench.oracle import OracleGuardError, dense_kronecker_apply, tensor_table
from dgbench.tensor_kernels import (
    EVEN_ODD,
    KernelCounters,
    apply_1d,
    basis_change,
    collocation_derivative,
    even_odd_stripe_cost,
    face_layers,
    face_normal_interpolation,
    plain_stripe_cost,
    tiled_cell_laplacian,
    untiled_cell_laplacian,
)


def lobatto_shape(p, n_quad=None, kind=BasisKind.LAGRANGE_GAUSS_LOBATTO):
    return shape_matrices(make_basis(kind, p), gauss_quadrature(n_quad or p + 1))


def test_collocation_basis_change_is_copy(rng):
    shape = lobatto_shape(3, kind=BasisKind.LAGRANGE_GAUSS)
    x = rng.standard_normal((64, 4))
    out = np.empty_like(x)
    basis_change(3, True, 4, 4, False, shape, x, out)
    np.testing.assert_allclose(out, x, atol=1e-14)


def test_ones_stay_ones():
    shape = lobatto_shape(4)
    out = np.empty((25, 2))
    basis_change(2, True, 5, 5, False, shape, np.ones((25, 2)), out)
    np.testing.assert_allclose(out, 1.0, atol=1e-14)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("k,l", [(2, 2), (3, 4), (5, 5), (4, 7), (8, 8)])
def test_basis_change_matches_kronecker(rng, d, k, l):
    shape = lobatto_shape(k - 1, l)
    x = rng.standard_normal((k**d, 3))
    out = np.empty((l**d, 3))
    basis_change(d, True, k, l, False, shape, x, out)
    np.testing.assert_allclose(out, dense_kronecker_apply([shape.S] * d, x), atol=1e-13)
    y = rng.standard_normal((l**d, 3))
    back = np.empty((k**d, 3))
    basis_change(d, False, k, l, False, shape, y, back)
    np.testing.assert_allclose(back, dense_kronecker_apply([shape.S.T] * d, y), atol=1e-13)


def test_basis_change_accumulates(rng):
    shape = lobatto_shape(2)
    x = rng.standard_normal((9, 1))
    out = np.ones((9, 1))
    basis_change(2, True, 3, 3, True, shape, x, out)
    np.testing.assert_allclose(out, 1 + dense_kronecker_apply([shape.S] * 2, x), atol=1e-14)


def test_basis_change_size_mismatch():
    shape = lobatto_shape(2)
    with pytest.raises(ValueError):
        basis_change(2, True, 3, 3, False, shape, np.zeros((8, 1)), np.zeros((9, 1)))


def test_basis_change_in_place(rng):
    shape = lobatto_shape(3)
    x = rng.standard_normal((16, 2))
    ref = dense_kronecker_apply([shape.S] * 2, x)
    basis_change(2, True, 4, 4, False, shape, x, x)
    np.testing.assert_allclose(x, ref, atol=1e-13)


def test_gradient_of_constant_vanishes():
    shape = lobatto_shape(4)
    g = np.empty((3 * 125, 2))
    collocation_derivative(3, True, 5, False, shape, np.ones((125, 2)), g)
    assert np.abs(g).max() < 1e-12


def test_gradient_of_coordinate_field():
    k = 5
    shape = lobatto_shape(k - 1)
    pts = shape.quad.points
    xi1 = np.tile(pts[None, :], (k, 1)).reshape(-1, 1)  # direction 0 fastest
    g = np.empty((2 * k * k, 1))
    collocation_derivative(2, True, k, False, shape, xi1, g)
    np.testing.assert_allclose(g[: k * k], 1.0, atol=1e-13)
    np.testing.assert_allclose(g[k * k :], 0.0, atol=1e-13)


def test_collocation_derivative_matches_stacked_kronecker(rng):
    k = 5
    shape = lobatto_shape(k - 1, kind=BasisKind.LAGRANGE_GAUSS)
    u = rng.standard_normal((k * k, 3))
    g = np.empty((2 * k * k, 3))
    collocation_derivative(2, True, k, False, shape, u, g)
    stacked = np.vstack([tensor_table([shape.D, shape.S]), tensor_table([shape.S, shape.D])])
    np.testing.assert_allclose(g, stacked @ u, atol=1e-13)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("k", [2, 4, 7])
def test_interpolation_and_integration_are_adjoint(rng, d, k):
    shape = lobatto_shape(k - 1, k + 1)
    l = k + 1
    u = rng.standard_normal((k**d, 2))
    y = rng.standard_normal((l**d, 2))
    Su = np.empty((l**d, 2))
    Sty = np.empty((k**d, 2))
    basis_change(d, True, k, l, False, shape, u, Su)
    basis_change(d, False, k, l, False, shape, y, Sty)
    a, b = (Su * y).sum(), (u * Sty).sum()
    assert abs(a - b) <= 1e-12 * max(abs(a), 1)
    yq = rng.standard_normal((d * l**d, 2))
    uq = rng.standard_normal((l**d, 2))
    g = np.empty((d * l**d, 2))
    gt = np.empty((l**d, 2))
    collocation_derivative(d, True, l, False, shape, uq, g)
    collocation_derivative(d, False, l, False, shape, yq, gt)
    a, b = (g * yq).sum(), (uq * gt).sum()
    assert abs(a - b) <= 1e-12 * max(abs(a), 1)


def test_face_interpolation_copies_layer_for_nodal_basis(rng):
    k, d = 4, 3
    shape = lobatto_shape(k - 1)
    u = rng.standard_normal((k**d, 2))
    out = np.empty((k ** (d - 1), 2))
    face_normal_interpolation(d, 1, True, k, 0, shape, 0, u, out)
    np.testing.assert_array_equal(out, u.reshape(k, k, k, 2)[:, 0, :, :].reshape(-1, 2))


@pytest.mark.parametrize("direction", [0, 1, 2])
@pytest.mark.parametrize("side", [0, 1])
def test_face_interpolation_matches_dense(rng, direction, side):
    k, d = 5, 3
    shape = lobatto_shape(k - 1, kind=BasisKind.LAGRANGE_GAUSS)  # every S_f entry nonzero
    u = rng.standard_normal((k**d, 2))
    out = np.empty((2 * k ** (d - 1), 2))
    face_normal_interpolation(d, direction, True, k, 1, shape, side, u, out)
    eye = np.eye(k)
    for r, row in enumerate((shape.Sf[side], shape.Df[side])):
        factors = [row[None, :] if c == direction else eye for c in range(d)]
        np.testing.assert_allclose(out[r * k * k : (r + 1) * k * k], dense_kronecker_apply(factors, u), atol=1e-13)
    # integration is the transpose
    y = rng.standard_normal(out.shape)
    back = np.empty_like(u)
    face_normal_interpolation(d, direction, False, k, 1, shape, side, y, back)
    assert abs((out * y).sum() - (u * back).sum()) < 1e-11


def test_hermite_face_ignores_interior_layers(rng):
    k, d = 5, 3
    shape = lobatto_shape(4, kind=BasisKind.HERMITE_LIKE)
    u = rng.standard_normal((k, k, k, 1))
    u[:, :, :2] = 0.0  # layers 0 and 1 along direction 0
    out = np.empty((2 * k * k, 1))
    face_normal_interpolation(d, 0, True, k, 1, shape, 0, u.reshape(-1, 1), out)
    assert np.all(out == 0.0)
    assert list(face_layers(shape, 0, 1)) == [0, 1]


def test_face_interpolation_rejects_bad_direction():
    shape = lobatto_shape(2)
    with pytest.raises(ValueError):
        face_normal_interpolation(2, 2, True, 3, 0, shape, 0, np.zeros((9, 1)), np.zeros((3, 1)))


def test_identity_stripe():
    x = np.arange(6.0).reshape(6, 1)
    np.testing.assert_array_equal(apply_1d(np.eye(6), x, 0, form=EVEN_ODD), x)


def test_even_odd_cost_k4():
    shape = lobatto_shape(3)
    c = KernelCounters()
    apply_1d(shape.S, np.ones((4, 1)), 0, form=EVEN_ODD, packed=shape.S_eo, counters=c)
    assert (c.adds, c.mults, c.fmas) == (8, 4, 4)


@pytest.mark.parametrize("k", range(2, 17))
def test_even_odd_same_flops_as_formula(k):
    # the total count agrees for every k; only odd k splits adds and FMAs differently
    a, m, f = even_odd_stripe_cost(pack_even_odd(lobatto_shape(k - 1).S, 1))
    assert a + m + 2 * f == 2 * k + k + 2 * ((k * (k - 2)) // 2)
    assert m == k


def test_plain_stripe_cost():
    assert plain_stripe_cost(4, 4) == (0, 4, 12)


@given(k=st.integers(2, 16), transpose=st.booleans(), which=st.sampled_from(["S", "Dco"]), seed=st.integers(0, 999))
def test_even_odd_matches_plain(k, transpose, which, seed):
    shape = lobatto_shape(k - 1)
    M = getattr(shape, which)
    packed = getattr(shape, f"{which}t_eo" if transpose else f"{which}_eo")
    x = np.random.default_rng(seed).standard_normal((3, k, 5))
    a = apply_1d(M, x, 0, transpose=transpose)
    b = apply_1d(M, x, 0, transpose=transpose, form=EVEN_ODD, packed=packed)
    assert np.abs(a - b).max() <= 1e-13 * max(1, np.abs(a).max())


def test_even_odd_rejects_unsymmetric():
    M = np.arange(9.0).reshape(3, 3)
    with pytest.raises(ValueError):
        pack_even_odd(M, 1)


def test_kronecker_guard():
    with pytest.raises(OracleGuardError):
        dense_kronecker_apply([np.eye(9)] * 2, np.zeros(81))
    with pytest.raises(OracleGuardError):
        dense_kronecker_apply([np.eye(2)] * 4, np.zeros(16))


def test_kronecker_identity_and_1d(rng):
    x = rng.standard_normal(27)
    np.testing.assert_array_equal(dense_kronecker_apply([np.eye(3)] * 3, x), x)
    A = rng.standard_normal((3, 3))
    np.testing.assert_allclose(dense_kronecker_apply([A], x[:3]), A @ x[:3])


def _laplace_qop(C):
    def qop(grad, index):
        return np.einsum("ab...,b...->a...", C[(slice(None), slice(None)) + tuple(index)], grad)
    return qop


@pytest.mark.parametrize("k", range(2, 9))
def test_tiled_laplacian_matches_untiled(rng, k):
    shape = lobatto_shape(k - 1)
    C = rng.standard_normal((3, 3, k, k, k, 2))
    qop = _laplace_qop(C + C.swapaxes(0, 1))
    u = rng.standard_normal((k**3, 2))
    a = untiled_cell_laplacian(shape, qop, u, np.empty_like(u))
    b = tiled_cell_laplacian(shape, qop, u, np.empty_like(u))
    assert np.abs(a - b).max() <= 1e-13 * np.abs(a).max()


def test_tiled_laplacian_of_constant_is_zero():
    k = 4
    shape = lobatto_shape(k - 1)
    C = np.broadcast_to(np.eye(3)[:, :, None, None, None, None], (3, 3, k, k, k, 1))
    out = tiled_cell_laplacian(shape, _laplace_qop(C), np.ones((k**3, 1)), np.empty((k**3, 1)))
    assert np.abs(out).max() < 1e-12


@pytest.mark.parametrize("tiled", [False, True])
def test_cell_laplacian_invocation_count(tiled):
    k = 4
    shape = lobatto_shape(k - 1)
    C = np.broadcast_to(np.eye(3)[:, :, None, None, None, None], (3, 3, k, k, k, 1))
    c = KernelCounters()
    fn = tiled_cell_laplacian if tiled else untiled_cell_laplacian
    fn(shape, _laplace_qop(C), np.ones((k**3, 1)), np.empty((k**3, 1)), counters=c)
    assert c.kernel_invocations == 12


def test_counters_reset_and_flops():
    c = KernelCounters()
    c.record_ops(3, 1, 2, 4)
    c.record_invocation("basis_change")
    assert c.flops_per_lane == 3 * (1 + 2 + 8)
    assert c.snapshot()["calls_basis_change"] == 1
    c.reset()
    assert c.flops_per_lane == 0 and c.kernel_invocations == 0


def test_lobatto_quadrature_available_for_kernels():
    # Lobatto points are symmetric too, so even-odd packing applies
    b = make_basis(BasisKind.LAGRANGE_GAUSS_LOBATTO, 3)
    shape = shape_matrices(b, gauss_lobatto_quadrature(4))
    np.testing.assert_allclose(shape.S, np.eye(4), atol=1e-14)

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dgbench.basis import (
    BasisKind,
    FaceAccess,
    Quadrature1D,
    UnsupportedBasisError,
    gauss_lobatto_quadrature,
    gauss_quadrature,
    make_basis,
    pack_even_odd,
    shape_matrices,
)


def test_gauss_one_point_is_midpoint():
    q = gauss_quadrature(1)
    assert q.points == pytest.approx([0.5])
    assert q.weights == pytest.approx([1.0])


def test_gauss_two_points():
    q = gauss_quadrature(2)
    s = 1 / (2 * np.sqrt(3))
    np.testing.assert_allclose(q.points, [0.5 - s, 0.5 + s], atol=1e-15)
    np.testing.assert_allclose(q.weights, [0.5, 0.5], atol=1e-15)


def test_gauss_exactness_degree_nine():
    q = gauss_quadrature(5)
    assert abs(q.weights @ q.points**9 - 0.1) < 1e-14


@pytest.mark.parametrize("n", [0, -3])
def test_gauss_rejects_empty_rule(n):
    with pytest.raises(ValueError):
        gauss_quadrature(n)


def test_lobatto_small_rules():
    q2 = gauss_lobatto_quadrature(2)
    np.testing.assert_allclose(q2.points, [0, 1])
    np.testing.assert_allclose(q2.weights, [0.5, 0.5])
    q3 = gauss_lobatto_quadrature(3)
    np.testing.assert_allclose(q3.points, [0, 0.5, 1], atol=1e-15)
    np.testing.assert_allclose(q3.weights, [1 / 6, 2 / 3, 1 / 6], atol=1e-15)


def test_lobatto_four_points_integrates_quintic():
    q = gauss_lobatto_quadrature(4)
    assert q.points[0] == 0.0 and q.points[-1] == 1.0
    assert abs(q.weights @ q.points**5 - 1 / 6) < 1e-14


def test_lobatto_needs_two_points():
    with pytest.raises(ValueError):
        gauss_lobatto_quadrature(1)


@given(st.integers(1, 20))
def test_gauss_rule_properties(n):
    q = gauss_quadrature(n)
    assert np.all(np.diff(q.points) > 0)
    assert abs(q.weights.sum() - 1) < 1e-14
    np.testing.assert_allclose(q.points + q.points[::-1], 1.0, atol=1e-14)
    for deg in range(2 * n):
        assert abs(q.weights @ q.points**deg - 1 / (deg + 1)) < 1e-13


@given(st.integers(2, 20))
def test_lobatto_rule_properties(n):
    q = gauss_lobatto_quadrature(n)
    assert abs(q.weights.sum() - 1) < 1e-14
    for deg in range(2 * n - 2):
        assert abs(q.weights @ q.points**deg - 1 / (deg + 1)) < 1e-13


def test_asymmetric_rule_rejected():
    with pytest.raises(ValueError):
        Quadrature1D(np.array([0.1, 0.5]), np.array([0.5, 0.5]))


def test_linear_lobatto_functions():
    b = make_basis(BasisKind.LAGRANGE_GAUSS_LOBATTO, 1)
    x = np.linspace(0, 1, 7)
    np.testing.assert_allclose(b.values(x), np.stack([1 - x, x], axis=1), atol=1e-15)


@pytest.mark.parametrize("kind", [BasisKind.LAGRANGE_GAUSS_LOBATTO, BasisKind.LAGRANGE_GAUSS])
@given(p=st.integers(1, 10), x=st.floats(0, 1))
def test_partition_of_unity(kind, p, x):
    assert abs(make_basis(kind, p).values(np.array([x])).sum() - 1) < 1e-13


def test_hermite_needs_cubic():
    with pytest.raises(UnsupportedBasisError):
        make_basis(BasisKind.HERMITE_LIKE, 2)


@pytest.mark.parametrize("p", [3, 4, 5, 8])
def test_hermite_face_sparsity(p):
    b = make_basis(BasisKind.HERMITE_LIKE, p)
    assert b.face_access is FaceAccess.HERMITE_TYPE_BASIS
    shape = shape_matrices(b, gauss_quadrature(p + 1))
    assert list(np.flatnonzero(shape.Sf[0])) == [0]
    assert set(np.flatnonzero(shape.Df[0])) <= {0, 1}
    for side in (0, 1):
        assert np.count_nonzero(shape.Sf[side]) <= 2
        assert np.count_nonzero(shape.Df[side]) <= 2


@pytest.mark.parametrize("p", [1, 3, 6])
def test_lobatto_is_nodal_on_faces(p):
    b = make_basis(BasisKind.LAGRANGE_GAUSS_LOBATTO, p)
    assert b.face_access is FaceAccess.NODAL_ON_FACES
    shape = shape_matrices(b, gauss_quadrature(p + 1))
    for side in (0, 1):
        assert np.count_nonzero(shape.Sf[side]) == 1


def test_collocation_shape_is_identity():
    p = 4
    shape = shape_matrices(make_basis(BasisKind.LAGRANGE_GAUSS, p), gauss_quadrature(p + 1))
    np.testing.assert_allclose(shape.S, np.eye(p + 1), atol=1e-14)
    np.testing.assert_allclose(shape.D, shape.Dco, atol=1e-12)


def test_too_few_quadrature_points():
    with pytest.raises(ValueError):
        shape_matrices(make_basis(BasisKind.LAGRANGE_GAUSS_LOBATTO, 3), gauss_quadrature(3))


@pytest.mark.parametrize("kind", list(BasisKind))
@pytest.mark.parametrize("p,extra", [(3, 0), (4, 1), (6, 0), (7, 2)])
def test_derivative_factorization(kind, p, extra):
    shape = shape_matrices(make_basis(kind, p), gauss_quadrature(p + 1 + extra))
    assert np.abs(shape.D - shape.Dco @ shape.S).max() <= 1e-13 * max(1, np.abs(shape.D).max())
    if kind is not BasisKind.HERMITE_LIKE:
        np.testing.assert_allclose(shape.S.sum(axis=1), 1.0, atol=1e-13)


@pytest.mark.parametrize("p", [1, 2, 3, 5, 8])
def test_shape_symmetry(p):
    shape = shape_matrices(make_basis(BasisKind.LAGRANGE_GAUSS_LOBATTO, p), gauss_quadrature(p + 1))
    np.testing.assert_allclose(shape.S, shape.S[::-1, ::-1], atol=1e-14)
    np.testing.assert_allclose(shape.D, -shape.D[::-1, ::-1], atol=1e-12)


@given(k=st.integers(2, 12), l_extra=st.integers(0, 3))
def test_even_odd_pack_round_trip(k, l_extra):
    p = k - 1
    shape = shape_matrices(make_basis(BasisKind.LAGRANGE_GAUSS_LOBATTO, p), gauss_quadrature(k + l_extra))
    for M, sign in ((shape.S, 1), (shape.D, -1), (shape.Dco, -1)):
        np.testing.assert_array_equal(pack_even_odd(M, sign).full(), M)

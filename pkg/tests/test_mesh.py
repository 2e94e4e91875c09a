import numpy as np
import pytest
from hypothesis import given, strategies as st

from dgbench.mesh import (
    InvalidMeshError,
    Partition,
    PolynomialDeformation,
    assign_face_owners,
    build_mesh,
    make_partition,
    partition_cells,
)


def split(mesh):
    faces = mesh.faces()
    return [f for f in faces if not f.is_boundary], [f for f in faces if f.is_boundary]


def test_face_counts_2d():
    inner, bdry = split(build_mesh(2, 4))
    assert (len(inner), len(bdry)) == (24, 16)


def test_face_counts_periodic():
    inner, bdry = split(build_mesh(2, 4, periodic=(True, True)))
    assert (len(inner), len(bdry)) == (32, 0)


def test_face_counts_3d():
    inner, bdry = split(build_mesh(3, 3))
    assert (len(inner), len(bdry)) == (54, 54)


def test_lower_cell_is_interior_side():
    inner, _ = split(build_mesh(2, (2, 1)))
    assert len(inner) == 1
    f = inner[0]
    assert (f.interior_cell, f.exterior_cell, f.interior_face_number, f.exterior_face_number) == (0, 1, 1, 0)


def test_boundary_ids():
    _, bdry = split(build_mesh(2, 2, boundary_ids=(7, 7, 3, 3)))
    assert {f.exterior_face_number for f in bdry} == {7, 3}
    assert all(f.exterior_cell is None for f in bdry)


def test_cell_periodic_with_itself():
    mesh = build_mesh(2, (1, 3), periodic=(True, False))
    self_faces = [f for f in mesh.faces() if not f.is_boundary and f.interior_cell == f.exterior_cell]
    assert len(self_faces) == 3
    assert all((f.interior_face_number, f.exterior_face_number) == (0, 1) for f in self_faces)


def test_cell_numbering_roundtrip():
    mesh = build_mesh(3, (2, 3, 4))
    for c in range(mesh.n_cells):
        assert mesh.cell_index(mesh.cell_multi_index(c)) == c
    assert mesh.cell_multi_index(1) == (1, 0, 0)


def test_cartesian_map_and_jacobian():
    mesh = build_mesh(2, (2, 4), extent=((0, 0), (2, 1)))
    x = mesh.map_points(3, np.array([[0.5, 0.5]]))[0, 0]
    np.testing.assert_allclose(x, [1.5, 0.375])
    J = mesh.jacobians(3, np.array([[0.2, 0.7]]))[0, 0]
    np.testing.assert_allclose(J, np.diag([1.0, 0.25]), atol=1e-14)


def test_deformed_mesh_keeps_boundary_and_volume():
    mesh = build_mesh(2, 3, mapping=PolynomialDeformation(2, 0.1))
    assert not mesh.is_cartesian
    pts = np.array([[0.0, s] for s in np.linspace(0, 1, 5)])
    x = mesh.map_points(0, pts)[0]
    np.testing.assert_allclose(x[:, 0], 0.0, atol=1e-14)


@pytest.mark.parametrize("kwargs", [
    dict(d=4, cells_per_dim=2),
    dict(d=2, cells_per_dim=(0, 2)),
    dict(d=2, cells_per_dim=2, extent=((0, 0), (0, 1))),
    dict(d=2, cells_per_dim=2, mapping="spherical"),
])
def test_invalid_mesh_arguments(kwargs):
    with pytest.raises(ValueError):
        build_mesh(**kwargs)


def test_deformation_amplitude_limited():
    with pytest.raises(ValueError):
        PolynomialDeformation(2, 0.5)
    assert issubclass(InvalidMeshError, ValueError)


def test_partition_sizes():
    mesh = build_mesh(2, (17, 1))
    p = partition_cells(mesh, 4)
    assert sorted(np.bincount(p.cell_owner).tolist(), reverse=True) == [5, 4, 4, 4]


def test_too_many_ranks():
    with pytest.raises(ValueError):
        partition_cells(build_mesh(2, 2), 5)


def test_from_owners():
    p = Partition.from_owners([1, 0, 1, 0])
    assert p.n_ranks == 2
    np.testing.assert_array_equal(p.owned_cells(1), [0, 2])


@given(nx=st.integers(1, 6), ny=st.integers(1, 6), ranks=st.integers(1, 6), periodic=st.booleans())
def test_face_owner_invariants(nx, ny, ranks, periodic):
    mesh = build_mesh(2, (nx, ny), periodic=(periodic, False))
    if ranks > mesh.n_cells:
        return
    p = make_partition(mesh, ranks)
    faces = mesh.faces()
    counts = {}
    for f, face in enumerate(faces):
        owners = {p.cell_owner[face.interior_cell]}
        if not face.is_boundary:
            owners.add(p.cell_owner[face.exterior_cell])
        # every face is computed by a rank owning one of its cells
        assert p.face_owner[f] in owners
        if len(owners) == 2:
            key = tuple(sorted(owners))
            counts.setdefault(key, {r: 0 for r in key})[p.face_owner[f]] += 1
    for c in counts.values():
        a, b = c.values()
        assert abs(a - b) <= 2 * mesh.d
    for r in range(ranks):
        assert not set(p.ghost_cells[r]) & set(p.owned_cells(r))


def test_assign_face_owners_from_explicit_partition():
    mesh = build_mesh(2, 2)
    p = assign_face_owners(mesh, Partition.from_owners([0, 1, 1, 0]))
    assert len(p.face_owner) == len(mesh.faces())
    # each cell touches two interface faces, so one rank computes all four
    assert sorted(np.bincount(p.face_owner[[f for f, x in enumerate(mesh.faces()) if not x.is_boundary]]).tolist()) == [0, 4]
    assert sum(len(g) for g in p.ghost_cells) == 2

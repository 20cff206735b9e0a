import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from spatialhmc import mesh
from spatialhmc.errors import AllCollinear, DimensionMismatch, DuplicatePoints, PointOutsideMesh

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def random_points(seed, n=30):
    return np.random.default_rng(seed).uniform(0, 1, size=(n, 2))


def test_minimal_simplex():
    m = mesh.triangulate(REF, extension=0.0)
    assert m.n_triangles == 1
    assert m.n_vertices == 3


def test_square_has_two_triangles():
    sq = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    m = mesh.triangulate(sq, extension=0.0)
    assert m.n_triangles == 2
    assert m.n_vertices == 4
    assert np.isclose(m.areas().sum(), 1.0)


def test_collinear_points_rejected():
    with pytest.raises(AllCollinear):
        mesh.triangulate([[0, 0], [1, 1], [2, 2]], extension=0.0)


def test_duplicate_points_rejected():
    with pytest.raises(DuplicatePoints):
        mesh.triangulate([[0, 0], [1, 0], [0, 1], [1, 0]], extension=0.0)


def test_bad_shape_rejected():
    with pytest.raises(DimensionMismatch):
        mesh.triangulate(np.zeros((4, 3)))


def test_reference_triangle_fem():
    fem = mesh.assemble_fem(mesh.triangulate(REF, extension=0.0))
    np.testing.assert_allclose(fem.c_diag, [1 / 6, 1 / 6, 1 / 6], atol=1e-15)
    G1 = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    np.testing.assert_allclose(fem.G1.toarray(), G1, atol=1e-15)
    np.testing.assert_allclose(fem.G2.toarray(), G1 @ np.diag(6 * np.ones(3)) @ G1, atol=1e-13)


def test_triangles_are_counter_clockwise():
    m = mesh.triangulate(random_points(1))
    assert np.all(m.areas() > 0)


def test_data_vertices_come_first():
    pts = random_points(2)
    m = mesh.triangulate(pts, extension=0.2)
    np.testing.assert_array_equal(m.vertices[: len(pts)], pts)
    assert m.n_data == len(pts)
    assert m.n_vertices == len(pts) + 32


@given(st.integers(0, 10_000))
def test_stiffness_rows_sum_to_zero(seed):
    fem = mesh.assemble_fem(mesh.triangulate(random_points(seed, 15)))
    np.testing.assert_allclose(np.asarray(fem.G1.sum(axis=1)).ravel(), 0.0, atol=1e-10)


@given(st.integers(0, 10_000))
def test_fem_matrices_symmetric_psd(seed):
    fem = mesh.assemble_fem(mesh.triangulate(random_points(seed, 12), extension=0.1))
    for M in (fem.G1, fem.G2):
        A = M.toarray()
        np.testing.assert_allclose(A, A.T, atol=1e-12)
        assert np.linalg.eigvalsh(0.5 * (A + A.T)).min() >= -1e-10


def test_sparsity_pattern_of_composite():
    fem = mesh.assemble_fem(mesh.triangulate(random_points(3)))
    assert sp.issparse(fem.G2)
    # G2 couples at most second neighbours, so it stays far from dense
    assert fem.G2.nnz < 0.6 * fem.n**2


def refine_at_centroids(m):
    verts = [m.vertices]
    tris = []
    n = m.n_vertices
    for k, (a, b, c) in enumerate(m.triangles):
        verts.append(m.vertices[[a, b, c]].mean(axis=0)[None])
        g = n + k
        tris += [(a, b, g), (b, c, g), (c, a, g)]
    v = np.vstack(verts)
    return mesh.Mesh(vertices=v, triangles=np.array(tris), boundary=np.zeros(len(v), bool),
                     n_data=m.n_data)


@given(st.integers(0, 10_000))
def test_refinement_keeps_total_mass(seed):
    m = mesh.triangulate(random_points(seed, 10))
    total = mesh.assemble_fem(m).c_diag.sum()
    refined = mesh.assemble_fem(refine_at_centroids(m)).c_diag.sum()
    assert abs(total - refined) < 1e-10


def test_projector_vertex_and_centroid():
    m = mesh.triangulate(random_points(4), extension=0.0)
    A = mesh.projector(m, m.vertices[[5]]).toarray()
    expected = np.zeros(m.n_vertices)
    expected[5] = 1.0
    np.testing.assert_allclose(A[0], expected, atol=1e-12)
    tri = m.triangles[0]
    A = mesh.projector(m, m.vertices[tri].mean(axis=0)[None]).toarray()
    np.testing.assert_allclose(A[0, tri], [1 / 3] * 3, atol=1e-12)
    assert abs(A.sum() - 1.0) < 1e-12


def test_projector_outside_hull():
    m = mesh.triangulate(REF, extension=0.0)
    with pytest.raises(PointOutsideMesh) as info:
        mesh.projector(m, [[0.2, 0.2], [2.0, 2.0]])
    assert info.value.index == 1


@given(st.integers(0, 10_000))
def test_projector_reproduces_affine_functions(seed):
    m = mesh.triangulate(random_points(seed, 20))
    targets = np.random.default_rng(seed + 1).uniform(0, 1, size=(25, 2))
    A = mesh.projector(m, targets)
    f = 2.0 + 3.0 * m.vertices[:, 0] - m.vertices[:, 1]
    np.testing.assert_allclose(A @ m.vertices[:, 0], targets[:, 0], atol=1e-10)
    np.testing.assert_allclose(A @ f, 2.0 + 3.0 * targets[:, 0] - targets[:, 1], atol=1e-10)


def test_shared_edge_goes_to_lowest_triangle():
    sq = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    m = mesh.triangulate(sq, extension=0.0)
    tri_index, _ = mesh.locate(m, [[0.5, 0.5]])
    assert tri_index[0] == 0


def test_grid_mesh_covers_bounds():
    m = mesh.grid_mesh(5, 4, bounds=(0, 2, 0, 1))
    assert m.n_vertices == 20
    assert m.n_triangles == 24
    assert np.isclose(m.areas().sum(), 2.0)
    assert m.boundary.sum() == 14


def test_mesh_roundtrip(tmp_path):
    m = mesh.triangulate(random_points(5))
    path = tmp_path / "mesh.txt"
    mesh.write_mesh(m, path)
    back = mesh.read_mesh(path)
    np.testing.assert_allclose(back.vertices, m.vertices)
    np.testing.assert_array_equal(back.triangles, m.triangles)
    assert back.n_data == m.n_data


def test_triangulation_is_deterministic():
    pts = random_points(6)
    a = mesh.triangulate(pts)
    b = mesh.triangulate(pts.copy())
    np.testing.assert_array_equal(a.triangles, b.triangles)

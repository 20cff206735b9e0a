import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spatialhmc import tps
from spatialhmc.errors import DimensionMismatch, DuplicatePoints, RankOutOfBounds

from conftest import central_diff


def points(seed, n):
    return np.random.default_rng(seed).uniform(0, 1, size=(n, 2))


def test_kernel_values():
    np.testing.assert_array_equal(tps.tps_kernel([0.0, 1.0]), [0.0, 0.0])
    assert abs(tps.tps_kernel(2.0) - 4 * math.log(2)) < 1e-15
    assert abs(float(tps.tps_kernel(2.0)) - 2.772589) < 1e-6


def test_build_full_small_cases():
    E, P = tps.build_full([[0.0, 0.0], [1.0, 0.0]])
    np.testing.assert_array_equal(E, np.zeros((2, 2)))
    E, P = tps.build_full(points(1, 3))
    assert P.shape == (3, 3)
    np.testing.assert_array_equal(P[:, 0], 1.0)


def test_build_full_matches_double_loop():
    pts = points(2, 10)
    E, _ = tps.build_full(pts)
    ref = np.zeros((10, 10))
    for i in range(10):
        for j in range(10):
            r = math.dist(pts[i], pts[j])
            ref[i, j] = 0.0 if r == 0 else r * r * math.log(r)
    assert np.abs(E - ref).max() < 1e-14


def test_build_full_rejects_duplicates():
    with pytest.raises(DuplicatePoints):
        tps.build_full([[0.0, 0.0], [0.5, 0.5], [0.0, 0.0]])


def reconstruct(U, D):
    return (U * D) @ U.T


@pytest.mark.parametrize("k", [1, 5, 10, 25, 50])
def test_truncation_error_is_tail_energy(k):
    E, _ = tps.build_full(points(3, 50))
    U, D = tps.truncate(E, k)
    lam = np.linalg.eigvalsh(E)
    tail = np.sort(np.abs(lam))[::-1][k:]
    err = np.linalg.norm(E - reconstruct(U, D), "fro")
    assert abs(err - math.sqrt(np.sum(tail**2))) < 1e-8


def test_full_rank_reconstruction():
    E, _ = tps.build_full(points(4, 50))
    U, D = tps.truncate(E, 50)
    assert np.linalg.norm(E - reconstruct(U, D), "fro") < 1e-10


def test_rank_one():
    E, _ = tps.build_full(points(5, 12))
    U, D = tps.truncate(E, 1)
    assert np.linalg.matrix_rank(reconstruct(U, D)) == 1


def test_eigenvalues_have_mixed_signs_and_magnitude_order():
    E, _ = tps.build_full(points(6, 20))
    _, D = tps.truncate(E, 20)
    assert np.any(D > 0) and np.any(D < 0)
    assert np.all(np.diff(np.abs(D)) <= 1e-12)


def test_rank_bounds():
    E, _ = tps.build_full(points(7, 6))
    for k in (0, 7):
        with pytest.raises(RankOutOfBounds):
            tps.truncate(E, k)
    with pytest.raises(DimensionMismatch):
        tps.truncate(np.zeros((3, 4)), 1)


@given(st.integers(0, 1000), st.integers(1, 7))
def test_truncation_optimal_over_eigen_subsets(seed, k):
    E, _ = tps.build_full(points(seed, 8))
    lam, vec = np.linalg.eigh(E)
    U, D = tps.truncate(E, k)
    best = np.linalg.norm(E - reconstruct(U, D), "fro")
    for subset in itertools.combinations(range(8), k):
        s = list(subset)
        other = np.linalg.norm(E - reconstruct(vec[:, s], lam[s]), "fro")
        assert best <= other + 1e-10


def test_data_mode_spectral_identities():
    pts = points(8, 15)
    basis = tps.data_basis(pts, 15)
    B = tps.design_columns(basis)
    for j in (0, 4, 14):
        # coefficient vector U[j, :] rebuilds column j of E
        np.testing.assert_allclose(B @ basis.U[j], basis.E[:, j], atol=1e-10)
        # e_j / lambda_j rebuilds eigenvector j
        e = np.zeros(15)
        e[j] = 1.0 / basis.D[j]
        np.testing.assert_allclose(B @ e, basis.U[:, j], atol=1e-10)


def test_zero_coefficients():
    basis = tps.data_basis(points(9, 12), 6)
    np.testing.assert_array_equal(tps.design_columns(basis) @ np.zeros(6), 0.0)
    np.testing.assert_array_equal(tps.predict_at(basis, np.zeros(6), points(10, 5)), 0.0)


def test_knot_basis_matches_data_basis_at_knots():
    pts = points(11, 40)
    idx = tps.select_knots(pts, 10)
    knots = pts[idx]
    kb = tps.knot_basis(knots, knots)
    db = tps.data_basis(knots, 10)
    # eigenvectors are defined up to sign
    signs = np.sign(np.sum(kb.U * db.U, axis=0))
    np.testing.assert_allclose(kb.design, db.design * signs, atol=1e-10)
    full = tps.knot_basis(pts, knots)
    np.testing.assert_allclose(full.design[idx], kb.design, atol=1e-10)


def test_predict_at_anchors_matches_design():
    pts = points(12, 20)
    basis = tps.data_basis(pts, 8)
    c = np.random.default_rng(0).standard_normal(8)
    np.testing.assert_allclose(tps.predict_at(basis, c, pts, centered=False),
                               basis.design @ c, atol=1e-12)
    np.testing.assert_allclose(tps.predict_at(basis, c, pts), basis.centered_design @ c,
                               atol=1e-12)


def test_predict_accepts_coefficient_stack():
    basis = tps.knot_basis(points(13, 30), points(14, 6))
    C = np.random.default_rng(1).standard_normal((6, 4))
    out = tps.predict_at(basis, C, points(15, 7))
    assert out.shape == (7, 4)
    np.testing.assert_allclose(out[:, 2], tps.predict_at(basis, C[:, 2], points(15, 7)))
    with pytest.raises(DimensionMismatch):
        tps.predict_at(basis, np.zeros(5), points(15, 7))


def test_centered_design_has_zero_column_means():
    basis = tps.knot_basis(points(16, 60), points(17, 8))
    np.testing.assert_allclose(basis.centered_design.mean(axis=0), 0.0, atol=1e-12)


def test_linear_surface_reproduced():
    pts = points(18, 60)
    y = pts[:, 0] + pts[:, 1]
    X = np.column_stack([np.ones(60), pts])
    basis = tps.knot_basis(pts, pts[tps.select_knots(pts, 12)])
    b, c = tps.fit_penalized(X, basis.centered_design, y, 1.0, tps.penalty_matrix(basis))
    g = np.linspace(0.05, 0.95, 15)
    gx, gy = np.meshgrid(g, g)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    pred = np.column_stack([np.ones(len(grid)), grid]) @ b + tps.predict_at(basis, c, grid)
    assert np.sqrt(np.mean((pred - grid.sum(axis=1)) ** 2)) < 1e-6


def test_penalty_examples():
    spec = tps.PenaltySpec(S=np.ones(2), lam=2.0)
    v, g = tps.penalty_value_grad(np.zeros(2), spec)
    assert v == 0.0 and np.all(g == 0.0)
    v, g = tps.penalty_value_grad(np.ones(2), spec)
    assert v == 2.0
    np.testing.assert_array_equal(g, [2.0, 2.0])
    v2, _ = tps.penalty_value_grad(np.ones(2), tps.PenaltySpec(S=np.eye(2), lam=2.0))
    assert v2 == 2.0


def test_penalty_gradient_fd(rng):
    S = np.abs(rng.standard_normal(6))
    spec = tps.PenaltySpec(S=S, lam=0.7)
    c = rng.standard_normal(6)
    _, g = tps.penalty_value_grad(c, spec)
    fd = central_diff(lambda x: tps.penalty_value_grad(x, spec)[0], c, h=1e-5)
    assert np.max(np.abs(g - fd) / np.maximum(np.abs(g), 1.0)) < 1e-8


def test_penalty_validation():
    with pytest.raises(ValueError):
        tps.PenaltySpec(S=np.ones(2), lam=0.0)
    with pytest.raises(ValueError):
        tps.PenaltySpec(S=-np.ones(2), lam=1.0)
    with pytest.raises(DimensionMismatch):
        tps.penalty_value_grad(np.ones(3), tps.PenaltySpec(S=np.ones(2), lam=1.0))


def test_penalty_is_psd_diagonal():
    basis = tps.data_basis(points(19, 20), 10)
    S = tps.penalty_matrix(basis)
    np.testing.assert_allclose(S, np.abs(basis.D))
    assert np.all(S >= 0)


@given(st.integers(0, 1000), st.integers(4, 12))
def test_natural_constraint(seed, k):
    basis = tps.data_basis(points(seed, 12), k)
    Z = tps.natural_constraint(basis)
    if Z.size:
        assert np.abs(basis.P.T @ basis.U @ Z).max() < 1e-10


@given(st.integers(0, 1000))
def test_spectral_quadratic_matches_dense(seed):
    pts = points(seed, 10)
    basis = tps.data_basis(pts, 10)
    c = np.random.default_rng(seed).standard_normal(10)
    assert abs(tps.spectral_quadratic(basis, c) - c @ basis.E @ c) < 1e-10


def test_knot_selection():
    pts = points(20, 100)
    a = tps.select_knots(pts, 15, seed=3)
    b = tps.select_knots(pts, 15, seed=3)
    np.testing.assert_array_equal(a, b)
    assert len(set(a.tolist())) == 15
    with pytest.raises(RankOutOfBounds):
        tps.select_knots(pts, 101)


def test_default_knot_rule():
    assert tps.default_knot_count(900) == 90
    assert tps.default_knot_count(100) == 10
    assert tps.default_knot_count(20) == 4

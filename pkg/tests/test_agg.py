import numpy as np
import pytest
import scipy.sparse as sp

from kappagcn.agg import gyromidpoint, left_matmul, right_matmul, tangential_agg
from kappagcn.checks import random_points
from kappagcn.errors import DegenerateMidpointError, ShapeError, ZeroWeightError
from kappagcn.manifold import (atan_k, distance, exp_map, kappa_scale, log_map, random_isometry,
                               stereo_lift, stereo_project, tan_k)


def frechet_mean(X, alpha, k, steps=2000, lr=0.05):
    """Weighted Frechet mean by Riemannian gradient descent on
    sum_i alpha_i d(m, x_i)^2 (test oracle)."""
    alpha = np.asarray(alpha, float) / np.sum(alpha)
    m = X[0].copy()
    for _ in range(steps):
        v = np.sum(alpha[:, None] * log_map(m, X, k), axis=0)
        m = exp_map(m, 2 * lr * v, k)
    return m


def stochastic(rng, n):
    A = rng.uniform(0.1, 1.0, (n, n))
    return A / A.sum(axis=1, keepdims=True)


def test_single_point_midpoint():
    x = np.array([[0.3, -0.2]])
    for k in (-1.0, 0.0, 0.8):
        np.testing.assert_allclose(gyromidpoint(x, np.array([1.0]), k), x[0], atol=1e-15)


def test_flat_midpoint_is_weighted_mean():
    np.testing.assert_allclose(gyromidpoint(np.eye(2), np.array([1.0, 3.0]), 0.0), [0.25, 0.75])


def test_hyperbolic_two_point_midpoint_is_equidistant_and_frechet():
    rng = np.random.default_rng(0)
    X = random_points(rng, 2, 3, -1.0, 0.7)
    m = gyromidpoint(X, np.array([1.0, 1.0]), -1.0)
    assert abs(float(distance(X[0], m, -1.0)) - float(distance(X[1], m, -1.0))) < 1e-9
    np.testing.assert_allclose(m, frechet_mean(X, [1, 1], -1.0), atol=1e-6)


def test_spherical_degenerate_pair_raises():
    X = np.array([[0.5, 0.0], [-2.0, 0.0]])  # k |x| |y| = 1
    with pytest.raises(DegenerateMidpointError):
        gyromidpoint(X, np.array([1.0, 1.0]), 1.0)


def test_zero_weights_in_flat_space():
    with pytest.raises(ZeroWeightError):
        gyromidpoint(np.eye(2), np.array([1.0, -1.0]), 0.0)


def test_midpoint_weight_scale_invariance():
    rng = np.random.default_rng(1)
    for k in (-1.0, 0.0, 0.5):
        X = random_points(rng, 5, 3, k, 0.5)
        a = rng.uniform(0.1, 1, 5)
        np.testing.assert_array_equal(gyromidpoint(X, 4.0 * a, k), gyromidpoint(X, a, k))


def test_symmetric_pair_midpoint_is_origin():
    x = np.array([0.4, -0.3, 0.1])
    np.testing.assert_allclose(gyromidpoint(np.stack([x, -x]), np.ones(2), -1.0), 0.0, atol=1e-12)


def test_midpoint_shape_error():
    with pytest.raises(ShapeError):
        gyromidpoint(np.eye(3), np.ones(2), -1.0)


def test_right_matmul_identity_and_flat():
    rng = np.random.default_rng(2)
    X = random_points(rng, 4, 3, -1.0, 0.6)
    np.testing.assert_allclose(right_matmul(X, np.eye(3), -1.0), X, atol=1e-15)
    W = rng.standard_normal((3, 2))
    np.testing.assert_allclose(right_matmul(X, W, 0.0), X @ W)


def test_right_matmul_matches_rowwise_definition():
    rng = np.random.default_rng(3)
    k = -1.0
    X = random_points(rng, 6, 3, k, 0.6)
    W = 0.5 * rng.standard_normal((3, 4))
    XW = X @ W
    nx = np.linalg.norm(X, axis=1, keepdims=True)
    nxw = np.linalg.norm(XW, axis=1, keepdims=True)
    ref = tan_k(nxw / nx * atan_k(nx, k), k) * XW / nxw
    np.testing.assert_allclose(right_matmul(X, W, k), ref, atol=1e-10)


def test_left_matmul_examples():
    rng = np.random.default_rng(4)
    X = random_points(rng, 5, 3, -1.0, 0.6)
    np.testing.assert_allclose(left_matmul(np.eye(5), X, -1.0), X, atol=1e-15)
    A = np.full((2, 2), 0.5)
    np.testing.assert_allclose(left_matmul(A, np.eye(2), 0.0), [[0.5, 0.5], [0.5, 0.5]])


@pytest.mark.parametrize("k", [-1.0, 0.5])
def test_left_matmul_scalar_associativity(k):
    rng = np.random.default_rng(5)
    X = random_points(rng, 5, 3, k, 0.5)
    A = stochastic(rng, 5)
    np.testing.assert_allclose(kappa_scale(0.7, left_matmul(A, X, k), k), left_matmul(0.7 * A, X, k),
                               atol=1e-10)


def test_left_matmul_rows_are_scaled_midpoints():
    rng = np.random.default_rng(6)
    k = -0.7
    X = random_points(rng, 4, 2, k, 0.5)
    A = rng.uniform(0.1, 1.0, (3, 4))
    out = left_matmul(A, X, k)
    for i in range(3):
        ref = kappa_scale(A[i].sum(), gyromidpoint(X, A[i], k), k)
        np.testing.assert_allclose(out[i], ref, atol=1e-14)


def test_left_matmul_sparse_equals_dense():
    rng = np.random.default_rng(7)
    X = random_points(rng, 6, 3, -1.0, 0.5)
    A = stochastic(rng, 6) * (rng.uniform(size=(6, 6)) < 0.5) + np.eye(6)
    np.testing.assert_allclose(left_matmul(sp.csr_matrix(A), X, -1.0), left_matmul(A, X, -1.0), atol=1e-15)


def test_left_matmul_reports_degenerate_row():
    X = np.array([[0.5, 0.0], [-2.0, 0.0], [0.1, 0.1]])
    A = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    with pytest.raises(DegenerateMidpointError) as info:
        left_matmul(A, X, 1.0)
    assert info.value.row == 0


def test_left_matmul_zero_row_gives_origin_with_warning():
    X = np.array([[0.2, 0.1], [0.3, -0.2]])
    A = np.array([[0.5, 0.5], [0.0, 0.0]])
    with pytest.warns(RuntimeWarning):
        out = left_matmul(A, X, -1.0)
    np.testing.assert_array_equal(out[1], [0.0, 0.0])


@pytest.mark.parametrize("k", [-1.0, 0.5])
def test_left_matmul_is_intrinsic(k):
    rng = np.random.default_rng(8)
    for _ in range(50):
        phi = random_isometry(rng, 3, k)
        X, Y = random_points(rng, 5, 3, k, 0.5), random_points(rng, 5, 3, k, 0.5)
        A, B = stochastic(rng, 5), stochastic(rng, 5)
        before = distance(left_matmul(A, X, k), left_matmul(B, Y, k), k)
        after = distance(left_matmul(A, phi(X), k), left_matmul(B, phi(Y), k), k)
        np.testing.assert_allclose(after, before, atol=1e-8)


def test_tangential_agg_examples():
    rng = np.random.default_rng(9)
    for k in (-1.0, 0.5):
        x, x1 = random_points(rng, 2, 3, k, 0.5)
        np.testing.assert_allclose(tangential_agg(x, x1[None], np.ones(1), k), x1, atol=1e-12)
    X = rng.standard_normal((4, 3))
    a = rng.uniform(size=4)
    np.testing.assert_allclose(tangential_agg(np.zeros(3), X, a, 0.0), a @ X)
    x = rng.standard_normal(3)
    np.testing.assert_allclose(tangential_agg(x, X, a, 0.0), x + a @ (X - x))


@pytest.mark.parametrize("k", [-1.0, 0.5])
def test_tangential_agg_equivariance(k):
    rng = np.random.default_rng(10)
    for _ in range(50):
        phi = random_isometry(rng, 3, k)
        X = random_points(rng, 5, 3, k, 0.5)
        x = random_points(rng, 1, 3, k, 0.5)[0]
        a = rng.uniform(0.1, 1.0, 5)
        a /= a.sum()
        lhs = tangential_agg(phi(x[None])[0], phi(X), a, k)
        rhs = phi(tangential_agg(x, X, a, k)[None])[0]
        np.testing.assert_allclose(lhs, rhs, atol=1e-8)


@pytest.mark.parametrize("k", [-1e-7, 1e-7])
def test_near_flat_operations_match_euclidean(k):
    rng = np.random.default_rng(11)
    X = rng.uniform(-1, 1, (5, 3))
    a = rng.uniform(0.1, 1, 5)
    A = stochastic(rng, 5)
    W = rng.standard_normal((3, 3))
    x = rng.uniform(-1, 1, 3)
    assert np.max(np.abs(gyromidpoint(X, a, k) - a @ X / a.sum())) < 1e-5
    assert np.max(np.abs(left_matmul(A, X, k) - A @ X)) < 1e-5
    assert np.max(np.abs(right_matmul(X, W, k) - X @ W)) < 1e-5
    assert np.max(np.abs(tangential_agg(x, X, a, k) - (x + a @ (X - x)))) < 1e-5


def test_spherical_midpoint_beyond_the_equator():
    # |x| > 1/sqrt(k) puts a point in the far hemisphere, where sum alpha (lambda - 1) < 0
    x = np.array([[2.0, 0.0]])
    np.testing.assert_allclose(gyromidpoint(x, np.ones(1), 1.0), x[0], atol=1e-14)
    X = np.array([[1.8, 0.2], [2.3, -0.1], [1.5, 0.4]])
    a = np.array([1.0, 2.0, 0.5])
    # normalised weighted sum of the points on the ambient sphere
    s = a @ stereo_lift(X, 1.0)
    np.testing.assert_allclose(gyromidpoint(X, a, 1.0), stereo_project(s / np.linalg.norm(s), 1.0), atol=1e-12)
    pair = X[:2]
    np.testing.assert_allclose(gyromidpoint(pair, np.ones(2), 1.0), frechet_mean(pair, [1, 1], 1.0), atol=1e-6)


def test_spherical_midpoint_is_continuous_across_the_equator():
    k = 1.0
    base = np.array([[1.0, 0.05], [1.0, -0.05]])
    ms = [gyromidpoint(base * s, np.ones(2), k) for s in np.linspace(0.98, 1.02, 41)]
    steps = np.linalg.norm(np.diff(ms, axis=0), axis=1)
    assert steps.max() < 5e-3


def test_spherical_midpoint_gradient_beyond_the_equator():
    from kappagcn import autodiff as ad

    X = np.array([[1.8, 0.2], [2.3, -0.1], [1.5, 0.4]])
    a = np.array([1.0, 2.0, 0.5])
    assert ad.gradcheck(lambda x, w, k: ad.sum(gyromidpoint(x, w, k) ** 2), [X, a, np.array(0.9)]) < 1e-6

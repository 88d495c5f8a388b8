import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import minimize_scalar

from kappagcn import autodiff as ad
from kappagcn.errors import ConfigError, ShapeError
from kappagcn.graph import Graph, normalize_adjacency, sbm
from kappagcn.manifold import conformal_factor, distance, exp0, kappa_add, log0
from kappagcn.model import (ModelConfig, _drop_adjacency, class_scores, embed, euclidean_gcn_forward,
                            forward, init_params, kappa_logits, kappa_of, kgcn_layer, mobius_nonlin,
                            parse_manifold, preprocess_features, product_distance, product_split)


def small_graph(n=10, feats=4, classes=2, seed=0):
    rng = np.random.default_rng(seed)
    edges = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    extra = rng.integers(n, size=(n, 2))
    return Graph(n, np.vstack([edges, extra]), rng.standard_normal((n, feats)),
                 rng.integers(classes, size=n), classes)


def test_preprocess_examples():
    X = np.array([[4.0, 0.0], [1.0, 1.0]])
    np.testing.assert_allclose(preprocess_features(X, -1.0)[0], [0.5, 0.0])
    np.testing.assert_array_equal(preprocess_features(np.zeros((3, 2)), -1.0), 0.0)
    np.testing.assert_array_equal(preprocess_features(X, 0.0), X)
    Y = preprocess_features(X, 4.0)
    assert np.max(np.linalg.norm(Y, axis=1)) == pytest.approx(0.25)


def test_mobius_nonlin_examples():
    rng = np.random.default_rng(0)
    X = 0.3 * rng.standard_normal((4, 3))
    np.testing.assert_array_equal(mobius_nonlin(X, None, -1.0), X)
    np.testing.assert_allclose(mobius_nonlin(X, "relu", 0.0), np.maximum(X, 0.0), atol=1e-15)
    x = np.array([[-0.3, 0.4]])
    out = mobius_nonlin(x, "relu", -1.0)
    assert out[0, 0] == 0.0 and out[0, 1] > 0
    np.testing.assert_allclose(out, exp0(np.maximum(log0(x, -1.0), 0.0), -1.0))


def test_layer_identity_and_shape():
    rng = np.random.default_rng(1)
    H = 0.2 * rng.standard_normal((5, 4))
    for k in (-1.0, 0.7):
        out = kgcn_layer(H, np.eye(4), sp.identity(5, format="csr"), k, sigma="identity")
        np.testing.assert_allclose(out, H, atol=1e-14)
    A = normalize_adjacency(Graph(5, [[0, 1], [1, 2], [3, 4]]))
    assert kgcn_layer(H, rng.standard_normal((4, 3)), A, -1.0).shape == (5, 3)
    with pytest.raises(ShapeError):
        kgcn_layer(H, np.ones((3, 3)), A, -1.0)


@pytest.mark.parametrize("k", [-1e-7, 1e-7])
@pytest.mark.parametrize("sigma", ["relu", "tanh", "identity"])
def test_layer_matches_flat_gcn_near_zero_curvature(k, sigma):
    rng = np.random.default_rng(2)
    G = small_graph(8, 4)
    A = normalize_adjacency(G)
    H = rng.uniform(-1, 1, (8, 4))
    W = rng.standard_normal((4, 3))
    f = {"relu": lambda v: np.maximum(v, 0), "tanh": np.tanh, "identity": lambda v: v}[sigma]
    assert np.max(np.abs(kgcn_layer(H, W, A, k, sigma) - f(A @ H @ W))) < 1e-4


def test_logit_vanishes_on_the_hyperplane():
    a = np.array([[1.0, 0.0]])
    p = np.array([[0.2, 0.1]])
    x = kappa_add(p[0], np.array([0.0, 0.3]), -1.0)[None]  # -p (+) x = [0, 0.3]
    assert abs(kappa_logits(x, a, p, -1.0)[0, 0]) < 1e-14


def test_logits_continuous_through_zero():
    rng = np.random.default_rng(3)
    H = 0.3 * rng.standard_normal((6, 3))
    a = rng.standard_normal((4, 3))
    p = 0.2 * rng.standard_normal((4, 3))
    lo, hi = kappa_logits(H, a, p, -1e-7), kappa_logits(H, a, p, 1e-7)
    # a step across zero changes the logits like an equal step on one side
    step = kappa_logits(H, a, p, 3e-7) - hi
    np.testing.assert_allclose(hi - lo, step, atol=1e-10)
    small = 0.1 * H
    np.testing.assert_allclose(kappa_logits(small, a, p, -1e-7), kappa_logits(small, a, p, 1e-7), rtol=1e-6)


def brute_force_hyperplane_distance(x, a, p, k=-1.0):
    """Distance from x to {w : <-p (+) w, a> = 0}, found by searching along
    the line through the origin orthogonal to a, moved by p (2-D only)."""
    u = np.array([-a[1], a[0]]) / np.linalg.norm(a)
    R = 1.0 / np.sqrt(-k)

    def f(s):
        return float(distance(x, kappa_add(p, s * u, k), k))

    grid = np.linspace(-R, R, 20001)[1:-1]
    vals = np.array([f(s) for s in grid])
    i = int(np.argmin(vals))
    res = minimize_scalar(f, bounds=(grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]),
                          method="bounded", options={"xatol": 1e-13})
    return min(res.fun, vals[i])


def test_logits_are_scaled_hyperplane_distances():
    rng = np.random.default_rng(4)
    k = -1.0
    for _ in range(5):
        x = rng.uniform(-0.5, 0.5, 2)
        a = rng.standard_normal(2)
        p = rng.uniform(-0.4, 0.4, 2)
        logit = float(kappa_logits(x[None], a[None], p[None], k)[0, 0])
        scale = float(conformal_factor(p, k)) * np.linalg.norm(a)
        assert abs(abs(logit) / scale - brute_force_hyperplane_distance(x, a, p, k)) < 1e-4


def test_forward_rows_are_distributions_and_deterministic():
    G = small_graph(10, 4, 3)
    cfg = ModelConfig(hidden=[3, 2], manifold="H2", dropout=0.5)
    params = init_params(cfg, 4, 3, np.random.default_rng(5))
    P = forward(params, G, cfg)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_array_equal(P, forward(params, G, cfg, rng=np.random.default_rng(9)))
    P1 = forward(params, G, cfg, training=True, rng=np.random.default_rng(1))
    P2 = forward(params, G, cfg, training=True, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(P1, P2)
    assert not np.allclose(P1, P)


def test_zero_class_weights_give_uniform_rows():
    G = small_graph(6, 4, 3)
    cfg = ModelConfig(hidden=[4], manifold="S4")
    params = init_params(cfg, 4, 3, np.random.default_rng(6))
    params.values["c0.a"][:] = 0.0
    np.testing.assert_allclose(forward(params, G, cfg), 1.0 / 3.0)


@pytest.mark.parametrize("k", [-1e-7, 1e-7])
def test_network_matches_flat_gcn_near_zero_curvature(k):
    G = small_graph(10, 4, 3)
    for hidden in ([5], [5, 4]):
        cfg = ModelConfig(hidden=hidden, manifold=f"{'H' if k < 0 else 'S'}{hidden[-1]}", kappa_init=[k],
                          preprocess=False)
        params = init_params(cfg, 4, 3, np.random.default_rng(7))
        params.values["c0.p"] = 0.1 * np.random.default_rng(8).standard_normal(params.values["c0.p"].shape)
        assert np.max(np.abs(forward(params, G, cfg) - euclidean_gcn_forward(params, G, cfg))) < 1e-4


def test_product_split_and_distance():
    X = np.arange(10.0).reshape(2, 5)
    parts = product_split(X, [2, 3])
    np.testing.assert_array_equal(parts[1], X[:, 2:])
    with pytest.raises(ShapeError):
        product_split(X, [2, 2])
    xs = [np.zeros(2), np.zeros(1)]
    ys = [np.array([1.5, 0.0]), np.array([2.0])]  # flat distance is 2|x - y|
    assert float(product_distance(xs, ys, [0.0, 0.0])) == pytest.approx(5.0)
    rng = np.random.default_rng(9)
    x, y = 0.3 * rng.standard_normal((2, 3))
    assert float(product_distance([x], [y], [-1.0])) == pytest.approx(float(distance(x, y, -1.0)))
    assert float(product_distance([x, x], [x, x], [-1.0, 0.5])) == 0.0
    d1, d2 = float(distance(x[:2], y[:2], -1.0)), float(distance(x[2:], y[2:], 0.5))
    assert float(product_distance([x[:2], x[2:]], [y[:2], y[2:]], [-1.0, 0.5])) == pytest.approx(np.hypot(d1, d2))


def test_parse_manifold():
    comps = parse_manifold("H5xS5")
    assert [(c.dim, c.kappa, c.constraint) for c in comps] == [(5, -1.0, "negative"), (5, 1.0, "positive")]
    assert parse_manifold("E3")[0].constraint == "fixed"
    with pytest.raises(ConfigError):
        parse_manifold("Q4")
    with pytest.raises(ConfigError):
        ModelConfig(hidden=[16], manifold="H10")
    with pytest.raises(ConfigError):
        ModelConfig(hidden=[16], manifold="S16", kappa_init=[-1.0])
    with pytest.raises(ConfigError):
        ModelConfig(dropout=1.0)


def test_constrained_curvature_keeps_its_sign():
    for manifold, sign in (("H4", -1), ("S4", 1)):
        cfg = ModelConfig(hidden=[4], manifold=manifold)
        params = init_params(cfg, 3, 2, np.random.default_rng(0))
        assert kappa_of(params.values, 0, params.components[0]) == pytest.approx(sign)
        for s in (-50.0, 0.0, 50.0):
            params.values["c0.kappa"] = np.array(s)
            assert np.sign(kappa_of(params.values, 0, params.components[0])) == sign


def test_one_hot_path_equals_dense_identity():
    G = sbm([8, 7], 0.5, 0.1, np.random.default_rng(1))
    A = normalize_adjacency(G)
    for manifold in ("H4", "S4", "E4", "H2xS2"):
        cfg = ModelConfig(hidden=[6, 4], manifold=manifold, nonlinearity="identity")
        params = init_params(cfg, G.n, None, np.random.default_rng(2))
        fast = embed(params.values, params.components, None, A, cfg)
        dense = embed(params.values, params.components, np.eye(G.n), A, cfg)
        for f, d in zip(fast, dense):
            np.testing.assert_allclose(f, d, atol=1e-12)


def test_adjacency_dropout_preserves_row_sums():
    G = sbm([30, 30], 0.3, 0.05, np.random.default_rng(3))
    A = normalize_adjacency(G)
    D = _drop_adjacency(A, 0.5, np.random.default_rng(4))
    np.testing.assert_allclose(np.asarray(D.sum(axis=1)).ravel(), np.asarray(A.sum(axis=1)).ravel())
    assert D.nnz < A.nnz


@pytest.mark.parametrize("manifold,kappa", [("H2", -0.8), ("S2", 0.6), ("E2", 0.0)])
def test_full_model_gradients(manifold, kappa):
    G = small_graph(10, 4, 2, seed=1)
    A = normalize_adjacency(G)
    cfg = ModelConfig(hidden=[3, 2], manifold=manifold, constraint="free",
                      kappa_init=[kappa], nonlinearity="tanh")
    params = init_params(cfg, 4, 2, np.random.default_rng(2))
    params.values["c0.p"] = 0.2 * np.random.default_rng(3).standard_normal((2, 2))
    names = list(params.values)

    def loss(*vals):
        theta = dict(zip(names, vals))
        embs = embed(theta, params.components, G.features, A, cfg)
        return ad.softmax_cross_entropy(class_scores(theta, params.components, embs, A), G.labels)

    assert ad.gradcheck(loss, [params.values[k] for k in names]) < 1e-3


def test_hyperbolic_embeddings_stay_in_ball():
    G = sbm([20, 20], 0.3, 0.05, np.random.default_rng(5))
    cfg = ModelConfig(hidden=[8, 8], manifold="H8", kappa_init=[-4.0])
    params = init_params(cfg, G.features.shape[1], None, np.random.default_rng(6))
    params.values["c0.W0"] *= 20.0
    (H,) = embed(params.values, params.components, G.features, normalize_adjacency(G), cfg)
    assert np.max(np.sum(H * H, axis=1)) < 0.25

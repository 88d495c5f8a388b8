"""Invariant suites shared by the ``selftest`` command and the test-suite.

Every suite is a function ``suite(rng) -> list[Check]``; the checks compare
the library against closed-form identities or independent oracles.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .agg import gyromidpoint, left_matmul, right_matmul, tangential_agg
from .manifold import (ambient_distance, distance, exp0, exp_map, gyration, kappa_add,
                       kappa_scale, log0, log_map, random_isometry, random_rotation, stereo_lift)


@dataclass
class Check:
    name: str
    ok: bool
    error: float
    tol: float

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name:<40s} err={self.error:.2e} tol={self.tol:.0e}"


def _check(name, err, tol):
    err = float(err)
    return Check(name, bool(np.isfinite(err) and err <= tol), err, tol)


def random_points(rng, n, d, kappa, spread=0.8):
    """Points well inside the domain.  With ``R = min(1, 1/sqrt|k|)``: uniform
    in the ball of radius ``spread R`` when ``k < 0``, otherwise Gaussian with
    scale ``0.625 spread R``."""
    R = 1.0 / np.sqrt(abs(kappa)) if abs(kappa) > 1.0 else 1.0
    if kappa < 0:
        u = rng.standard_normal((n, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        return u * spread * R * rng.uniform(size=(n, 1)) ** (1.0 / d)
    return 0.625 * spread * R * rng.standard_normal((n, d))


def _stochastic(rng, n, m=None):
    A = rng.uniform(0.1, 1.0, size=(n, m or n))
    return A / A.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------

def oracle_suite(rng, pairs=1000, d=3):
    out = []
    for k in (1.0, -1.0):
        x = random_points(rng, pairs, d, k)
        y = random_points(rng, pairs, d, k)
        ours = distance(x, y, k)
        ref = ambient_distance(stereo_lift(x, k), stereo_lift(y, k), k)
        out.append(_check(f"distance vs lifted oracle k={k:+g}", np.max(np.abs(ours - ref)), 1e-9))
    return out


def gyro_suite(rng, isometries=50, d=3):
    out = []
    lc = gn = oc = rt = 0.0
    for k in (-2.0, -1.0, -0.1, 0.1, 1.0):
        x, y, w = (random_points(rng, 200, d, k) for _ in range(3))
        lc = max(lc, np.max(np.abs(kappa_add(x, kappa_add(-x, y, k), k) - y)))
        g = gyration(x, y, w, k)
        gn = max(gn, np.max(np.abs(np.linalg.norm(g, axis=1) - np.linalg.norm(w, axis=1))))
        R = random_rotation(rng, d)
        oc = max(oc, np.max(np.abs(kappa_add(x @ R.T, y @ R.T, k) - kappa_add(x, y, k) @ R.T)))
        v = log_map(x, y, k)
        rt = max(rt, np.max(np.abs(exp_map(x, v, k) - y)))
        t = rng.standard_normal((200, d))
        t *= rng.uniform(0.0, 1.2, (200, 1)) / (np.linalg.norm(t, axis=1, keepdims=True) * np.sqrt(abs(k)))
        rt = max(rt, np.max(np.abs(log0(exp0(t, k), k) - t)))
    out += [_check("left cancellation", lc, 1e-10), _check("gyration preserves norms", gn, 1e-10),
            _check("rotation commutes with addition", oc, 1e-12), _check("exp/log round trip", rt, 1e-9)]

    ne = sa = 0.0
    for k in (-1.0, 0.0, 0.5):
        X = random_points(rng, 6, d, k, spread=0.5)
        ne = max(ne, np.max(np.abs(left_matmul(np.eye(6), X, k) - X)))
        A = _stochastic(rng, 6)
        sa = max(sa, np.max(np.abs(kappa_scale(0.7, left_matmul(A, X, k), k) - left_matmul(0.7 * A, X, k))))
    out += [_check("identity matrix is neutral", ne, 1e-10), _check("scalar associativity", sa, 1e-10)]

    intr = eqv = 0.0
    for k in (-1.0, 0.5):
        for _ in range(isometries):
            phi = random_isometry(rng, d, k)
            X = random_points(rng, 5, d, k, spread=0.5)
            Y = random_points(rng, 5, d, k, spread=0.5)
            A, B = _stochastic(rng, 5), _stochastic(rng, 5)
            before = distance(left_matmul(A, X, k), left_matmul(B, Y, k), k)
            after = distance(left_matmul(A, phi(X), k), left_matmul(B, phi(Y), k), k)
            intr = max(intr, np.max(np.abs(before - after)))
            x = random_points(rng, 1, d, k, spread=0.5)[0]
            alpha = rng.uniform(0.1, 1.0, size=5)
            alpha /= alpha.sum()
            lhs = tangential_agg(phi(x[None])[0], phi(X), alpha, k)
            rhs = phi(tangential_agg(x, X, alpha, k)[None])[0]
            eqv = max(eqv, np.max(np.abs(lhs - rhs)))
    out += [_check("midpoint products are intrinsic", intr, 1e-8),
            _check("tangential aggregation equivariant", eqv, 1e-8)]
    return out


def distance_first_order(x, y, kappa):
    """Distance expanded to first order in ``kappa`` around flat space:
    ``2|x-y| - 2 kappa (|x-y|^3/3 + <x,y> |x-y|)``."""
    n = float(np.linalg.norm(x - y))
    return 2.0 * n - 2.0 * kappa * (n ** 3 / 3.0 + float(x @ y) * n)


def taylor_remainder_slope(x, y, kappas=(1e-3, 1e-4, 1e-5), expansion=distance_first_order):
    """Least-squares slope of log|d_k - expansion| against log|k|, fitted
    over both signs of every ``k``; 2 means the expansion is exact to first
    order."""
    ks, errs = [], []
    for k in kappas:
        for s in (1.0, -1.0):
            kk = s * k
            errs.append(abs(float(distance(x, y, kk)) - expansion(x, y, kk)))
            ks.append(abs(kk))
    return float(np.polyfit(np.log(ks), np.log(errs), 1)[0])


def kappa_derivative(x, y, kappa):
    """Tape derivative of the distance in ``kappa``."""
    tape = ad.Tape()
    k = tape.leaf(np.array(float(kappa)))
    d = distance(x, y, k)
    return float(tape.gradient(ad.sum(d), [k])[0])


def smoothness_suite(rng, d=3):
    x = random_points(rng, 1, d, -1.0, 0.6)[0]
    y = random_points(rng, 1, d, -1.0, 0.6)[0]
    slope = taylor_remainder_slope(x, y)
    left, right = kappa_derivative(x, y, -1e-8), kappa_derivative(x, y, 1e-8)
    rel = abs(left - right) / max(abs(left), abs(right))
    return [_check("second-order remainder slope", abs(slope - 2.0), 0.2),
            _check("kappa derivative across zero", rel, 1e-4)]


# ---------------------------------------------------------------------------
# gradients

def _kappa_for(rng, sign):
    return float(sign * rng.uniform(0.3, 1.5)) if sign else 0.0


def op_gradient_cases(rng, configs=20, d=3):
    """``(name, fn, inputs)`` triples covering the public differentiable ops;
    the curvature is always one of the inputs."""
    cases = []
    for c in range(configs):
        sign = (-1, 1, 0)[c % 3]
        k = _kappa_for(rng, sign)
        x, y = random_points(rng, 2, d, k, 0.6)
        X = random_points(rng, 4, d, k, 0.5)
        v = rng.standard_normal(d)
        v *= rng.uniform(0.1, 0.5) / np.linalg.norm(v)
        W = 0.5 * rng.standard_normal((d, d))
        alpha = rng.uniform(0.2, 1.0, 4)
        convex = alpha / alpha.sum()
        A = _stochastic(rng, 3, 4)
        r = rng.uniform(0.2, 1.5)
        kk = np.array(k)
        cases += [
            ("kappa_add", lambda a, b, q: ad.sum(kappa_add(a, b, q)), [x, y, kk]),
            ("kappa_scale", lambda a, q, r=r: ad.sum(kappa_scale(r, a, q)), [x, kk]),
            ("exp0", lambda a, q: ad.sum(exp0(a, q)), [v, kk]),
            ("log0", lambda a, q: ad.sum(log0(a, q)), [x, kk]),
            ("exp_map", lambda a, b, q: ad.sum(exp_map(a, b, q)), [x, v, kk]),
            ("log_map", lambda a, b, q: ad.sum(log_map(a, b, q)), [x, y, kk]),
            ("distance", lambda a, b, q: ad.sum(distance(a, b, q)), [x, y, kk]),
            ("gyromidpoint", lambda P, w, q: ad.sum(gyromidpoint(P, w, q)), [X, alpha, kk]),
            ("left_matmul", lambda P, q, A=A: ad.sum(left_matmul(A, P, q)), [X, kk]),
            ("right_matmul", lambda P, M, q: ad.sum(right_matmul(P, M, q)), [X, W, kk]),
            ("tangential_agg", lambda a, P, q, w=convex: ad.sum(tangential_agg(a, P, w, q)), [x, X, kk]),
        ]
        if sign != 0:
            cases.append(("gyration", lambda a, b, q, w=v: ad.sum(gyration(a, b, w, q)), [x, y, kk]))
    return cases


def model_gradient_cases(rng, configs=20):
    """End-to-end two-layer networks with a cross-entropy loss; gradients
    with respect to every weight, class parameter and curvature."""
    from .graph import Graph, normalize_adjacency
    from .model import ModelConfig, class_scores, embed, init_params

    cases = []
    spaces = [("H4", [-1]), ("S4", [1]), ("E4", [0]), ("H2xS2", [-1, 1])]
    for c in range(configs):
        manifold, signs = spaces[c % len(spaces)]
        n = 6
        edges = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
        feats = rng.standard_normal((n, 3))
        labels = rng.integers(2, size=n)
        G = Graph(n, edges, feats, labels)
        init = [_kappa_for(rng, s) for s in signs]
        cfg = ModelConfig(hidden=[4, 4], manifold=manifold, constraint="free",
                          nonlinearity=("relu", "tanh", "identity")[c % 3],
                          kappa_init=init, dropout=0.0)
        params = init_params(cfg, 3, 2, rng)
        for key in params.values:
            if key.endswith(".p"):
                params.values[key] = 0.2 * rng.standard_normal(params.values[key].shape)
        A_hat = normalize_adjacency(G)
        names = list(params.values)

        def fn(*vals, names=names, params=params, cfg=cfg, G=G, A_hat=A_hat):
            theta = dict(zip(names, vals))
            embs = embed(theta, params.components, G.features, A_hat, cfg)
            z = class_scores(theta, params.components, embs, A_hat)
            return ad.softmax_cross_entropy(z, G.labels)

        cases.append((f"model {manifold}", fn, [params.values[k] for k in names]))
    return cases


def gradient_suite(rng, configs=20):
    worst = {}
    for name, fn, inputs in op_gradient_cases(rng, configs):
        worst[name] = max(worst.get(name, 0.0), ad.gradcheck(fn, inputs))
    out = [_check(f"gradient {k}", v, 1e-4) for k, v in worst.items()]
    model = 0.0
    for _, fn, inputs in model_gradient_cases(rng, configs):
        model = max(model, ad.gradcheck(fn, inputs))
    out.append(_check("gradient two-layer model", model, 1e-3))
    return out


SUITES = {
    "oracle": oracle_suite,
    "gyro": gyro_suite,
    "smoothness": smoothness_suite,
    "gradients": gradient_suite,
}


def run_suites(seed=0, names=None):
    """Run the named suites (all by default); returns
    ``[(suite, seconds, [Check, ...]), ...]``.  A suite that raises is
    reported as a single failed check."""
    report = []
    for i, name in enumerate(names or SUITES):
        t0 = time.perf_counter()
        try:
            checks = SUITES[name](np.random.default_rng([seed, i]))
        except (ArithmeticError, ValueError) as exc:
            checks = [Check(f"{name} raised {type(exc).__name__}: {exc}", False, float("nan"), 0.0)]
        report.append((name, time.perf_counter() - t0, checks))
    return report

"""Constant-curvature geometry in stereographic coordinates.

One set of formulas covers the open ball of radius ``1/sqrt(-kappa)``
(``kappa < 0``), flat space (``kappa == 0``) and the stereographically
projected sphere (``kappa > 0``).  Points are arrays whose last axis holds the
coordinates; leading axes broadcast.  ``kappa`` is a float or a 0-d
:class:`~kappagcn.autodiff.Tensor`, and any argument may be a tensor, in which
case the computation is recorded for differentiation (curvature included).

Near ``kappa = 0`` the curvature-dependent tangent and arctangent switch to
their power series, so every function here is smooth in ``kappa`` across 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import value
from .errors import AntipodalError, DomainError

TAYLOR_EPS = 1e-10
BOUNDARY_EPS = 1e-5
ANTIPODAL_EPS = 1e-15
ZERO_TANGENT_EPS = 1e-15
TAN_MARGIN = 1e-9  # public precondition margin below pi/2
SAFE_TAN_MARGIN = 1e-4  # clip margin used by guarded model code
SAFE_ATANH_LIMIT = 1.0 - 1e-12

# Debug switch used by the self-test to confirm that the invariant suites
# catch a broken addition; flips the sign of the cross term in kappa_add.
FAULT_FLIP_ADD_SIGN = False


def _k(kappa) -> float:
    return float(value(kappa))


def _norm(x):
    return ad.norm2(x, axis=-1, keepdims=True)


def _dot(x, y):
    return ad.sum(x * y, axis=-1, keepdims=True)


def _sq(x):
    return _dot(x, x)


def _unit(x, n):
    """``x / n`` with the convention 0/0 = 0."""
    nv = value(n)
    if np.all(nv > 0):
        return x / n
    return x / ad.where(nv > 0, n, 1.0)


def _select(mask, a, b):
    if np.all(mask):
        return a
    if not np.any(mask):
        return b
    return ad.where(mask, a, b)


def tan_k(u, kappa, safe=False):
    """Curvature-scaled tangent.

    ``tan(sqrt(k) u)/sqrt(k)`` for ``k > 0``, ``tanh(sqrt(-k) u)/sqrt(-k)`` for
    ``k < 0`` and ``u`` itself at ``k = 0``.

    With ``safe=True`` arguments past the pole (``k > 0``) are clipped instead
    of raising :class:`DomainError`.

    >>> round(float(tan_k(np.pi / 4, 1.0)), 12)
    1.0
    """
    k = _k(kappa)
    uv = np.asarray(value(u), dtype=np.float64)
    small = np.abs(k) * uv * uv < TAYLOR_EPS
    u2 = u * u
    series = u + kappa * u * u2 / 3.0 + 2.0 * kappa * kappa * u * u2 * u2 / 15.0
    if k == 0.0 or np.all(small):
        return series
    if k > 0:
        s = ad.sqrt(kappa)
        arg = s * u
        limit = np.pi / 2 - TAN_MARGIN
        big = np.abs(value(arg)) >= limit
        if np.any(big & ~small):
            if not safe:
                raise DomainError(
                    f"tan_k argument sqrt(kappa)*u reaches {np.max(np.abs(value(arg))):.6g}"
                    f" >= pi/2 (kappa={k})")
        if safe:
            lim = np.pi / 2 - SAFE_TAN_MARGIN
            if np.any(np.abs(value(arg)) > lim):
                arg = ad.clamp(arg, -lim, lim)
        exact = ad.tan(arg) / s
    else:
        s = ad.sqrt(-kappa)
        exact = ad.tanh(s * u) / s
    return _select(small, series, exact)


def atan_k(u, kappa, safe=False):
    """Inverse of :func:`tan_k` (``arctan`` / ``artanh`` / identity branches).

    For ``k < 0`` the argument must satisfy ``sqrt(-k)|u| < 1``; with
    ``safe=True`` it is clipped just below 1 instead of raising.
    """
    k = _k(kappa)
    uv = np.asarray(value(u), dtype=np.float64)
    small = np.abs(k) * uv * uv < TAYLOR_EPS
    u2 = u * u
    series = u - kappa * u * u2 / 3.0 + kappa * kappa * u * u2 * u2 / 5.0
    if k == 0.0 or np.all(small):
        return series
    if k > 0:
        s = ad.sqrt(kappa)
        exact = ad.atan(s * u) / s
    else:
        s = ad.sqrt(-kappa)
        arg = s * u
        av = np.abs(value(arg))
        if np.any((av >= 1.0) & ~small):
            if not safe:
                raise DomainError(
                    f"atan_k argument sqrt(-kappa)*|u| = {np.max(av):.6g} is outside (-1, 1)")
        if safe and np.any(av > SAFE_ATANH_LIMIT):
            arg = ad.clamp(arg, -SAFE_ATANH_LIMIT, SAFE_ATANH_LIMIT)
        exact = ad.artanh(arg) / s
    return _select(small, series, exact)


def conformal_factor(x, kappa, keepdims=False):
    """``2 / (1 + k |x|^2)``; 2 everywhere when ``k = 0``."""
    lam = 2.0 / (1.0 + kappa * _sq(x))
    if keepdims:
        return lam
    return ad.reshape(lam, np.shape(value(lam))[:-1])


def project_to_domain(x, kappa):
    """Pull points back inside the ball ``|x| <= (1 - BOUNDARY_EPS)/sqrt(-k)``.

    A no-op for ``k >= 0`` and for points already inside.
    """
    k = _k(kappa)
    if k >= 0:
        return x
    n = _norm(x)
    rmax = (1.0 - BOUNDARY_EPS) / ad.sqrt(-kappa)
    out = np.asarray(value(n)) > value(rmax)
    if not np.any(out):
        return x
    factor = ad.where(out, rmax / ad.where(out, n, 1.0), 1.0)
    return x * factor


def kappa_add(x, y, kappa, project=True):
    """Gyrovector addition ``x (+) y``.

    >>> kappa_add(np.array([0.5, 0.0]), np.array([0.2, 0.0]), -1.0)
    array([0.63636364, 0.        ])
    """
    xy = _dot(x, y)
    x2 = _sq(x)
    y2 = _sq(y)
    c = 2.0 if FAULT_FLIP_ADD_SIGN else -2.0
    num = (1.0 + c * kappa * xy - kappa * y2) * x + (1.0 + kappa * x2) * y
    den = 1.0 - 2.0 * kappa * xy + kappa * kappa * x2 * y2
    if np.any(np.abs(value(den)) < ANTIPODAL_EPS):
        raise AntipodalError("gyro-addition denominator vanishes: antipodal pair")
    out = num / den
    return project_to_domain(out, kappa) if project else out


def kappa_scale(r, x, kappa, safe=False):
    """Gyro scalar multiplication ``r (x) x``; collinear with ``x``."""
    n = _norm(x)
    return tan_k(r * atan_k(n, kappa, safe=safe), kappa, safe=safe) * _unit(x, n)


def exp0(v, kappa, safe=False):
    """Exponential map at the origin."""
    n = _norm(v)
    return project_to_domain(tan_k(n, kappa, safe=safe) * _unit(v, n), kappa)


def log0(y, kappa, safe=False):
    """Logarithmic map at the origin."""
    n = _norm(y)
    return atan_k(n, kappa, safe=safe) * _unit(y, n)


def exp_map(x, v, kappa, safe=False):
    """Exponential map at ``x``; returns ``x`` exactly for a zero tangent."""
    n = _norm(v)
    lam = conformal_factor(x, kappa, keepdims=True)
    step = tan_k(lam * n / 2.0, kappa, safe=safe) * _unit(v, n)
    out = kappa_add(x, step, kappa)
    tiny = np.asarray(value(n)) < ZERO_TANGENT_EPS
    if np.any(tiny):
        out = ad.where(tiny, x * np.ones_like(value(out)), out)
    return out


def log_map(x, y, kappa, safe=False):
    """Logarithmic map at ``x`` (inverse of :func:`exp_map`)."""
    w = kappa_add(-x, y, kappa, project=False)
    n = _norm(w)
    lam = conformal_factor(x, kappa, keepdims=True)
    return (2.0 / lam) * atan_k(n, kappa, safe=safe) * _unit(w, n)


def distance(x, y, kappa, safe=False):
    """Geodesic distance; ``2|x - y|`` in the flat case.

    >>> round(float(distance(np.zeros(2), np.array([0.5, 0.0]), 1.0)), 9)
    0.927295218
    """
    w = kappa_add(-x, y, kappa, project=False)
    d = 2.0 * atan_k(_norm(w), kappa, safe=safe)
    return ad.reshape(d, np.shape(value(d))[:-1])


def pairwise_distance(X, Y=None, kappa=-1.0):
    """All-pairs distance matrix (plain numpy, no recording).

    Uses ``|-x (+) y|^2 = |x-y|^2 / (1 + 2k<x,y> + k^2|x|^2|y|^2)``, which
    avoids materialising the ``n x m x d`` gyro-sums.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = X if Y is None else np.asarray(Y, dtype=np.float64)
    k = float(kappa)
    x2 = np.sum(X * X, axis=1)[:, None]
    y2 = np.sum(Y * Y, axis=1)[None, :]
    g = X @ Y.T
    num = np.maximum(x2 + y2 - 2.0 * g, 0.0)
    den = 1.0 + 2.0 * k * g + k * k * x2 * y2
    r = np.sqrt(num / den)
    if k < 0:
        r = np.minimum(r, SAFE_ATANH_LIMIT / np.sqrt(-k))
    return 2.0 * atan_k(r, k)


def gyration(u, v, w, kappa):
    """``gyr[u, v] w`` in closed form; a norm-preserving linear map of ``w``."""
    uw, vw, uv = _dot(u, w), _dot(v, w), _dot(u, v)
    u2, v2 = _sq(u), _sq(v)
    k2 = kappa * kappa
    a = -k2 * uw * v2 - kappa * vw + 2.0 * k2 * uv * vw
    b = -k2 * vw * u2 + kappa * uw
    d = 1.0 - 2.0 * kappa * uv + k2 * u2 * v2
    if np.any(np.abs(value(d)) < ANTIPODAL_EPS):
        raise AntipodalError("gyration undefined for an antipodal pair")
    return w + 2.0 * (a * u + b * v) / d


def stereo_lift(x, kappa):
    """Map to the sphere (``k > 0``) or the upper hyperboloid sheet (``k < 0``)
    in ``R^{d+1}``.  Plain numpy."""
    k = float(kappa)
    if k == 0.0:
        raise DomainError("no ambient lift for flat space (kappa == 0)")
    x = np.asarray(x, dtype=np.float64)
    lam = 2.0 / (1.0 + k * np.sum(x * x, axis=-1, keepdims=True))
    return np.concatenate([lam * x, (lam - 1.0) / np.sqrt(abs(k))], axis=-1)


def stereo_project(p, kappa):
    """Inverse of :func:`stereo_lift`."""
    k = float(kappa)
    if k == 0.0:
        raise DomainError("no ambient model for flat space (kappa == 0)")
    p = np.asarray(p, dtype=np.float64)
    den = 1.0 + np.sqrt(abs(k)) * p[..., -1:]
    if np.any(np.abs(den) < 1e-12):
        raise DomainError("cannot project the pole opposite the origin")
    return p[..., :-1] / den


def ambient_distance(p, q, kappa):
    """Geodesic distance between lifted points, computed in the ambient space:
    great-circle angle on the sphere, Minkowski arccosh on the hyperboloid."""
    k = float(kappa)
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if k > 0:
        c = k * np.sum(p * q, axis=-1)
        return np.arccos(np.clip(c, -1.0, 1.0)) / np.sqrt(k)
    if k < 0:
        mink = np.sum(p[..., :-1] * q[..., :-1], axis=-1) - p[..., -1] * q[..., -1]
        return np.arccosh(np.maximum(k * mink, 1.0)) / np.sqrt(-k)
    raise DomainError("no ambient model for flat space (kappa == 0)")


@dataclass(frozen=True)
class Isometry:
    """``x -> translation (+) rotation @ x``."""

    rotation: np.ndarray
    translation: np.ndarray
    kappa: float

    def __call__(self, x):
        return apply_isometry(self, x)


def apply_isometry(phi: Isometry, x):
    return kappa_add(phi.translation, x @ phi.rotation.T, phi.kappa)


def random_rotation(rng, d):
    """Haar-distributed orthogonal matrix (sign-corrected QR)."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def random_isometry(rng, d, kappa) -> Isometry:
    """Random rotation followed by a translation whose geodesic length from
    the origin is at most 0.5."""
    rot = random_rotation(rng, d)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    radius = float(tan_k(0.25, float(kappa))) * rng.uniform() ** (1.0 / d)
    return Isometry(rot, radius * direction, float(kappa))

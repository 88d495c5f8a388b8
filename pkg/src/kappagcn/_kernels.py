"""Compiled pair loops for the all-pairs distortion objective.

Distances follow

    d = 2 atan_k(r),  r^2 = (s_i + s_j - 2 g_ij) / (1 + 2k g_ij + k^2 s_i s_j)

with ``g = Z Z^T`` and ``s = diag(g)``, which equals ``2 atan_k(|-x (+) y|)``
without forming the gyro-sum.  The final gradient contractions are BLAS
products; the loops here only do per-pair scalar work, serially, so results
are bitwise reproducible.
"""
import math

import numpy as np
from numba import njit

TAYLOR_EPS = 1e-10
DERIV_SERIES_EPS = 1e-3
ATANH_LIMIT = 1.0 - 1e-12


@njit(cache=True)
def _atan_k(u, k):
    if abs(k) * u * u < TAYLOR_EPS:
        u2 = u * u
        return u * (1.0 - k * u2 / 3.0 + k * k * u2 * u2 / 5.0)
    if k > 0:
        s = math.sqrt(k)
        return math.atan(s * u) / s
    s = math.sqrt(-k)
    return _atanh(min(s * u, ATANH_LIMIT)) / s


@njit(cache=True)
def _atanh(x):
    # numba's libm atanh is several times slower than these log forms
    if x < 0.125:
        return 0.5 * math.log1p(2.0 * x / (1.0 - x))
    return 0.5 * math.log((1.0 + x) / (1.0 - x))


@njit(cache=True)
def _datan_k_dk(u, k, f):
    """Partial derivative of atan_k(u, k) in k at fixed u (f = atan_k(u, k))."""
    x = k * u * u
    if abs(x) < DERIV_SERIES_EPS:
        # sum_n n (-1)^n k^(n-1) u^(2n+1) / (2n+1), five terms
        out = 0.0
        term = -u * u * u
        for n in range(1, 6):
            out += n * term / (2 * n + 1)
            term *= -x
        return out
    return (u / (1.0 + x) - f) / (2.0 * k)


@njit(cache=True)
def _ratio(nn, den):
    # den vanishes only for antipodal points of a sphere: distance pi/sqrt(k)
    return math.sqrt(nn / den) if den > 0.0 else math.inf


@njit(cache=True)
def pair_distances(gram, k, iu, ju, out):
    for p in range(iu.shape[0]):
        i = iu[p]
        j = ju[p]
        g = gram[i, j]
        sx = gram[i, i]
        sy = gram[j, j]
        nn = max(sx + sy - 2.0 * g, 0.0)
        den = 1.0 + 2.0 * k * g + k * k * sx * sy
        out[p] = 2.0 * _atan_k(_ratio(nn, den), k)


@njit(cache=True)
def _pair_coeffs(k, g, sx, sy, nn, den, r, f, wp, cn, cd, i, j):
    """Add the coefficients of ``w_p * grad d_p`` for pair (i, j), i < j, to
    the upper triangles of ``cn``/``cd``; return the kappa part.

    With ``N = |x-y|^2`` and ``D`` the denominator above, the gradient for
    row i is ``sum_j cn_ij (x_i - x_j) + cd_ij (2k x_j + 2k^2 s_j x_i)``.
    """
    if nn <= 0.0 or r == math.inf or (k < 0 and math.sqrt(-k) * r >= ATANH_LIMIT):
        # written anyway so that reused buffers never hold stale values
        cn[i, j] = 0.0
        cd[i, j] = 0.0
        return 0.0
    dd_dr = 2.0 / (1.0 + k * r * r)
    b = -wp * dd_dr * r / (2.0 * den)
    cn[i, j] = wp * dd_dr * r / nn  # includes the 2 from dN/dx = 2(x - y)
    cd[i, j] = b
    return b * (2.0 * g + 2.0 * k * sx * sy) + wp * 2.0 * _datan_k_dk(r, k, f)


@njit(cache=True)
def pair_distance_coeffs(gram, k, iu, ju, w, cn, cd):
    """Coefficients for ``grad sum_p w_p d_p``; returns the kappa gradient."""
    gk = 0.0
    for p in range(iu.shape[0]):
        if w[p] == 0.0:
            continue
        i = iu[p]
        j = ju[p]
        g = gram[i, j]
        sx = gram[i, i]
        sy = gram[j, j]
        nn = max(sx + sy - 2.0 * g, 0.0)
        den = 1.0 + 2.0 * k * g + k * k * sx * sy
        r = _ratio(nn, den)
        gk += _pair_coeffs(k, g, sx, sy, nn, den, r, _atan_k(r, k), w[p], cn, cd, i, j)
    return gk


@njit(cache=True)
def distortion_single(Z, k, iu, ju, target, cn, cd):
    """Single-space distortion in one pass over the rows of ``Z``.

    Returns ``(sum_p (d_p^2/t_p^2 - 1)^2, kappa gradient)`` and fills the
    gradient coefficients of that (unnormalised) sum.  Every listed pair is
    written, so ``cn``/``cd`` may be reused between calls.
    """
    n, dim = Z.shape
    s = np.empty(n)
    for i in range(n):
        acc = 0.0
        for c in range(dim):
            acc += Z[i, c] * Z[i, c]
        s[i] = acc
    loss = 0.0
    gk = 0.0
    for p in range(iu.shape[0]):
        i = iu[p]
        j = ju[p]
        g = 0.0
        for c in range(dim):
            g += Z[i, c] * Z[j, c]
        sx = s[i]
        sy = s[j]
        nn = max(sx + sy - 2.0 * g, 0.0)
        den = 1.0 + 2.0 * k * g + k * k * sx * sy
        r = _ratio(nn, den)
        f = _atan_k(r, k)
        d = 2.0 * f
        t2 = target[p] * target[p]
        q = d * d / t2 - 1.0
        loss += q * q
        gk += _pair_coeffs(k, g, sx, sy, nn, den, r, f, 4.0 * q * d / t2, cn, cd, i, j)
    return loss, gk


def distances(Z, k, iu, ju):
    out = np.empty(len(iu))
    pair_distances(Z @ Z.T, float(k), iu, ju, out)
    return out


def contract(Z, k, cn, cd):
    """Turn upper-triangular coefficients into the gradient in ``Z``."""
    s = np.einsum("ij,ij->i", Z, Z)
    diag = cn.sum(axis=1) + cn.sum(axis=0) + 2.0 * k * k * (cd @ s + cd.T @ s)
    M = 2.0 * k * cd - cn
    return Z * diag[:, None] + M @ Z + M.T @ Z


def distance_grads(Z, k, iu, ju, w):
    """Gradient of ``sum_p w_p d_p`` in ``Z`` and ``k``."""
    n = Z.shape[0]
    cn = np.zeros((n, n))
    cd = np.zeros((n, n))
    k = float(k)
    gk = pair_distance_coeffs(Z @ Z.T, k, iu, ju, w, cn, cd)
    return contract(Z, k, cn, cd), gk


def warmup():
    """Trigger compilation on a tiny problem."""
    Z = np.array([[0.0], [0.1]])
    iu = np.array([0], dtype=np.int64)
    ju = np.array([1], dtype=np.int64)
    distances(Z, -1.0, iu, ju)
    distance_grads(Z, -1.0, iu, ju, np.ones(1))
    distortion_single(Z, -1.0, iu, ju, np.ones(1), np.zeros((2, 2)), np.zeros((2, 2)))

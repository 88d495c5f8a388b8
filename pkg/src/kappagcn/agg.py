"""Weighted combination of points: gyromidpoints and the two curved matrix
products used by the graph layers, plus tangent-space aggregation."""
from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import value
from .errors import DegenerateMidpointError, ShapeError, ZeroWeightError
from .manifold import (_k, conformal_factor, exp0, exp_map, kappa_scale, log0, log_map,
                       project_to_domain)

COND_EPS = 1e-12


def _check_den(den, kappa, rows=None):
    dv = np.asarray(value(den)).reshape(-1)
    bad = np.abs(dv) < COND_EPS
    if rows is not None:
        bad &= rows
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        if _k(kappa) == 0.0:
            raise ZeroWeightError(f"weights of row {i} sum to zero", row=i)
        raise DegenerateMidpointError(
            f"row {i}: weighted sum of (lambda - 1) is {dv[i]:.3g}, midpoint undefined", row=i)


def _halve(num, den, kappa, safe):
    """``1/2 (x) (num/den)``, continued through ``den = 0`` when kappa > 0.

    For kappa > 0 this is ``u / (w + sqrt(w^2 + k|u|^2))``, the projection of
    the normalised ambient weighted sum; the principal-branch half-scaling
    agrees with it for ``w > 0`` but returns the antipode for ``w < 0``.
    """
    if _k(kappa) <= 0:
        return kappa_scale(0.5, num / den, kappa, safe=safe)
    u2 = ad.sum(num * num, axis=-1, keepdims=True)
    s = ad.sqrt(den * den + kappa * u2)
    pos = np.asarray(value(den)) >= 0
    # w + s without cancellation for w < 0: k|u|^2 / (s - w)
    near = den + s
    far = kappa * u2 / ad.where(pos, 1.0, s - den)
    return num / ad.where(pos, near, ad.where(pos, 1.0, far))


def gyromidpoint(X, alpha, kappa, safe=False):
    """Weighted gyromidpoint of the rows of ``X``.

    Invariant under positive rescaling of ``alpha``; reduces to the weighted
    mean ``sum(alpha_i x_i)/sum(alpha)`` when ``kappa == 0``.

    >>> gyromidpoint(np.eye(2), np.array([1.0, 3.0]), 0.0)
    array([0.25, 0.75])
    """
    if np.ndim(value(X)) != 2 or np.shape(value(alpha)) != np.shape(value(X))[:1]:
        raise ShapeError("expected X of shape (n, d) and alpha of shape (n,)")
    a = ad.reshape(alpha, (-1, 1))
    lam = conformal_factor(X, kappa, keepdims=True)
    num = ad.sum(a * lam * X, axis=0)
    den = ad.sum(a * (lam - 1.0), axis=0)
    _check_den(den, kappa)
    return project_to_domain(_halve(num, den, kappa, safe), kappa)


def left_matmul(A, X, kappa, safe=False):
    """Row ``i`` is ``(sum_j A_ij) (x) midpoint(X; A_i)``.

    ``A`` is a constant dense or sparse ``n x n`` matrix.  All rows are done
    in one pass: two matrix products give every midpoint numerator and
    denominator, and ``r (x) (1/2 (x) y) = (r/2) (x) y`` folds the two scalings
    into one.  An all-zero row yields the origin (with a warning).
    """
    n = np.shape(value(X))[0]
    if A.shape[1] != n:
        raise ShapeError(f"A has {A.shape[1]} columns but X has {n} rows")
    if sp.issparse(A):
        rowsum = np.asarray(A.sum(axis=1)).reshape(-1, 1)
        nnz = np.diff(A.tocsr().indptr) > 0
    else:
        A = np.asarray(A, dtype=np.float64)
        rowsum = A.sum(axis=1, keepdims=True)
        nnz = np.any(A != 0, axis=1)
    lam = conformal_factor(X, kappa, keepdims=True)
    num = ad.matmul(A, lam * X)
    den = ad.matmul(A, lam - 1.0)
    _check_den(den, kappa, rows=nnz)
    if not np.all(nnz):
        empty = np.flatnonzero(~nnz)
        warnings.warn(f"rows {empty.tolist()[:10]} of A are zero; mapped to the origin",
                      RuntimeWarning, stacklevel=2)
        den = ad.where(nnz[:, None], den, 1.0)
    if _k(kappa) > 0:
        return kappa_scale(rowsum, _halve(num, den, kappa, safe), kappa, safe=safe)
    return project_to_domain(kappa_scale(rowsum / 2.0, num / den, kappa, safe=safe), kappa)


def right_matmul(X, W, kappa, safe=False):
    """Row-wise ``exp0(log0(x) W)``; plain ``X @ W`` when ``kappa == 0``."""
    return exp0(ad.matmul(log0(X, kappa, safe=safe), W), kappa, safe=safe)


def tangential_agg(x, X, alpha, kappa, safe=False):
    """``exp_x(sum_i alpha_i log_x(x_i))``."""
    logs = log_map(x, X, kappa, safe=safe)
    v = ad.sum(ad.reshape(alpha, (-1, 1)) * logs, axis=0)
    return exp_map(x, v, kappa, safe=safe)

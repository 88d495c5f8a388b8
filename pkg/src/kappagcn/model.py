"""Graph convolution on constant-curvature spaces and products of them.

A layer maps node embeddings ``H`` to ``sigma(A (x) (H (x) W))``: a curved
matrix product with the weights, neighbourhood aggregation through weighted
gyromidpoints, and a pointwise nonlinearity applied in the tangent space at
the origin.  The classification head scores each class by a signed distance
to a learned geodesic hyperplane.  With more than one manifold component the
same network is run per component on an equal share of every hidden width,
and class scores are summed.

Parameters live in a flat ``dict`` of numpy arrays so that optimisers and
the tape treat them uniformly; curvatures are scalar entries named
``c{i}.kappa``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .agg import left_matmul, right_matmul
from .autodiff import value
from .errors import ConfigError, ShapeError
from .manifold import TAYLOR_EPS, _k, _norm, atan_k, conformal_factor, distance, exp0, kappa_add, log0

ASIN_CLIP = 1.0 - 1e-7
CONSTRAINTS = ("free", "negative", "positive", "fixed")


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ManifoldComponent:
    """One factor of the embedding space.

    ``constraint`` is ``free`` (kappa trained directly and may change sign),
    ``negative``/``positive`` (kappa = -/+ softplus(s)) or ``fixed``.
    """

    dim: int
    kappa: float = -1.0
    constraint: str = "free"

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("component dim must be >= 1")
        if self.constraint not in CONSTRAINTS:
            raise ConfigError(f"constraint must be one of {CONSTRAINTS}")
        if self.constraint == "negative" and not self.kappa < 0:
            raise ConfigError("negative constraint needs an initial kappa < 0")
        if self.constraint == "positive" and not self.kappa > 0:
            raise ConfigError("positive constraint needs an initial kappa > 0")

    @property
    def trainable(self) -> bool:
        return self.constraint != "fixed"


def parse_manifold(text: str, constraint: str = "signed") -> list[ManifoldComponent]:
    """Parse ``"H10"``, ``"S16"``, ``"E10"``, ``"H5xS5"`` and the like.

    ``H`` starts at kappa = -1, ``S`` at +1 and ``E`` is flat with a fixed
    kappa = 0.  ``constraint="signed"`` keeps the sign of ``H``/``S``
    components; any other value from ``CONSTRAINTS`` applies to all non-flat
    components.
    """
    comps = []
    for tok in re.split(r"[x*]", text.strip()):
        m = re.fullmatch(r"([HSE])(\d+)", tok.strip())
        if not m:
            raise ConfigError(f"cannot parse manifold component {tok!r} in {text!r}")
        kind, dim = m.group(1), int(m.group(2))
        if kind == "E":
            comps.append(ManifoldComponent(dim, 0.0, "fixed"))
            continue
        k = -1.0 if kind == "H" else 1.0
        c = ({"H": "negative", "S": "positive"}[kind] if constraint == "signed" else constraint)
        comps.append(ManifoldComponent(dim, k, c))
    return comps


@dataclass
class ModelConfig:
    """Architecture and optimisation settings shared by both experiments."""

    hidden: list = field(default_factory=lambda: [16])
    manifold: str = "H16"
    constraint: str = "signed"
    nonlinearity: str = "relu"
    adjacency_mode: str = "symmetric"
    dropout: float = 0.0
    dropout_adjacency: float = 0.0
    preprocess: bool = True
    lr: float = 0.01
    lr_kappa: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 2000
    patience: int = 200
    seed: int = 0
    kappa_init: list | None = None

    def __post_init__(self):
        if any(int(h) < 1 for h in self.hidden):
            raise ConfigError("hidden dims must be positive")
        for r in (self.dropout, self.dropout_adjacency):
            if not 0.0 <= r < 1.0:
                raise ConfigError("dropout rates must lie in [0, 1)")
        if self.nonlinearity not in NONLINEARITIES:
            raise ConfigError(f"nonlinearity must be one of {sorted(NONLINEARITIES)}")
        if self.adjacency_mode not in ("symmetric", "left", "right"):
            raise ConfigError("adjacency_mode must be symmetric, left or right")
        self.components()

    def components(self) -> list[ManifoldComponent]:
        comps = parse_manifold(self.manifold, self.constraint)
        m = len(comps)
        if self.kappa_init is not None:
            if len(self.kappa_init) != m:
                raise ConfigError(f"kappa_init needs {m} values")
            comps = [ManifoldComponent(c.dim, float(k), c.constraint)
                     for c, k in zip(comps, self.kappa_init)]
        for w in self.hidden:
            if int(w) % m:
                raise ConfigError(f"width {w} does not split evenly over {m} components")
        if sum(c.dim for c in comps) != int(self.hidden[-1]):
            raise ConfigError(f"manifold {self.manifold!r} does not match output width {self.hidden[-1]}")
        return comps

    def to_dict(self) -> dict:
        return asdict(self)


NONLINEARITIES = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "identity": None,
}


# ---------------------------------------------------------------------------
# parameters

@dataclass
class KgcnParams:
    """Flat parameter dictionary plus the component layout it was built for.

    Class offsets are stored as tangent vectors at the origin (``c{i}.p``);
    the actual offset point is ``exp0`` of it, so the optimiser never leaves
    the manifold.  Constrained curvatures store the pre-softplus value.
    """

    values: dict
    components: list

    def copy(self) -> "KgcnParams":
        return KgcnParams({k: v.copy() for k, v in self.values.items()}, list(self.components))

    def kappas(self) -> list[float]:
        return [float(kappa_of(self.values, i, c)) for i, c in enumerate(self.components)]

    def euclidean_names(self) -> list[str]:
        return [k for k in self.values if not k.endswith(".kappa")]

    def kappa_names(self) -> list[str]:
        return [k for k in self.values if k.endswith(".kappa")]


def _softplus(s):
    sv = float(np.asarray(value(s)))
    if sv < -30.0:
        return ad.exp(s)  # log(1 + e^s) rounds to 0 here
    if sv < 30.0:
        return ad.log(1.0 + ad.exp(s))
    return s


def _softplus_inv(y: float) -> float:
    return float(y + np.log(-np.expm1(-y)))


def kappa_of(values, i, comp: ManifoldComponent):
    """Curvature of component ``i`` as a float or tensor."""
    key = f"c{i}.kappa"
    if key not in values:
        return comp.kappa
    s = values[key]
    if comp.constraint == "negative":
        return -_softplus(s)
    if comp.constraint == "positive":
        return _softplus(s)
    return s


def glorot(rng, fan_in, fan_out, shape=None):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape or (fan_in, fan_out))


def init_params(config: ModelConfig, in_dim: int, num_classes: int | None, rng) -> KgcnParams:
    """Glorot weights and normals, offsets at the origin, kappa at its
    configured start value."""
    comps = config.components()
    m = len(comps)
    vals = {}
    for i, c in enumerate(comps):
        widths = [in_dim] + [int(h) // m for h in config.hidden]
        for layer, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            vals[f"c{i}.W{layer}"] = glorot(rng, a, b)
        if num_classes is not None:
            d = widths[-1]
            vals[f"c{i}.a"] = glorot(rng, d, num_classes, (num_classes, d))
            vals[f"c{i}.p"] = np.zeros((num_classes, d))
        if c.trainable:
            s = c.kappa if c.constraint == "free" else _softplus_inv(abs(c.kappa))
            vals[f"c{i}.kappa"] = np.array(float(s))
    return KgcnParams(vals, comps)


# ---------------------------------------------------------------------------
# building blocks

def preprocess_features(X, kappa):
    """Rescale features so the largest row has norm ``1/(2 sqrt|kappa|)``.

    Flat space (kappa == 0) and all-zero input pass through unchanged.
    """
    k = _k(kappa)
    Xv = np.asarray(value(X))
    mx = float(np.max(np.linalg.norm(Xv, axis=-1))) if Xv.size else 0.0
    if k == 0.0 or mx == 0.0:
        return X
    return X / (2.0 * ad.sqrt(ad.abs(kappa)) * mx)


def mobius_nonlin(X, sigma, kappa, safe=False):
    """``exp0(sigma(log0(x)))`` row-wise; ``sigma=None`` is the identity."""
    if sigma is None:
        return X
    if isinstance(sigma, str):
        sigma = NONLINEARITIES[sigma]
        if sigma is None:
            return X
    return exp0(sigma(log0(X, kappa, safe=safe)), kappa, safe=safe)


def kgcn_layer(H, W, A_hat, kappa, sigma="relu", safe=True, dropout_mask=None):
    """One curved graph-convolution layer ``sigma(A (x) (H (x) W))``.

    ``dropout_mask`` (already rescaled) multiplies the tangent vectors
    ``log0(H)`` before the weight product.
    """
    if np.shape(value(H))[-1] != np.shape(value(W))[0]:
        raise ShapeError(f"H has width {np.shape(value(H))[-1]}, W expects {np.shape(value(W))[0]}")
    if dropout_mask is None:
        HW = right_matmul(H, W, kappa, safe=safe)
    else:
        HW = exp0(ad.matmul(log0(H, kappa, safe=safe) * dropout_mask, W), kappa, safe=safe)
    out = left_matmul(A_hat, HW, kappa, safe=safe)
    return mobius_nonlin(out, sigma, kappa, safe=safe)


def _arsin_k(t, kappa):
    """Curvature-scaled inverse sine: ``asinh`` for kappa < 0, clipped
    ``asin`` for kappa > 0, odd power series near 0."""
    k = _k(kappa)
    tv = np.asarray(value(t))
    small = np.abs(k) * tv * tv < TAYLOR_EPS
    t2 = t * t
    series = t + kappa * t * t2 / 6.0 + 3.0 * kappa * kappa * t * t2 * t2 / 40.0
    if k == 0.0 or np.all(small):
        return series
    if k < 0:
        s = ad.sqrt(-kappa)
        exact = ad.asinh(s * t) / s
    else:
        s = ad.sqrt(kappa)
        exact = ad.asin(ad.clamp(s * t, -ASIN_CLIP, ASIN_CLIP)) / s
    return ad.where(small, series, exact) if np.any(small) else exact


def kappa_logits(H, a, p, kappa):
    """Class scores ``lambda_p |a| arsin_k(2<z,a> / ((1 + k|z|^2)|a|))`` with
    ``z = -p (+) x``; ``H`` is ``(n, d)``, ``a`` and ``p`` are ``(K, d)``.

    ``|logit| / (lambda_p |a|)`` is the geodesic distance from ``x`` to the
    hyperplane through ``p`` orthogonal to ``a`` (exact for kappa <= 0).
    """
    x = ad.reshape(H, (np.shape(value(H))[0], 1, -1))
    z = kappa_add(-p, x, kappa, project=False)  # (n, K, d)
    za = ad.sum(z * a, axis=-1)
    z2 = ad.sum(z * z, axis=-1)
    an = ad.sum(_norm(a), axis=-1)
    an_safe = ad.where(value(an) > 0, an, 1.0)
    t = 2.0 * za / ((1.0 + kappa * z2) * an_safe)
    lam = conformal_factor(p, kappa)
    return lam * an * _arsin_k(t, kappa)


def product_split(X, dims):
    """Split the columns of ``X`` into consecutive blocks of width ``dims``."""
    dims = [c.dim if isinstance(c, ManifoldComponent) else int(c) for c in dims]
    width = np.shape(value(X))[-1]
    if sum(dims) != width:
        raise ShapeError(f"component dims {dims} do not add up to width {width}")
    cuts = np.cumsum([0] + dims)
    return [ad.getitem(X, (Ellipsis, slice(int(a), int(b)))) for a, b in zip(cuts[:-1], cuts[1:])]


def product_distance(xs, ys, kappas):
    """``sqrt(sum_c d_c(x_c, y_c)^2)`` over the components."""
    if not (len(xs) == len(ys) == len(kappas)):
        raise ShapeError("need one block of x, y and one kappa per component")
    tot = 0.0
    for x, y, k in zip(xs, ys, kappas):
        d = distance(x, y, k)
        tot = tot + d * d
    return ad.sqrt(tot)


# ---------------------------------------------------------------------------
# full network

def _drop_adjacency(A_hat, rate, rng):
    """Zero a random fraction of the entries, then rescale every row back to
    its original sum (the diagonal is kept if a row loses everything)."""
    A = sp.csr_matrix(A_hat, copy=True)
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    keep = rng.uniform(size=A.nnz) >= rate
    keep |= rows == A.indices
    old = np.asarray(A.sum(axis=1)).reshape(-1)
    A.data = A.data * keep
    A.eliminate_zeros()
    new = np.asarray(A.sum(axis=1)).reshape(-1)
    scale = np.where(new != 0, old / np.where(new != 0, new, 1.0), 1.0)
    return (sp.diags(scale) @ A).tocsr()


def _onehot_first_layer(W, A_hat, kappa, sigma, preprocess):
    """First layer for identity features without materialising ``I``.

    Row ``i`` of the (rescaled) identity is ``alpha e_i``, so
    ``log0(X) W = atan_k(alpha) W``.
    """
    k = _k(kappa)
    alpha = 1.0 / (2.0 * ad.sqrt(ad.abs(kappa))) if (preprocess and k != 0.0) else 1.0
    HW = exp0(atan_k(alpha, kappa, safe=True) * W, kappa, safe=True)
    return mobius_nonlin(left_matmul(A_hat, HW, kappa, safe=True), sigma, kappa, safe=True)


def embed(theta, components, X, A_hat, config: ModelConfig, training=False, rng=None):
    """Run the graph layers; returns one ``(n, d_c)`` point matrix per
    component.  ``theta`` maps parameter names to arrays or tensors.

    ``X=None`` stands for one-hot (identity) node features.
    """
    sigma = NONLINEARITIES[config.nonlinearity]
    L = len(config.hidden)
    use_dropout = training and config.dropout > 0
    if training and config.dropout_adjacency > 0:
        A_hat = _drop_adjacency(A_hat, config.dropout_adjacency, rng)
    if X is None and use_dropout:
        X = np.eye(A_hat.shape[0])
    outs = []
    for i, comp in enumerate(components):
        kappa = kappa_of(theta, i, comp)
        start = 0
        if X is None:
            H = _onehot_first_layer(theta[f"c{i}.W0"], A_hat, kappa, sigma, config.preprocess)
            _assert_in_domain(H, kappa)
            start = 1
        else:
            H = preprocess_features(X, kappa) if config.preprocess else X
        for layer in range(start, L):
            W = theta[f"c{i}.W{layer}"]
            mask = None
            if use_dropout:
                shape = np.shape(value(H))
                mask = (rng.uniform(size=shape) >= config.dropout) / (1.0 - config.dropout)
            H = kgcn_layer(H, W, A_hat, kappa, sigma, dropout_mask=mask)
            _assert_in_domain(H, kappa)
        outs.append(H)
    return outs


def _assert_in_domain(H, kappa):
    k = _k(kappa)
    if k < 0:
        r = np.max(np.sum(np.square(value(H)), axis=-1)) if np.size(value(H)) else 0.0
        assert k * r > -1.0, "embedding left the hyperbolic ball"


def class_scores(theta, components, embeddings, A_hat):
    """``A_hat @ sum_c logits_c``; softmax of this gives class probabilities."""
    total = None
    for i, (comp, H) in enumerate(zip(components, embeddings)):
        kappa = kappa_of(theta, i, comp)
        p = exp0(theta[f"c{i}.p"], kappa, safe=True)
        lg = kappa_logits(H, theta[f"c{i}.a"], p, kappa)
        total = lg if total is None else total + lg
    return ad.matmul(A_hat, total)


def forward(params: KgcnParams, G, config: ModelConfig, A_hat=None, training=False, rng=None):
    """Class probabilities, ``(n, C)`` with rows summing to 1."""
    from .graph import normalize_adjacency

    A_hat = normalize_adjacency(G, config.adjacency_mode) if A_hat is None else A_hat
    embs = embed(params.values, params.components, G.features, A_hat, config, training, rng)
    return ad.softmax(class_scores(params.values, params.components, embs, A_hat), axis=-1)


def euclidean_gcn_forward(params: KgcnParams, G, config: ModelConfig, A_hat=None):
    """Plain GCN with the same weights: ``sigma(A H W)`` layers and the flat
    limit ``4 <x - p, a>`` of the class scores.  Reference for small-|kappa|
    checks; ignores curvature entirely."""
    from .graph import normalize_adjacency

    A_hat = normalize_adjacency(G, config.adjacency_mode) if A_hat is None else A_hat
    sig = {"relu": lambda v: np.maximum(v, 0.0), "tanh": np.tanh, "identity": lambda v: v}[config.nonlinearity]
    total = 0.0
    for i, _ in enumerate(params.components):
        H = G.features
        for layer in range(len(config.hidden)):
            H = sig(A_hat @ (H @ params.values[f"c{i}.W{layer}"]))
        a, p = params.values[f"c{i}.a"], params.values[f"c{i}.p"]
        total = total + 4.0 * (H @ a.T - np.sum(a * p, axis=1))
    z = A_hat @ total
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)

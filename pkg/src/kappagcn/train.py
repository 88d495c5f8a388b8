"""Optimisers, the distortion objective and the experiment drivers."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from . import autodiff as ad
from .autodiff import value
from .errors import ConfigError, ShapeError
from .graph import (UNREACHABLE, Graph, bfs_all_pairs, gen_balanced_tree, gen_geometric_graph,
                    load_graph, make_split, normalize_adjacency, sbm, sphere_radius_for_degree)
from .manifold import distance
from .model import ModelConfig, class_scores, embed, init_params, kappa_of


# ---------------------------------------------------------------------------
# optimisers

class Adam:
    """Bias-corrected Adam over a dict of named arrays."""

    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = dict(params)
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if np.shape(g) != np.shape(p):
                raise ShapeError(f"gradient for {name} has shape {np.shape(g)}, parameter {np.shape(p)}")
            m = self.m.get(name, np.zeros_like(p))
            v = self.v.get(name, np.zeros_like(p))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            out[name] = p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return out


def adam_step(state: Adam, params: dict, grads: dict) -> dict:
    return state.step(params, grads)


class GradientDescent:
    def __init__(self, lr=1e-4):
        self.lr = lr

    def step(self, params: dict, grads: dict) -> dict:
        out = dict(params)
        for name, g in grads.items():
            if np.shape(g) != np.shape(params[name]):
                raise ShapeError(f"gradient for {name} does not match its parameter")
            out[name] = params[name] - self.lr * g
        return out


class GroupedOptimizer:
    """Routes curvature parameters (``*.kappa``) and everything else to
    separate optimisers."""

    def __init__(self, euclidean, curvature):
        self.euclidean = euclidean
        self.curvature = curvature

    @staticmethod
    def split(grads: dict):
        kap = {k: g for k, g in grads.items() if k.endswith(".kappa")}
        euc = {k: g for k, g in grads.items() if not k.endswith(".kappa")}
        return euc, kap

    def step(self, params: dict, grads: dict) -> dict:
        euc, kap = self.split(grads)
        params = self.euclidean.step(params, euc)
        return self.curvature.step(params, kap) if kap else params


def _make_optimizer(cfg: ModelConfig, kappa_optimizer: str):
    if kappa_optimizer == "sgd":
        kap = GradientDescent(cfg.lr_kappa)
    elif kappa_optimizer == "adam":
        kap = Adam(cfg.lr_kappa)
    else:
        raise ConfigError("kappa_optimizer must be 'sgd' or 'adam'")
    return GroupedOptimizer(Adam(cfg.lr), kap)


# ---------------------------------------------------------------------------
# distortion objective

class PairTargets:
    """Reachable pairs ``i < j`` with their graph distances."""

    def __init__(self, D_G):
        D_G = np.asarray(D_G)
        iu, ju = np.triu_indices(D_G.shape[0], 1)
        g = D_G[iu, ju]
        keep = (g != UNREACHABLE) & (g > 0)
        self.n = D_G.shape[0]
        self.iu = np.ascontiguousarray(iu[keep], dtype=np.int64)
        self.ju = np.ascontiguousarray(ju[keep], dtype=np.int64)
        self.g = g[keep].astype(np.float64)

    def __len__(self):
        return len(self.g)

    def workspace(self):
        """Coefficient buffers shared by successive evaluations.

        Each call bumps a generation counter; a backward pass holding an
        older generation recomputes its coefficients instead of reading
        buffers that a later forward pass has overwritten.
        """
        if getattr(self, "_buffers", None) is None:
            self._buffers = (np.zeros((self.n, self.n)), np.zeros((self.n, self.n)))
            self._gen = 0
        self._gen += 1
        return self._buffers + (self._gen,)

    def coefficients(self, gen, Z, k):
        if gen == self._gen:
            return self._buffers
        cn = np.zeros((self.n, self.n))
        cd = np.zeros_like(cn)
        _kernels.distortion_single(Z, k, self.iu, self.ju, self.g, cn, cd)
        return cn, cd


def _distortion_forward(*args, targets, m):
    Zs = [np.ascontiguousarray(a, dtype=np.float64) for a in args[:m]]
    ks = [float(np.asarray(k)) for k in args[m:]]
    P = len(targets)
    if P == 0:
        return np.float64(0.0), None
    if m == 1:
        Z, k = Zs[0], ks[0]
        if Z.shape[0] != targets.n:
            raise ShapeError("embedding rows do not match the distance matrix")
        cn, cd, gen = targets.workspace()
        tot, gk = _kernels.distortion_single(Z, k, targets.iu, targets.ju, targets.g, cn, cd)
        return tot / P, ("fused", Z, k, gen, gk)
    dcs = np.empty((m, P))
    for c in range(m):
        if Zs[c].shape[0] != targets.n:
            raise ShapeError("embedding rows do not match the distance matrix")
        dcs[c] = _kernels.distances(Zs[c], ks[c], targets.iu, targets.ju)
    dtot = dcs[0] if m == 1 else np.sqrt(np.sum(dcs * dcs, axis=0))
    ratio2 = (dtot / targets.g) ** 2
    loss = np.sum((ratio2 - 1.0) ** 2) / P
    return loss, (Zs, ks, dcs, dtot, ratio2)


def _distortion_vjp(gout, out, saved, values, attrs):
    m = attrs["m"]
    if saved is None:
        return tuple(np.zeros(np.shape(v)) for v in values)
    t = attrs["targets"]
    P = len(t)
    if saved[0] == "fused":
        _, Z, k, gen, gk = saved
        cn, cd = t.coefficients(gen, Z, k)
        scale = float(gout) / P
        return scale * _kernels.contract(Z, k, cn, cd), np.array(scale * gk)
    Zs, ks, dcs, dtot, ratio2 = saved
    dL_dd = float(gout) * 4.0 * (ratio2 - 1.0) * dtot / (t.g * t.g) / P
    gZ, gk = [], []
    for c in range(m):
        if m == 1:
            w = dL_dd
        else:
            w = np.where(dtot > 0, dL_dd * dcs[c] / np.where(dtot > 0, dtot, 1.0), 0.0)
        gz, gkc = _kernels.distance_grads(Zs[c], ks[c], t.iu, t.ju, np.ascontiguousarray(w))
        gZ.append(gz)
        gk.append(np.array(gkc))
    return tuple(gZ) + tuple(gk)


ad.register("pairwise_distortion", _distortion_forward, _distortion_vjp)


def distortion_loss(embeddings, kappas, D_G):
    """Mean of ``((d(x_i, x_j)/d_G(i, j))^2 - 1)^2`` over reachable pairs
    ``i < j``; with several components ``d`` is the product distance.

    ``embeddings``/``kappas`` are single values or equal-length lists;
    ``D_G`` is a hop-distance matrix or a :class:`PairTargets`.
    """
    if not isinstance(embeddings, (list, tuple)):
        embeddings, kappas = [embeddings], [kappas]
    targets = D_G if isinstance(D_G, PairTargets) else PairTargets(D_G)
    return ad.apply("pairwise_distortion", *embeddings, *kappas, targets=targets, m=len(embeddings))


def distortion_loss_reference(embeddings, kappas, D_G):
    """Same objective composed from generic primitives (small graphs only)."""
    if not isinstance(embeddings, (list, tuple)):
        embeddings, kappas = [embeddings], [kappas]
    t = D_G if isinstance(D_G, PairTargets) else PairTargets(D_G)
    tot = 0.0
    for Z, k in zip(embeddings, kappas):
        d = distance(ad.getitem(Z, t.iu), ad.getitem(Z, t.ju), k, safe=True)
        tot = tot + d * d
    ratio2 = tot / (t.g * t.g)
    return ad.sum((ratio2 - 1.0) * (ratio2 - 1.0)) / len(t)


# ---------------------------------------------------------------------------
# run records

@dataclass
class RunMetrics:
    """Outcome of one training run.

    ``history`` rows are ``(epoch, loss, metric, *kappas)``.
    """

    config: dict
    metrics: dict
    kappas: list
    seed: int
    runtime_s: float = 0.0
    history: list = field(default_factory=list)
    kappa_names: list = field(default_factory=list)

    def to_json_dict(self, include_runtime=False) -> dict:
        """Schema ``{config, metrics, kappas, seed, runtime_s}``.  Wall-clock
        time is reported as ``None`` unless requested so that reruns produce
        identical files; the CLI writes it to a separate timing file."""
        return {"config": _jsonable(self.config), "metrics": _jsonable(self.metrics),
                "kappas": [float(k) for k in self.kappas], "seed": int(self.seed),
                "runtime_s": float(self.runtime_s) if include_runtime else None}

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "metric"] + [f"kappa_{i}" for i in range(len(self.kappas))])
        for row in self.history:
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# graph sources

def build_graph(desc: dict, seed: int = 0) -> Graph:
    """Graph from a config entry.

    ``{"kind": "tree", "depth", "branching"}``,
    ``{"kind": "torus"|"sphere", "n", "radius" or "mean_degree"}``,
    ``{"kind": "sbm", "sizes", "p_in", "p_out", "noise"}``,
    ``{"kind": "cycle"|"path", "n"}`` or ``{"edges", "features"?, "labels"?}``.
    """
    from .graph import cycle_graph, path_graph

    desc = dict(desc)
    rng = np.random.default_rng([int(desc.pop("seed", seed)), 1])
    kind = desc.get("kind", "file" if "edges" in desc else None)
    try:
        if kind == "tree":
            return gen_balanced_tree(int(desc["depth"]), int(desc["branching"]))
        if kind in ("torus", "sphere"):
            n = int(desc["n"])
            r = desc.get("radius")
            if r is None:
                if kind != "sphere":
                    raise ConfigError("torus graphs need an explicit radius")
                r = sphere_radius_for_degree(n, float(desc["mean_degree"]))
            return gen_geometric_graph(kind, n, float(r), rng)
        if kind == "sbm":
            return sbm(desc.get("sizes", [100, 100]), float(desc.get("p_in", 0.1)),
                       float(desc.get("p_out", 0.005)), rng, float(desc.get("noise", 0.4)),
                       int(desc.get("extra_dims", 6)))
        if kind == "cycle":
            return cycle_graph(int(desc["n"]))
        if kind == "path":
            return path_graph(int(desc["n"]))
        if kind == "file":
            return load_graph(desc["edges"], desc.get("features"), desc.get("labels"))
    except KeyError as exc:
        raise ConfigError(f"graph config {desc!r} is missing {exc.args[0]!r}") from None
    raise ConfigError(f"unknown graph kind {kind!r}")


def _model_config(d) -> ModelConfig:
    if isinstance(d, ModelConfig):
        return d
    try:
        return ModelConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"bad model config: {exc}") from None


# ---------------------------------------------------------------------------
# distortion experiment

DISTORTION_MODEL = dict(hidden=[16, 10], manifold="H10", nonlinearity="identity",
                        lr=0.01, lr_kappa=1e-4, epochs=2000, weight_decay=0.0)


@dataclass
class DistortionConfig:
    graph: dict = field(default_factory=lambda: {"kind": "tree", "depth": 5, "branching": 4})
    model: dict = field(default_factory=lambda: dict(DISTORTION_MODEL))
    kappa_optimizer: str = "sgd"
    curvature_start: str = "unit"
    seed: int = 0
    run_index: int = 0

    def to_dict(self):
        return asdict(self)


def _distortion_config(cfg) -> DistortionConfig:
    if isinstance(cfg, DistortionConfig):
        return cfg
    try:
        cfg = DistortionConfig(**cfg)
    except TypeError as exc:
        raise ConfigError(f"bad distortion config: {exc}") from None
    model = dict(DISTORTION_MODEL)
    model.update(cfg.model)
    cfg.model = model
    if cfg.curvature_start not in ("unit", "diameter"):
        raise ConfigError("curvature_start must be 'unit' or 'diameter'")
    return cfg


def diameter_curvature(D_G) -> float:
    """``(pi / diameter)^2``: the curvature whose half great circle is as
    long as the longest shortest path."""
    D = np.asarray(D_G)
    diam = float(D.max()) if D.size else 0.0
    if diam <= 0:
        raise ConfigError("graph has no reachable pairs")
    return float((np.pi / diam) ** 2)


def train_distortion(cfg, graph: Graph | None = None) -> RunMetrics:
    """Fit a graph network with one-hot inputs so that embedded distances
    match hop distances; reports the lowest distortion seen.

    ``curvature_start="diameter"`` starts curved components at
    ``+-(pi/diameter)^2`` instead of ``+-1``; a unit sphere cannot hold a
    graph whose diameter exceeds ``pi`` hops.
    """
    cfg = _distortion_config(cfg)
    mcfg = _model_config(cfg.model)
    t0 = time.perf_counter()
    G = build_graph(cfg.graph, cfg.seed) if graph is None else graph
    D_G = bfs_all_pairs(G)
    targets = PairTargets(D_G)
    if cfg.curvature_start == "diameter" and mcfg.kappa_init is None:
        # same magnitude for every curved component, sign from its kind
        k0 = diameter_curvature(D_G)
        mcfg.kappa_init = [float(np.sign(c.kappa)) * k0 for c in mcfg.components()]
    A_hat = normalize_adjacency(G, mcfg.adjacency_mode)
    rng = np.random.default_rng([cfg.seed, 2, cfg.run_index])
    params = init_params(mcfg, G.n, None, rng)
    kappa_start = params.kappas()
    opt = _make_optimizer(mcfg, cfg.kappa_optimizer)
    theta = params.values
    names = list(theta)
    best, best_epoch, history = np.inf, -1, []
    for epoch in range(mcfg.epochs):
        tape = ad.Tape()
        leaves = {k: tape.leaf(theta[k]) for k in names}
        embs = embed(leaves, params.components, None, A_hat, mcfg, training=False)
        kap = [kappa_of(leaves, i, c) for i, c in enumerate(params.components)]
        loss = distortion_loss(embs, kap, targets)
        lv = float(loss.value)
        kv = [float(value(k)) for k in kap]
        if not np.isfinite(lv):
            raise FloatingPointError(f"distortion became {lv} at epoch {epoch}")
        if lv < best:
            best, best_epoch = lv, epoch
        history.append((epoch, lv, best, *kv))
        g = tape.backward(loss)
        theta = opt.step(theta, {k: g[leaves[k].node] for k in names})
    params.values = theta
    kappas = params.kappas()
    return RunMetrics(
        config=cfg.to_dict(),
        metrics={"min_distortion": best, "best_epoch": best_epoch,
                 "final_distortion": history[-1][1] if history else None,
                 "epochs": len(history), "n": G.n, "edges": G.num_edges, "pairs": len(targets),
                 "kappa_start": kappa_start},
        kappas=kappas, seed=cfg.seed, runtime_s=time.perf_counter() - t0, history=history)


def sweep_configs(kappas, cfg=None) -> list[DistortionConfig]:
    """Per-row configs of a curvature sweep: fixed curvature, shared graph
    seed, and an initialisation stream keyed by the row index."""
    kappas = [float(k) for k in kappas]
    if not kappas:
        raise ConfigError("kappa grid is empty")
    cfg = _distortion_config(cfg or {})
    dim = int(cfg.model["hidden"][-1])
    rows = []
    for i, k in enumerate(kappas):
        kind = "H" if k < 0 else ("S" if k > 0 else "E")
        model = dict(cfg.model, manifold=f"{kind}{dim}", constraint="fixed", kappa_init=[k])
        rows.append(DistortionConfig(graph=cfg.graph, model=model, kappa_optimizer=cfg.kappa_optimizer,
                                     curvature_start=cfg.curvature_start, seed=cfg.seed, run_index=i))
    return rows


def kappa_sweep(kappas, cfg=None, graph: Graph | None = None) -> list[RunMetrics]:
    """One distortion run per curvature value, with the curvature fixed."""
    subs = sweep_configs(kappas, cfg)
    G = build_graph(subs[0].graph, subs[0].seed) if graph is None else graph
    return [train_distortion(sub, G) for sub in subs]


# ---------------------------------------------------------------------------
# node classification

NODECLASS_MODEL = dict(hidden=[16], manifold="H16", nonlinearity="relu", dropout=0.5,
                       dropout_adjacency=0.0, lr=0.01, lr_kappa=0.01, weight_decay=5e-4,
                       epochs=2000, patience=200)


@dataclass
class NodeClassConfig:
    graph: dict = field(default_factory=lambda: {"kind": "sbm", "sizes": [100, 100],
                                                 "p_in": 0.1, "p_out": 0.005})
    model: dict = field(default_factory=lambda: dict(NODECLASS_MODEL))
    split: dict = field(default_factory=lambda: {"n_known": 100, "per_label_train": 20,
                                                 "early_stop_size": 30})
    kappa_optimizer: str = "adam"
    bootstrap: int = 1000
    seed: int = 0

    def to_dict(self):
        return asdict(self)


def bootstrap_ci(values, n_resamples=1000, level=0.95, rng=None):
    """Percentile bootstrap interval for the mean of ``values``."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        return (float("nan"), float("nan"))
    rng = np.random.default_rng(0) if rng is None else rng
    idx = rng.integers(v.size, size=(n_resamples, v.size))
    means = v[idx].mean(axis=1)
    lo, hi = np.percentile(means, [100 * (1 - level) / 2, 100 * (1 + level) / 2])
    return (float(lo), float(hi))


def _nodeclass_config(cfg) -> NodeClassConfig:
    if isinstance(cfg, NodeClassConfig):
        return cfg
    try:
        cfg = NodeClassConfig(**cfg)
    except TypeError as exc:
        raise ConfigError(f"bad nodeclass config: {exc}") from None
    model = dict(NODECLASS_MODEL)
    model.update(cfg.model)
    cfg.model = model
    return cfg


def train_nodeclass(cfg, graph: Graph | None = None) -> RunMetrics:
    """Semi-supervised node classification with early stopping.

    Cross-entropy on the training nodes plus L2 on the first-layer weights.
    After every epoch the model is evaluated without dropout on the
    early-stopping set; training ends once that loss has not improved for
    ``patience`` epochs (or after ``epochs``), and the parameters with the
    best early-stopping accuracy are the ones scored on the test set.
    """
    cfg = _nodeclass_config(cfg)
    mcfg = _model_config(cfg.model)
    t0 = time.perf_counter()
    G = build_graph(cfg.graph, cfg.seed) if graph is None else graph
    if G.features is None or G.labels is None:
        raise ConfigError("node classification needs features and labels")
    split = make_split(G, rng=np.random.default_rng([cfg.seed, 3]), **cfg.split)
    A_hat = normalize_adjacency(G, mcfg.adjacency_mode)
    rng = np.random.default_rng([cfg.seed, 4])
    params = init_params(mcfg, G.features.shape[1], G.num_classes, rng)
    opt = _make_optimizer(mcfg, cfg.kappa_optimizer)
    theta = params.values
    names = list(theta)
    first = [k for k in names if k.endswith(".W0")]
    drop_rng = np.random.default_rng([cfg.seed, 5])

    def evaluate(th):
        embs = embed(th, params.components, G.features, A_hat, mcfg, training=False)
        z = np.asarray(class_scores(th, params.components, embs, A_hat))
        return z

    def ce(z, idx):
        zz = z[idx] - z[idx].max(axis=1, keepdims=True)
        logp = zz - np.log(np.exp(zz).sum(axis=1, keepdims=True))
        return float(-logp[np.arange(len(idx)), G.labels[idx]].mean())

    best_loss, best_acc, best_theta, best_epoch = np.inf, -1.0, dict(theta), 0
    wait, history = 0, []
    for epoch in range(mcfg.epochs):
        tape = ad.Tape()
        leaves = {k: tape.leaf(theta[k]) for k in names}
        embs = embed(leaves, params.components, G.features, A_hat, mcfg, training=True, rng=drop_rng)
        loss = ad.softmax_cross_entropy(class_scores(leaves, params.components, embs, A_hat),
                                        G.labels, index=split.train)
        for k in first:
            loss = loss + mcfg.weight_decay * ad.sum(leaves[k] * leaves[k])
        g = tape.backward(loss)
        theta = opt.step(theta, {k: g[leaves[k].node] for k in names})
        z = evaluate(theta)
        es_loss = ce(z, split.early_stop)
        es_acc = float(np.mean(z[split.early_stop].argmax(1) == G.labels[split.early_stop]))
        kv = [float(value(kappa_of(theta, i, c))) for i, c in enumerate(params.components)]
        history.append((epoch, float(loss.value), es_acc, *kv))
        if es_acc > best_acc or (es_acc == best_acc and es_loss < best_loss):
            best_acc, best_theta, best_epoch = es_acc, dict(theta), epoch
        if es_loss < best_loss:
            best_loss, wait = es_loss, 0
        else:
            wait += 1
            if wait >= mcfg.patience:
                break
    z = evaluate(best_theta)
    pred = z.argmax(axis=1)
    correct = (pred[split.test] == G.labels[split.test]).astype(float)
    val_acc = float(np.mean(pred[split.validation] == G.labels[split.validation])) \
        if len(split.validation) else float("nan")
    params.values = best_theta
    ci = bootstrap_ci(correct, cfg.bootstrap, rng=np.random.default_rng([cfg.seed, 6]))
    return RunMetrics(
        config=cfg.to_dict(),
        metrics={"test_accuracy": float(correct.mean()) if correct.size else float("nan"),
                 "test_ci95": list(ci), "validation_accuracy": val_acc,
                 "early_stop_accuracy": best_acc, "selected_epoch": best_epoch,
                 "epochs": len(history), "n_train": len(split.train), "n_test": len(split.test)},
        kappas=params.kappas(), seed=cfg.seed, runtime_s=time.perf_counter() - t0, history=history)

"""Graphs: construction, file ingestion, adjacency normalisation, shortest
paths, synthetic generators, curvature estimation and dataset splits."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from .errors import (EndpointIndexError, InfeasibleSplitError, InsufficientGraphError,
                     ParseError, ShapeError)

UNREACHABLE = -1


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph with optional node features and labels.

    ``edges`` holds each edge once as ``(u, v)`` with ``u < v``; self-loops
    are dropped (normalisation adds them back).
    """

    n: int
    edges: np.ndarray
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    num_classes: int | None = None
    adjacency: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise EndpointIndexError(f"edge endpoint outside [0, {self.n})")
        e = np.sort(e, axis=1)
        e = e[e[:, 0] != e[:, 1]]
        e = np.unique(e, axis=0) if len(e) else e
        object.__setattr__(self, "edges", e)
        if self.features is not None:
            f = np.asarray(self.features, dtype=np.float64)
            if f.ndim != 2 or f.shape[0] != self.n:
                raise ShapeError(f"features must have {self.n} rows")
            object.__setattr__(self, "features", f)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if y.shape[0] != self.n:
                raise ShapeError(f"labels must have length {self.n}")
            object.__setattr__(self, "labels", y)
            if self.num_classes is None:
                object.__setattr__(self, "num_classes", int(y.max()) + 1 if y.size else 0)
        a = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(self.n, self.n))
        adj = (a + a.T).tocsr()
        adj.sort_indices()
        object.__setattr__(self, "adjacency", adj)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def with_features(self, features, labels=None) -> "Graph":
        return Graph(self.n, self.edges, features,
                     self.labels if labels is None else labels, None if labels is not None else self.num_classes)


def normalize_adjacency(G: Graph, mode: str = "symmetric") -> sp.csr_matrix:
    """Normalised ``A + I``.

    ``symmetric``: ``D^-1/2 (A+I) D^-1/2``; ``left``: ``D^-1 (A+I)`` (rows sum
    to 1); ``right``: ``(A+I) D^-1`` (columns sum to 1).
    """
    a = (G.adjacency + sp.identity(G.n, format="csr")).tocsr()
    deg = np.asarray(a.sum(axis=1)).reshape(-1)
    if mode == "symmetric":
        s = sp.diags(1.0 / np.sqrt(deg))
        return (s @ a @ s).tocsr()
    if mode == "left":
        return (sp.diags(1.0 / deg) @ a).tocsr()
    if mode == "right":
        return (a @ sp.diags(1.0 / deg)).tocsr()
    raise ValueError(f"unknown normalisation mode {mode!r}")


def bfs_all_pairs(G: Graph) -> np.ndarray:
    """Hop distances between all node pairs; ``UNREACHABLE`` (-1) where no
    path exists."""
    d = shortest_path(G.adjacency, method="D", directed=False, unweighted=True)
    out = np.full(d.shape, UNREACHABLE, dtype=np.int64)
    ok = np.isfinite(d)
    out[ok] = d[ok].astype(np.int64)
    return out


# ---------------------------------------------------------------------------
# curvature estimation

def psi(d_am, d_bc, d_ab, d_ac, normalization="quarter"):
    """Parallelogram deviation for a triangle ``(a, b, c)`` with ``m`` the
    midpoint of ``b`` and ``c``.

    ``normalization="quarter"`` divides the side term by ``4 d(a,m)``;
    ``"parallelogram"`` divides it by ``8 d(a,m)``, which makes ``psi`` vanish
    exactly for a Euclidean parallelogram.
    """
    d_am = np.asarray(d_am, dtype=np.float64)
    side = 2.0 * np.square(d_ab) + 2.0 * np.square(d_ac)
    c = 4.0 if normalization == "quarter" else 8.0
    if normalization not in ("quarter", "parallelogram"):
        raise ValueError(f"unknown normalization {normalization!r}")
    return d_am / 2.0 + np.square(d_bc) / (8.0 * d_am) - side / (c * d_am)


def estimate_curvature(G: Graph, n_iter: int, rng, normalization="quarter",
                       distinct_neighbors=False, distances=None):
    """Sampled sectional-curvature estimate of a graph.

    For every node ``m`` with a neighbour, draw ``n_iter`` triples: ``b`` and
    ``c`` from the neighbours of ``m`` (independently, so ``b == c`` is
    possible unless ``distinct_neighbors``) and ``a`` uniformly from the
    other nodes.  Returns ``(kappa_hat, psi_per_node)`` where ``psi_per_node``
    is NaN for nodes that produced no valid sample.
    """
    if G.n < 2:
        raise InsufficientGraphError("need at least two nodes")
    if n_iter < 1:
        raise ValueError("n_iter must be positive")
    D = bfs_all_pairs(G) if distances is None else distances
    psis = np.full(G.n, np.nan)
    for m in range(G.n):
        nb = G.neighbors(m)
        if len(nb) == 0 or (distinct_neighbors and len(nb) < 2):
            continue
        b = nb[rng.integers(len(nb), size=n_iter)]
        if distinct_neighbors:
            off = rng.integers(1, len(nb), size=n_iter)
            c = nb[(np.searchsorted(nb, b) + off) % len(nb)]
        else:
            c = nb[rng.integers(len(nb), size=n_iter)]
        a = rng.integers(G.n - 1, size=n_iter)
        a = a + (a >= m)
        d_am, d_ab, d_ac = D[a, m], D[a, b], D[a, c]
        ok = (d_am > 0) & (d_ab >= 0) & (d_ac >= 0)
        if np.any(ok):
            psis[m] = psi(d_am[ok], D[b, c][ok], d_ab[ok], d_ac[ok], normalization).mean()
    if np.all(np.isnan(psis)):
        raise InsufficientGraphError("no node admits a valid (m, b, c, a) sample")
    return float(np.nanmean(psis)), psis


# ---------------------------------------------------------------------------
# generators

def path_graph(n: int) -> Graph:
    return Graph(n, np.column_stack([np.arange(n - 1), np.arange(1, n)]))


def cycle_graph(n: int) -> Graph:
    e = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    return Graph(n, e)


def star_graph(leaves: int) -> Graph:
    """Centre 0 joined to nodes ``1..leaves``."""
    return Graph(leaves + 1, np.column_stack([np.zeros(leaves, dtype=int), np.arange(1, leaves + 1)]))


def complete_graph(n: int) -> Graph:
    iu = np.triu_indices(n, 1)
    return Graph(n, np.column_stack(iu))


def gen_balanced_tree(depth: int, branching: int) -> Graph:
    """Full ``branching``-ary tree of the given depth, nodes in BFS order.

    >>> g = gen_balanced_tree(5, 4)
    >>> g.n, g.num_edges
    (1365, 1364)
    """
    if depth < 0 or branching < 1:
        raise ValueError("need depth >= 0 and branching >= 1")
    n = sum(branching ** k for k in range(depth + 1))
    child = np.arange(1, n)
    return Graph(n, np.column_stack([(child - 1) // branching, child]))


def gen_geometric_graph(kind: str, n: int, radius: float, rng) -> Graph:
    """Random geometric graph on the flat unit torus or the unit sphere S^2.

    Nodes are joined when their (wrap-around / great-circle) distance is
    below ``radius``.
    """
    if n < 1 or radius <= 0:
        raise ValueError("need n >= 1 and radius > 0")
    if kind == "torus":
        p = rng.uniform(size=(n, 2))
        diff = np.abs(p[:, None, :] - p[None, :, :])
        diff = np.minimum(diff, 1.0 - diff)
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
    elif kind == "sphere":
        p = rng.standard_normal((n, 3))
        p /= np.linalg.norm(p, axis=1, keepdims=True)
        dist = np.arccos(np.clip(p @ p.T, -1.0, 1.0))
    else:
        raise ValueError(f"unknown kind {kind!r}; expected 'torus' or 'sphere'")
    iu, ju = np.triu_indices(n, 1)
    keep = dist[iu, ju] < radius
    return Graph(n, np.column_stack([iu[keep], ju[keep]]))


def sphere_radius_for_degree(n: int, mean_degree: float) -> float:
    """Radius giving the requested expected degree for ``gen_geometric_graph``
    on the sphere (a cap of angular radius R covers ``(1 - cos R)/2``)."""
    return float(np.arccos(1.0 - 2.0 * mean_degree / (n - 1)))


def sbm(sizes, p_in: float, p_out: float, rng, noise: float = 0.4, extra_dims: int = 6) -> Graph:
    """Stochastic block model with noisy community-indicator features.

    Features are the one-hot community code plus ``extra_dims`` pure-noise
    columns, all perturbed by Gaussian noise of scale ``noise``.
    """
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = len(labels)
    iu, ju = np.triu_indices(n, 1)
    p = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.uniform(size=len(p)) < p
    feats = np.zeros((n, len(sizes) + extra_dims))
    feats[np.arange(n), labels] = 1.0
    feats += noise * rng.standard_normal(feats.shape)
    return Graph(n, np.column_stack([iu[keep], ju[keep]]), feats, labels, len(sizes))


# ---------------------------------------------------------------------------
# file ingestion

def _read_edges(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.rstrip("\r\n")
            if not s.strip():
                continue
            parts = s.split("\t")
            if len(parts) != 2:
                raise ParseError(f"expected 'u<TAB>v', got {s!r}", path, lineno)
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"non-integer endpoint in {s!r}", path, lineno) from None
            rows.append((u, v, lineno))
    return rows


def _read_csv(path, dtype):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            try:
                out.append([dtype(t) for t in s.split(",")])
            except ValueError:
                raise ParseError(f"cannot parse {s!r}", path, lineno) from None
            if len(out[-1]) != len(out[0]):
                raise ParseError(f"expected {len(out[0])} columns, got {len(out[-1])}", path, lineno)
    return out


def load_graph(edges_path, features_path=None, labels_path=None) -> Graph:
    """Read a graph from a 0-indexed ``u<TAB>v`` edge list plus optional
    feature (CSV, one row per node) and label (one integer per line) files.

    The node count comes from the feature or label file when given, otherwise
    from the largest endpoint.  Files that look 1-indexed are rejected rather
    than shifted.
    """
    rows = _read_edges(edges_path)
    feats = labels = None
    n = None
    if features_path is not None:
        feats = np.asarray(_read_csv(features_path, float), dtype=np.float64)
        n = len(feats)
    if labels_path is not None:
        lab = _read_csv(labels_path, int)
        if any(len(r) != 1 for r in lab):
            raise ParseError("labels file must hold one integer per line", labels_path)
        labels = np.asarray([r[0] for r in lab], dtype=np.int64)
        if n is not None and len(labels) != n:
            raise ParseError(f"{len(labels)} labels for {n} feature rows", labels_path)
        n = len(labels) if n is None else n
    if n is None:
        if not rows:
            raise ParseError("empty edge list and no node count available", edges_path)
        lo = min(min(u, v) for u, v, _ in rows)
        if lo == 1:
            raise ParseError("edge list appears 1-indexed (no node 0); endpoints must be 0-indexed",
                             edges_path)
        n = max(max(u, v) for u, v, _ in rows) + 1
    for u, v, lineno in rows:
        for w in (u, v):
            if not 0 <= w < n:
                hint = " (file looks 1-indexed)" if w == n else ""
                raise EndpointIndexError(f"endpoint {w} outside [0, {n}){hint}", edges_path, lineno)
    e = np.array([(u, v) for u, v, _ in rows], dtype=np.int64).reshape(-1, 2)
    return Graph(n, e, feats, labels)


def write_graph(G: Graph, directory) -> dict:
    """Write ``edges.tsv`` (and ``features.csv`` / ``labels.csv`` when present)
    into ``directory``; returns the written paths."""
    from .io import atomic_write_text

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = {"edges": d / "edges.tsv"}
    atomic_write_text(out["edges"], "".join(f"{u}\t{v}\n" for u, v in G.edges))
    if G.features is not None:
        out["features"] = d / "features.csv"
        atomic_write_text(out["features"], "".join(",".join(repr(float(x)) for x in r) + "\n"
                                                   for r in G.features))
    if G.labels is not None:
        out["labels"] = d / "labels.csv"
        atomic_write_text(out["labels"], "".join(f"{int(y)}\n" for y in G.labels))
    return out


# ---------------------------------------------------------------------------
# splits

@dataclass(frozen=True)
class Split:
    train: np.ndarray
    early_stop: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def make_split(G: Graph, n_known: int = 1500, per_label_train: int = 20,
               early_stop_size: int = 500, rng=None, train_size: int | None = None) -> Split:
    """Random known/unknown split of the labelled nodes.

    ``n_known`` nodes are drawn as the known set; from it come the training
    nodes (``per_label_train`` per class, or ``train_size`` drawn uniformly
    when given) and ``early_stop_size`` early-stopping nodes, and the rest of
    the known set is the validation set.  All other nodes form the test set.
    """
    if G.labels is None:
        raise InfeasibleSplitError("graph has no labels")
    rng = np.random.default_rng(0) if rng is None else rng
    if n_known > G.n:
        raise InfeasibleSplitError(f"n_known={n_known} exceeds {G.n} nodes")
    known = rng.permutation(G.n)[:n_known]
    if train_size is None:
        train = []
        for c in range(G.num_classes):
            pool = known[G.labels[known] == c]
            if len(pool) < per_label_train:
                raise InfeasibleSplitError(
                    f"class {c} has {len(pool)} known nodes, need {per_label_train}")
            train.append(rng.choice(pool, per_label_train, replace=False))
        train = np.concatenate(train) if train else np.zeros(0, dtype=np.int64)
    else:
        if train_size > n_known:
            raise InfeasibleSplitError("train_size exceeds n_known")
        train = rng.choice(known, train_size, replace=False)
    rest = np.setdiff1d(known, train)
    rest = rest[rng.permutation(len(rest))]
    if early_stop_size > len(rest):
        raise InfeasibleSplitError(
            f"early_stop_size={early_stop_size} exceeds the {len(rest)} remaining known nodes")
    early = rest[:early_stop_size]
    val = rest[early_stop_size:]
    test = np.setdiff1d(np.arange(G.n), known)
    return Split(np.sort(train), np.sort(early), np.sort(val), test)

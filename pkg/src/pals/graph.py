"""Proximity graph over labeled and unlabeled instances.

Nodes carry a feature row, an optional clamped label and a label
distribution. Edges follow the union-of-k-nearest-neighbours rule (or a
dense RBF kernel) and are weighted by Gaussian affinity, so label
propagation can average over them.

Nodes are stored column-wise in numpy arrays; ``Instance`` is the exchange
type at the API boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from pals import N_CLASSES, UNLABELED
from pals.errors import ConfigurationError, UsageError

GRAPH_FORMAT = "pals-graph"
GRAPH_FORMAT_VERSION = 1
_TINY = np.finfo(float).tiny
_CHUNK = 512


@dataclass
class Instance:
    id: int
    features: np.ndarray
    true_label: int | None = None
    label_distribution: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float).reshape(-1)
        if self.true_label is not None:
            self.label_distribution = one_hot(self.true_label)


@dataclass
class KernelConfig:
    """``kind`` is ``"knn"`` (neighbour count ``k``) or ``"rbf"`` (width ``sigma``).

    For kNN graphs ``sigma`` may be left ``None``; it is then set to the mean
    distance to the k-th neighbour when the graph is built.
    """

    kind: str = "knn"
    k: int = 7
    sigma: float | None = None

    def __post_init__(self):
        if self.kind not in ("knn", "rbf"):
            raise ConfigurationError(f"unknown kernel kind {self.kind!r}")
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if self.kind == "rbf" and (self.sigma is None or self.sigma <= 0):
            raise ConfigurationError("rbf kernel needs sigma > 0")


@dataclass
class PropagationConfig:
    max_iterations: int = 1000
    tolerance: float = 1e-6
    clamp_labeled: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if self.tolerance <= 0:
            raise ConfigurationError("tolerance must be > 0")
        if not self.clamp_labeled:
            raise ConfigurationError("labeled nodes are always clamped")


def one_hot(label, n_classes=N_CLASSES):
    p = np.zeros(n_classes)
    p[int(label)] = 1.0
    return p


def check_distribution(p, atol=1e-9):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise UsageError("a label distribution is a 1-D vector over >= 2 labels")
    if np.any(~np.isfinite(p)) or np.any(p < -atol) or np.any(p > 1 + atol):
        raise UsageError(f"probabilities outside [0, 1]: {p}")
    if abs(p.sum() - 1.0) > atol:
        raise UsageError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


def pairwise_distance(a, b):
    a = np.asarray(getattr(a, "values", a), dtype=float).reshape(-1)
    b = np.asarray(getattr(b, "values", b), dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.size} vs {b.size}")
    return float(np.linalg.norm(a - b))


def affinity(d, sigma):
    """Gaussian affinity of distances ``d``; floored so that edges stay > 0."""
    w = np.exp(-np.square(d) / (2.0 * sigma * sigma))
    return np.maximum(w, _TINY)


class Standardizer:
    """Per-feature z-scoring; constant features get unit scale."""

    def __init__(self, mean=None, scale=None):
        self.mean = None if mean is None else np.asarray(mean, dtype=float)
        self.scale = None if scale is None else np.asarray(scale, dtype=float)

    def fit(self, X):
        X = np.asarray(X, dtype=float)
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale = np.where(std > 0, std, 1.0)
        return self

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def fit_transform(self, X):
        return self.fit(X).transform(X)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}


class ProximityGraph:
    """Weighted symmetric graph with per-node label distributions.

    Attributes
    ----------
    ids : list of int
    features : ndarray of shape (n, d)
    labels : ndarray of shape (n,)
        Clamped label, or -1 for unlabeled nodes.
    synthetic : ndarray of bool, shape (n,)
        Oversampled nodes; never queried or evaluated.
    distributions : ndarray of shape (n, n_classes)
    weights : scipy.sparse.csr_matrix of shape (n, n)
    sigma : float or None
        Affinity width. Fixed once the graph has two nodes so that local
        insertions never reweight the rest of the graph.
    neighbors, neighbor_dist : ndarray of shape (n, k)
        kNN tables (index -1 / distance inf where fewer than k exist).
    """

    def __init__(self, n_features, kernel=None, n_classes=N_CLASSES):
        self.kernel = kernel or KernelConfig()
        self.n_classes = n_classes
        self.ids = []
        self._index = {}
        self.features = np.empty((0, n_features))
        self.labels = np.empty(0, dtype=int)
        self.synthetic = np.empty(0, dtype=bool)
        self.distributions = np.empty((0, n_classes))
        self.weights = sparse.csr_matrix((0, 0))
        self.sigma = self.kernel.sigma
        self.neighbors = np.empty((0, self.kernel.k), dtype=int)
        self.neighbor_dist = np.empty((0, self.kernel.k))
        self.isolated = set()
        self.propagated = False
        self.last_iterations = 0

    def __len__(self):
        return len(self.ids)

    def __contains__(self, node_id):
        return node_id in self._index

    def index_of(self, node_id):
        try:
            return self._index[node_id]
        except KeyError:
            raise UsageError(f"node {node_id!r} not in graph") from None

    @property
    def labeled_mask(self):
        return self.labels != UNLABELED

    def unlabeled_ids(self):
        return [self.ids[i] for i in np.flatnonzero(self.labels == UNLABELED)]

    def distribution(self, node_id):
        return self.distributions[self.index_of(node_id)].copy()

    def instance(self, node_id):
        i = self.index_of(node_id)
        lab = int(self.labels[i])
        inst = Instance(node_id, self.features[i].copy(), None if lab == UNLABELED else lab)
        inst.label_distribution = self.distributions[i].copy()
        return inst

    def class_prior(self):
        lab = self.labels[self.labels != UNLABELED]
        if lab.size == 0:
            return np.full(self.n_classes, 1.0 / self.n_classes)
        counts = np.bincount(lab, minlength=self.n_classes).astype(float)
        return counts / counts.sum()

    def edge_set(self):
        coo = sparse.triu(self.weights, k=1).tocoo()
        return {(self.ids[i], self.ids[j]) if self.ids[i] < self.ids[j]
                else (self.ids[j], self.ids[i]) for i, j in zip(coo.row, coo.col)}

    def _append_nodes(self, ids, X, labels, synthetic):
        start = len(self.ids)
        for offset, node_id in enumerate(ids):
            if node_id in self._index:
                raise UsageError(f"duplicate instance id {node_id!r}")
            self._index[node_id] = start + offset
            self.ids.append(node_id)
        self.features = np.vstack([self.features, X])
        self.labels = np.concatenate([self.labels, labels])
        self.synthetic = np.concatenate([self.synthetic, synthetic])
        dist = np.tile(self.class_prior(), (len(ids), 1))
        lab = labels != UNLABELED
        dist[lab] = 0.0
        dist[lab, labels[lab]] = 1.0
        self.distributions = np.vstack([self.distributions, dist])

    def _rebuild_knn_weights(self):
        n = len(self.ids)
        rows = np.repeat(np.arange(n), self.neighbors.shape[1])
        cols = self.neighbors.reshape(-1)
        d = self.neighbor_dist.reshape(-1)
        ok = cols >= 0
        w = affinity(d[ok], self.sigma)
        a = sparse.csr_matrix((w, (rows[ok], cols[ok])), shape=(n, n))
        self.weights = a.maximum(a.T).tocsr()


def _graph_from_instances(instances, kernel):
    if not instances:
        raise UsageError("no instances given")
    X = np.vstack([np.asarray(inst.features, dtype=float).reshape(1, -1)
                   for inst in instances])
    ids = [inst.id for inst in instances]
    if len(set(ids)) != len(ids):
        raise UsageError("duplicate instance ids")
    labels = np.array([UNLABELED if inst.true_label is None else int(inst.true_label)
                       for inst in instances], dtype=int)
    synthetic = np.array([bool(getattr(inst, "synthetic", False)) for inst in instances])
    g = ProximityGraph(X.shape[1], kernel)
    g._append_nodes(ids, X, labels, synthetic)
    return g


def _knn_rows(X, ids_rank, rows, k, exclude_self=True):
    """k nearest neighbours of ``X[rows]`` among all of ``X``.

    Ties on distance go to the node whose id ranks lower.
    """
    d = cdist(X[rows], X)
    if exclude_self:
        d[np.arange(len(rows)), rows] = np.inf
    nb = np.empty((len(rows), k), dtype=int)
    nd = np.empty((len(rows), k))
    kth = np.partition(d, k - 1, axis=1)[:, k - 1]
    for r in range(len(rows)):
        cand = np.flatnonzero(d[r] <= kth[r])
        order = np.lexsort((ids_rank[cand], d[r, cand]))[:k]
        nb[r] = cand[order]
        nd[r] = d[r, cand[order]]
    return nb, nd


def _id_ranks(ids):
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    rank = np.empty(len(ids), dtype=int)
    rank[order] = np.arange(len(ids))
    return rank


def build_knn_graph(instances, k=7, sigma=None):
    """Union-of-neighbourhoods graph: ``i ~ j`` iff ``i in knn(j)`` or ``j in knn(i)``.

    Edge weights are ``exp(-d^2 / (2 sigma^2))``; by default ``sigma`` is the
    mean distance from each node to its k-th neighbour.
    """
    n = len(instances)
    if not 1 <= k < n:
        raise UsageError(f"need 1 <= k < n, got k={k}, n={n}")
    g = _graph_from_instances(instances, KernelConfig("knn", k, sigma))
    rank = _id_ranks(g.ids)
    nbs, nds = [], []
    for start in range(0, n, _CHUNK):
        rows = np.arange(start, min(n, start + _CHUNK))
        nb, nd = _knn_rows(g.features, rank, rows, k)
        nbs.append(nb)
        nds.append(nd)
    g.neighbors = np.vstack(nbs)
    g.neighbor_dist = np.vstack(nds)
    if sigma is None:
        sigma = float(g.neighbor_dist[:, -1].mean())
        if not sigma > 0:
            sigma = 1.0
    g.sigma = g.kernel.sigma = float(sigma)
    g._rebuild_knn_weights()
    return g


def build_rbf_graph(instances, sigma, k=7):
    """Dense graph with ``e_ij = exp(-|x_i - x_j|^2 / (2 sigma^2))``.

    ``k`` is only used when predicting out-of-graph points.
    """
    if sigma is None or sigma <= 0:
        raise ConfigurationError(f"sigma must be > 0, got {sigma}")
    g = _graph_from_instances(instances, KernelConfig("rbf", k, sigma))
    g.sigma = float(sigma)
    g.neighbors = g.neighbor_dist = None
    g.weights = _dense_rbf(g.features, g.sigma)
    return g


def _dense_rbf(X, sigma):
    w = affinity(cdist(X, X), sigma)
    np.fill_diagonal(w, 0.0)
    return sparse.csr_matrix(w)


def build_graph(instances, kernel):
    if kernel.kind == "rbf":
        return build_rbf_graph(instances, kernel.sigma, kernel.k)
    return build_knn_graph(instances, kernel.k, kernel.sigma)


def propagate_labels(graph, config=None, warm_start=True):
    """Iterative label propagation with clamped labeled nodes (in place).

    Each sweep replaces every unlabeled node's distribution by the
    weight-averaged distribution of its neighbours, reading only the previous
    sweep's values. Stops when the largest change drops below
    ``config.tolerance`` or after ``config.max_iterations`` sweeps. Unlabeled
    nodes without any incident weight get the labeled class prior and are
    recorded in ``graph.isolated``.

    Returns the graph.
    """
    config = config or PropagationConfig()
    lab = graph.labeled_mask
    if not lab.any():
        raise UsageError("cannot propagate: no labeled node")
    prior = graph.class_prior()
    F = graph.distributions
    F[lab] = 0.0
    F[lab, graph.labels[lab]] = 1.0
    unl = np.flatnonzero(~lab)
    graph.last_iterations = 0
    graph.propagated = True
    graph.isolated = set()
    if unl.size == 0:
        return graph
    deg = np.asarray(graph.weights.sum(axis=1)).reshape(-1)
    live = unl[deg[unl] > 0]
    dead = unl[deg[unl] <= 0]
    F[dead] = prior
    graph.isolated = {graph.ids[i] for i in dead}
    if not warm_start:
        F[live] = prior
    else:
        bad = ~np.isfinite(F[live]).all(axis=1) | (np.abs(F[live].sum(axis=1) - 1) > 1e-6)
        F[live[bad]] = prior
    if live.size == 0:
        return graph
    P = sparse.diags(1.0 / deg[live]) @ graph.weights[live]
    P = P.tocsr()
    changes = []
    for it in range(1, config.max_iterations + 1):
        new = P @ F
        change = float(np.max(np.abs(new - F[live])))
        F[live] = new
        graph.last_iterations = it
        changes.append(change)
        if change == 0.0:
            break
        if change >= config.tolerance or len(changes) < 4:
            continue
        # a linear contraction leaves about step * rho / (1 - rho) to go;
        # half the tolerance absorbs error in the rate estimate.
        # Steps are paired because oscillating modes move every other sweep.
        step = max(changes[-2:])
        rho = math.sqrt(step / max(changes[-4:-2]))
        if rho < 1.0 and step * rho / (1.0 - rho) < 0.5 * config.tolerance:
            break
    F[live] /= F[live].sum(axis=1, keepdims=True)
    return graph


def _neighbor_weights(graph, d):
    """Affinity weights for query-to-node distances ``d``, shifted by the
    smallest distance (a uniform rescale) so that they never all underflow."""
    d2 = np.square(d)
    return np.exp(-(d2 - d2.min()) / (2.0 * graph.sigma * graph.sigma))


def predict_many(graph, X):
    """Distributions for out-of-graph feature rows.

    Each row's distribution is the affinity-weighted average over its k
    nearest graph nodes; exact duplicates of graph nodes take the mean of
    those nodes' distributions.
    """
    if len(graph) == 0:
        raise UsageError("cannot predict from an empty graph")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != graph.features.shape[1]:
        raise UsageError(f"expected {graph.features.shape[1]} features, got {X.shape[1]}")
    n = len(graph)
    k = min(graph.kernel.k, n)
    out = np.empty((X.shape[0], graph.n_classes))
    sigma = graph.sigma if graph.sigma else 1.0
    for start in range(0, X.shape[0], _CHUNK):
        d = cdist(X[start:start + _CHUNK], graph.features)
        if k < n:
            idx = np.argpartition(d, k - 1, axis=1)[:, :k]
        else:
            idx = np.tile(np.arange(n), (d.shape[0], 1))
        dk = np.take_along_axis(d, idx, axis=1)
        d2 = np.square(dk)
        w = np.exp(-(d2 - d2.min(axis=1, keepdims=True)) / (2.0 * sigma * sigma))
        exact = dk == 0
        has_exact = exact.any(axis=1)
        w[has_exact] = exact[has_exact].astype(float)
        P = np.einsum("rk,rkc->rc", w, graph.distributions[idx])
        out[start:start + d.shape[0]] = P / w.sum(axis=1, keepdims=True)
    return out


def predict(graph, x):
    """Label and distribution for a node id, an ``Instance`` or a feature row.

    Ties between classes resolve to the lower label (non-eating).
    """
    if len(graph) == 0:
        raise UsageError("cannot predict from an empty graph")
    node_id = getattr(x, "id", None)
    if node_id is not None and node_id in graph:
        p = graph.distribution(node_id)
    else:
        feats = getattr(x, "features", x)
        p = predict_many(graph, np.asarray(feats, dtype=float).reshape(1, -1))[0]
    return int(np.argmax(p)), p


def add_labeled_node(graph, x, y, synthetic=False):
    """Insert ``x`` with clamped label ``y`` (or clamp it if already present).

    For kNN graphs only the new node's neighbour list and the lists it
    enters are touched; the result equals a full rebuild with the same
    ``sigma``. Returns the graph.
    """
    y = int(y)
    if not 0 <= y < graph.n_classes:
        raise UsageError(f"label {y} outside label space")
    if x.id in graph:
        i = graph.index_of(x.id)
        current = int(graph.labels[i])
        if current != UNLABELED and current != y:
            raise UsageError(f"node {x.id!r} already clamped to {current}, not {y}")
        graph.labels[i] = y
        graph.distributions[i] = one_hot(y, graph.n_classes)
        return graph
    feats = np.asarray(x.features, dtype=float).reshape(1, -1)
    if feats.shape[1] != graph.features.shape[1]:
        raise UsageError(f"expected {graph.features.shape[1]} features, got {feats.shape[1]}")
    n = len(graph)
    graph._append_nodes([x.id], feats, np.array([y]), np.array([synthetic]))
    if graph.kernel.kind == "rbf":
        _insert_rbf(graph, n)
    else:
        _insert_knn(graph, n)
    return graph


def _insert_rbf(graph, new):
    d = cdist(graph.features[new:new + 1], graph.features[:new]).reshape(-1)
    w = affinity(d, graph.sigma)
    n = new + 1
    W = graph.weights.tolil() if new else sparse.lil_matrix((0, 0))
    W.resize((n, n))
    W[new, :new] = w
    W[:new, new] = w.reshape(-1, 1)
    graph.weights = W.tocsr()


def _precedes(d_a, r_a, d_b, r_b):
    return d_a < d_b or (d_a == d_b and r_a < r_b)


def _insert_knn(graph, new):
    k = graph.kernel.k
    n = new + 1
    rank = _id_ranks(graph.ids)
    d = cdist(graph.features[new:new + 1], graph.features[:new]).reshape(-1)
    row_nb = np.full(k, -1, dtype=int)
    row_nd = np.full(k, np.inf)
    if new:
        m = min(k, new)
        order = np.lexsort((rank[:new], d))[:m]
        row_nb[:m] = order
        row_nd[:m] = d[order]
    nb = np.vstack([graph.neighbors, row_nb])
    nd = np.vstack([graph.neighbor_dist, row_nd])
    for j in range(new):
        last = nb[j, -1]
        last_rank = rank[last] if last >= 0 else np.iinfo(int).max
        if not _precedes(d[j], rank[new], nd[j, -1], last_rank):
            continue
        # insert the new node into j's sorted neighbour list
        pos = k - 1
        while pos > 0:
            p = nb[j, pos - 1]
            if p >= 0 and not _precedes(d[j], rank[new], nd[j, pos - 1], rank[p]):
                break
            pos -= 1
        nb[j, pos + 1:] = nb[j, pos:-1]
        nd[j, pos + 1:] = nd[j, pos:-1]
        nb[j, pos] = new
        nd[j, pos] = d[j]
    graph.neighbors, graph.neighbor_dist = nb, nd
    if graph.sigma is None and n >= 2:
        kth = np.where(np.isfinite(nd), nd, np.nan)
        last_valid = np.array([row[np.isfinite(row)][-1] for row in kth])
        s = float(np.mean(last_valid))
        graph.sigma = graph.kernel.sigma = s if s > 0 else 1.0
    if graph.sigma is None:
        graph.weights = sparse.csr_matrix((n, n))
    else:
        graph._rebuild_knn_weights()


def empty_graph(n_features, kernel=None):
    """A graph with no nodes, grown with ``add_labeled_node``."""
    return ProximityGraph(n_features, kernel)


def dump_graph(graph, path=None):
    """Serialize to versioned JSON text; returns the text."""
    coo = sparse.triu(graph.weights, k=1).tocoo()
    doc = {
        "format": GRAPH_FORMAT,
        "version": GRAPH_FORMAT_VERSION,
        "kernel": {"kind": graph.kernel.kind, "k": graph.kernel.k, "sigma": graph.sigma},
        "n_classes": graph.n_classes,
        "nodes": [
            {"id": graph.ids[i], "label": int(graph.labels[i]),
             "synthetic": bool(graph.synthetic[i]),
             "distribution": graph.distributions[i].tolist(),
             "features": graph.features[i].tolist()}
            for i in range(len(graph))
        ],
        "edges": [[graph.ids[i], graph.ids[j], float(w)]
                  for i, j, w in sorted(zip(coo.row.tolist(), coo.col.tolist(),
                                            coo.data.tolist()))],
    }
    text = json.dumps(doc, indent=1)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def load_graph(source):
    """Inverse of ``dump_graph``; ``source`` is a path or the JSON text."""
    text = source
    if not str(source).lstrip().startswith("{"):
        with open(source) as fh:
            text = fh.read()
    doc = json.loads(text)
    if doc.get("format") != GRAPH_FORMAT or doc.get("version") != GRAPH_FORMAT_VERSION:
        raise UsageError("not a pals-graph v1 document")
    kern = doc["kernel"]
    nodes = doc["nodes"]
    n_features = len(nodes[0]["features"]) if nodes else 0
    g = ProximityGraph(n_features, KernelConfig(kern["kind"], kern["k"], kern["sigma"]),
                       doc["n_classes"])
    g.sigma = kern["sigma"]
    if nodes:
        g._append_nodes([nd["id"] for nd in nodes],
                        np.array([nd["features"] for nd in nodes], dtype=float),
                        np.array([nd["label"] for nd in nodes], dtype=int),
                        np.array([nd["synthetic"] for nd in nodes], dtype=bool))
        g.distributions = np.array([nd["distribution"] for nd in nodes], dtype=float)
    n = len(nodes)
    rows, cols, vals = [], [], []
    for a, b, w in doc["edges"]:
        i, j = g.index_of(a), g.index_of(b)
        rows += [i, j]
        cols += [j, i]
        vals += [w, w]
    g.weights = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    if g.kernel.kind == "knn" and n:
        # neighbour tables are derived state; recompute them
        rank = _id_ranks(g.ids)
        k = g.kernel.k
        g.neighbors = np.full((n, k), -1, dtype=int)
        g.neighbor_dist = np.full((n, k), np.inf)
        if n > 1:
            m = min(k, n - 1)
            nb, nd = _knn_rows(g.features, rank, np.arange(n), m)
            g.neighbors[:, :m] = nb
            g.neighbor_dist[:, :m] = nd
    return g

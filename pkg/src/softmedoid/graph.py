"""Sparse graph container, file ingestion, normalization and generators.

Graphs are undirected and stored as symmetric CSR adjacency matrices
without self-loops; self-loops enter only through the normalization step.
All operations return new values, so graphs can be shared freely across
threads.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class ParseError(ValueError):
    """Malformed input file; the message carries the offending location."""


@dataclass
class SparseGraph:
    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        adj = sp.csr_matrix(self.adjacency, dtype=np.float64)
        n = adj.shape[0]
        if adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        if adj.diagonal().any():
            raise ValueError("adjacency must not contain self-loops")
        if (adj != adj.T).nnz != 0:
            raise ValueError("adjacency must be symmetric")
        if adj.nnz and (adj.data < 0).any():
            raise ValueError("edge weights must be non-negative")
        if adj.nnz and not np.all(np.isfinite(adj.data)):
            raise ValueError("edge weights must be finite")
        self.adjacency = adj
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise ValueError(f"features must be 2-D with {n} rows, got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features must be finite")
        self.features = feats
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (n,):
                raise ValueError(f"labels must have shape ({n},)")
            if labels.min(initial=0) < 0:
                raise ValueError("labels must be non-negative class ids")
            self.labels = labels

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        """Number of undirected edges."""
        return self.adjacency.nnz // 2

    @property
    def class_count(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def degrees(self) -> np.ndarray:
        return np.asarray((self.adjacency != 0).sum(axis=1)).ravel()


@dataclass
class SplitAssignment:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)
        combined = np.concatenate([self.train, self.val, self.test])
        if len(np.unique(combined)) != len(combined):
            raise ValueError("split sets must be pairwise disjoint")


def adjacency_from_edges(n: int, edges, weights=None) -> sp.csr_matrix:
    """Symmetric CSR adjacency from an iterable of (u, v) pairs."""
    edges = list(edges)
    if weights is None:
        weights = [1.0] * len(edges)
    rows, cols, vals = [], [], []
    for (u, v), w in zip(edges, weights):
        rows += [u, v]
        cols += [v, u]
        vals += [w, w]
    adj = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    adj.sum_duplicates()
    return adj


def load_graph(edge_file, feature_file, label_file=None) -> SparseGraph:
    """Read a graph from the three text files.

    Edge file: one ``u v [w]`` per line, 0-based ids, weight defaults to 1;
    the graph is symmetrized and exact duplicate edges are collapsed.
    Feature file: CSV, row i holds node i's features, no header.
    Label file: CSV rows ``node,label`` (an optional ``node,label`` header
    line is skipped); every node needs a label.
    """
    features = _read_feature_csv(feature_file)
    n = features.shape[0]
    edge_weights: dict[tuple[int, int], float] = {}
    with open(edge_file) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise ParseError(f"{edge_file}:{lineno}: expected 'u v [w]', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError as exc:
                raise ParseError(f"{edge_file}:{lineno}: {exc}") from None
            if not (0 <= u < n and 0 <= v < n):
                raise ParseError(f"{edge_file}:{lineno}: node id out of range [0, {n})")
            if w < 0 or not math.isfinite(w):
                raise ParseError(f"{edge_file}:{lineno}: invalid weight {w}")
            if u == v:
                warnings.warn(f"{edge_file}:{lineno}: ignoring self-loop on node {u}")
                continue
            key = (min(u, v), max(u, v))
            if key in edge_weights and edge_weights[key] != w:
                raise ParseError(
                    f"{edge_file}:{lineno}: conflicting weight for edge {key}: "
                    f"{edge_weights[key]} vs {w}")
            edge_weights[key] = w
    adj = adjacency_from_edges(n, edge_weights.keys(), list(edge_weights.values()))
    labels = _read_label_csv(label_file, n) if label_file is not None else None
    return SparseGraph(adjacency=adj, features=features, labels=labels)


def _read_feature_csv(path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                row = [float(tok) for tok in line.split(",")]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            rows.append(row)
    if not rows:
        raise ParseError(f"{path}: no feature rows")
    return np.asarray(rows, dtype=np.float64)


def _read_label_csv(path, n: int) -> np.ndarray:
    labels = np.full(n, -1, dtype=np.int64)
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if lineno == 1 and line.replace(" ", "") == "node,label":
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 'node,label'")
            try:
                node, label = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if not 0 <= node < n:
                raise ParseError(f"{path}:{lineno}: node id out of range [0, {n})")
            labels[node] = label
    if (labels < 0).any():
        missing = int(np.argmax(labels < 0))
        raise ParseError(f"{path}: node {missing} has no label")
    return labels


def normalize_features_l1(features: np.ndarray) -> np.ndarray:
    """Row-normalize to unit L1 mass; all-zero rows stay zero."""
    features = np.asarray(features, dtype=np.float64)
    sums = np.abs(features).sum(axis=1, keepdims=True)
    sums[sums == 0] = 1.0
    return features / sums


def largest_connected_component(g: SparseGraph):
    """Induced subgraph on the largest component plus the old->new index map.

    Size ties go to the component containing the smallest node id. Entries
    of the map are -1 for dropped nodes.
    """
    n = g.n_nodes
    _, comp = connected_components(g.adjacency, directed=False)
    sizes = np.bincount(comp)
    best = int(np.argmax(sizes))  # component labels follow first occurrence
    keep = np.nonzero(comp == best)[0]
    node_map = np.full(n, -1, dtype=np.int64)
    node_map[keep] = np.arange(len(keep))
    sub = SparseGraph(
        adjacency=g.adjacency[keep][:, keep],
        features=g.features[keep],
        labels=None if g.labels is None else g.labels[keep],
    )
    return sub, node_map


def gcn_normalize(g) -> sp.csr_matrix:
    """Symmetrically normalized adjacency with self-loops added.

    Accepts a SparseGraph or a raw symmetric adjacency matrix. An isolated
    node ends up with a single self-weight of 1.
    """
    adj = g.adjacency if isinstance(g, SparseGraph) else sp.csr_matrix(g, dtype=np.float64)
    n = adj.shape[0]
    tilde = (adj + sp.identity(n, format="csr")).tocsr()
    deg = np.asarray(tilde.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    scale = sp.diags(inv_sqrt)
    return (scale @ tilde @ scale).tocsr()


def ppr_dense(A, alpha: float, tol: float = 1e-6) -> np.ndarray:
    """Dense personalized-PageRank diffusion of a normalized adjacency.

    Solves S = alpha*I + (1-alpha)*A*S by fixed-point iteration until the
    max-norm residual drops below ``tol``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    A = sp.csr_matrix(A, dtype=np.float64)
    n = A.shape[0]
    eye = np.eye(n)
    S = alpha * eye
    max_iter = 10 * math.ceil(math.log(1e-6) / math.log(1.0 - alpha))
    for _ in range(max_iter):
        S_next = alpha * eye + (1.0 - alpha) * (A @ S)
        residual = np.abs(S_next - S).max()
        S = S_next
        if residual <= tol:
            return S
    raise RuntimeError(f"diffusion did not converge within {max_iter} iterations")


def gdc_diffusion(A, alpha: float, k: int) -> sp.csr_matrix:
    """Diffuse, keep the k largest entries per row, then renormalize.

    Row ties during truncation go to the smaller column index. The final
    symmetric degree normalization uses the sparsified row sums and does
    not add self-loops (diffusion already places mass on the diagonal).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    S = ppr_dense(A, alpha)
    n = S.shape[0]
    k = min(k, n)
    order = np.argsort(-S, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    cols = order.ravel()
    vals = S[rows, cols]
    sparse = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    deg = np.asarray(sparse.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    scale = sp.diags(inv_sqrt)
    return (scale @ sparse @ scale).tocsr()


def build_message_matrix(adj, source: str, alpha: float = 0.15, k: int = 64) -> sp.csr_matrix:
    """Message-passing matrix for a raw adjacency: plain or diffused normalization."""
    A = gcn_normalize(adj)
    if source == "gcn":
        return A
    if source == "gdc":
        return gdc_diffusion(A, alpha, k)
    raise ValueError(f"unknown message matrix source {source!r}")


def split_nodes(g: SparseGraph, per_class: int = 20, seed: int = 0) -> SplitAssignment:
    """Stratified train/val split with ``per_class`` nodes each; rest is test.

    Classes with fewer than 2*per_class nodes contribute floor(count/2)
    nodes to each of train and val, with a warning.
    """
    if g.labels is None:
        raise ValueError("graph has no labels")
    rng = np.random.default_rng(seed)
    train, val = [], []
    for c in range(g.class_count):
        idx = np.nonzero(g.labels == c)[0]
        take = per_class
        if len(idx) < 2 * per_class:
            take = len(idx) // 2
            warnings.warn(
                f"class {c} has only {len(idx)} nodes; sampling {take} per split")
        perm = rng.permutation(idx)
        train.append(perm[:take])
        val.append(perm[take:2 * take])
    train = np.sort(np.concatenate(train))
    val = np.sort(np.concatenate(val))
    taken = np.union1d(train, val)
    test = np.setdiff1d(np.arange(g.n_nodes), taken)
    return SplitAssignment(train=train, val=val, test=test)


def synth_sbm(n: int, classes: int, p_in: float, p_out: float,
              feature_dim: int, feature_shift: float, seed: int = 0) -> SparseGraph:
    """Stochastic block model with class-conditional Gaussian features.

    Nodes are assigned to classes in contiguous, near-equal blocks. Each
    class mean sits at ``feature_shift`` along its own axis direction.
    """
    if p_in < p_out:
        raise ValueError("p_in must be >= p_out")
    if not (0 <= p_out <= p_in <= 1):
        raise ValueError("edge probabilities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    counts = np.full(classes, n // classes)
    counts[: n % classes] += 1
    labels = np.repeat(np.arange(classes), counts)
    means = np.zeros((classes, feature_dim))
    for c in range(classes):
        means[c, c % feature_dim] = feature_shift
    features = rng.standard_normal((n, feature_dim)) + means[labels]
    prob = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    rows, cols = np.nonzero(upper)
    adj = adjacency_from_edges(n, zip(rows.tolist(), cols.tolist()))
    return SparseGraph(adjacency=adj, features=features, labels=labels)

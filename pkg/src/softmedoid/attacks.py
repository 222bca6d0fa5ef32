"""Evasion transfer attacks on the graph structure.

All attacks flip edges of the clean graph within a budget derived from
the clean edge count, then every victim model is evaluated on the
perturbed adjacency (renormalized, re-diffused) with its clean-graph
parameters. The gradient-based attacks run on a dense weighted-sum
surrogate so that every victim faces exactly the same edge flips.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import gnn
from .graph import SparseGraph, build_message_matrix


@dataclass
class AttackBudget:
    """Flip budget as a fraction of the clean undirected edge count."""

    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    def flips(self, graph: SparseGraph) -> int:
        return int(math.floor(self.epsilon * graph.n_edges))


@dataclass
class AttackResult:
    """Symmetric edge flips; ops are ('add'|'del', u, v) with u < v."""

    flips: list[tuple[str, int, int]]
    accuracies: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        canon = []
        for op, u, v in self.flips:
            if op not in ("add", "del"):
                raise ValueError(f"unknown op {op!r}")
            if u == v:
                raise ValueError("self-loops cannot be flipped")
            canon.append((op, min(u, v), max(u, v)))
        if len({(u, v) for _, u, v in canon}) != len(canon):
            raise ValueError("duplicate flips")
        self.flips = canon


def apply_flips(adj: sp.csr_matrix, flips) -> sp.csr_matrix:
    """Return the adjacency with the listed edge flips applied symmetrically."""
    out = adj.tolil(copy=True)
    for op, u, v in flips:
        val = 1.0 if op == "add" else 0.0
        out[u, v] = val
        out[v, u] = val
    return out.tocsr()


def _upper_pairs(n: int):
    iu, ju = np.triu_indices(n, k=1)
    return iu, ju


def dice_attack(graph: SparseGraph, labels, budget: AttackBudget,
                seed: int = 0) -> AttackResult:
    """Delete random same-class edges, add random distinct-class non-edges.

    The budget is split 50/50 with deletions rounded down. Exhausted
    candidate pools are used fully, with a warning.
    """
    labels = np.asarray(labels)
    b = budget.flips(graph)
    n_del = b // 2
    n_add = b - n_del
    rng = np.random.default_rng(seed)
    dense = graph.adjacency.toarray() > 0
    iu, ju = _upper_pairs(graph.n_nodes)
    same = labels[iu] == labels[ju]
    present = dense[iu, ju]
    del_pool = np.nonzero(present & same)[0]
    add_pool = np.nonzero(~present & ~same)[0]
    if len(del_pool) < n_del:
        warnings.warn(f"only {len(del_pool)} same-class edges available "
                      f"for {n_del} deletions")
        n_del = len(del_pool)
    if len(add_pool) < n_add:
        warnings.warn(f"only {len(add_pool)} distinct-class non-edges available "
                      f"for {n_add} additions")
        n_add = len(add_pool)
    chosen_del = rng.choice(del_pool, size=n_del, replace=False)
    chosen_add = rng.choice(add_pool, size=n_add, replace=False)
    flips = [("del", int(iu[i]), int(ju[i])) for i in chosen_del]
    flips += [("add", int(iu[i]), int(ju[i])) for i in chosen_add]
    return AttackResult(flips=flips)


# ---------------------------------------------------------------------------
# gradient machinery for the dense surrogate
# ---------------------------------------------------------------------------

def _require_weighted_sum(model: gnn.GnnModel):
    if any(c.kind != "weighted_sum" for c in model.aggregators):
        raise ValueError("the surrogate must aggregate with weighted_sum")


def _dense_forward(adj: np.ndarray, X, W1, W2):
    n = adj.shape[0]
    tilde = adj + np.eye(n)
    deg = tilde.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    A = inv_sqrt[:, None] * tilde * inv_sqrt[None, :]
    P = A @ (X @ W1)
    H = np.maximum(P, 0.0)
    logits = A @ (H @ W2)
    return logits, (A, tilde, deg, P, H)


def surrogate_loss(model: gnn.GnnModel, adj: np.ndarray, X, labels, idx) -> float:
    """Cross-entropy of the dense surrogate on ``idx`` for a (possibly
    relaxed) adjacency."""
    _require_weighted_sum(model)
    logits, _ = _dense_forward(np.asarray(adj, dtype=np.float64), X, model.W1, model.W2)
    loss, _ = gnn.softmax_cross_entropy(logits, labels, idx)
    return loss


def adjacency_loss_grad(model: gnn.GnnModel, adj: np.ndarray, X, labels, idx):
    """Loss and its gradient w.r.t. symmetric changes of the raw adjacency.

    Entry (u, v) of the returned matrix is the derivative of the loss when
    both adj[u, v] and adj[v, u] move together, i.e. the linearized effect
    of flipping the undirected pair.
    """
    _require_weighted_sum(model)
    adj = np.asarray(adj, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    logits, (A, tilde, deg, P, H) = _dense_forward(adj, X, model.W1, model.W2)
    loss, dlogits = gnn.softmax_cross_entropy(logits, labels, idx)
    # gradient w.r.t. the normalized matrix from both layers
    B = dlogits @ (H @ model.W2).T
    d_h = A.T @ dlogits @ model.W2.T
    d_p = d_h * (P > 0)
    B += d_p @ (X @ model.W1).T
    # chain through the symmetric degree normalization
    inv_sqrt = 1.0 / np.sqrt(deg)
    direct = B * np.outer(inv_sqrt, inv_sqrt)
    row_mix = (B * A).sum(axis=1)
    col_mix = (B * A).sum(axis=0)
    degree_term = -0.5 * (row_mix + col_mix) / deg
    raw = direct + degree_term[:, None]
    grad = raw + raw.T
    np.fill_diagonal(grad, 0.0)
    return loss, grad


def greedy_flip_attack(surrogate_model: gnn.GnnModel, graph: SparseGraph,
                       budget: AttackBudget, idx=None) -> AttackResult:
    """One flip per step: the feasible entry whose gradient most increases
    the surrogate's test loss; ties go to the smallest (u, v)."""
    _require_weighted_sum(surrogate_model)
    b = budget.flips(graph)
    labels = graph.labels
    idx = np.arange(graph.n_nodes) if idx is None else np.asarray(idx)
    adj = (graph.adjacency.toarray() > 0).astype(np.float64)
    n = adj.shape[0]
    flips: list[tuple[str, int, int]] = []
    for _ in range(b):
        _, grad = adjacency_loss_grad(surrogate_model, adj, graph.features, labels, idx)
        # adding an absent edge moves the entry up: score +grad;
        # deleting a present edge moves it down: score -grad
        score = np.where(adj > 0, -grad, grad)
        score[np.tril_indices(n)] = -np.inf
        for _, u, v in flips:
            score[u, v] = -np.inf
        flat = int(np.argmax(score))  # row-major argmax = smallest (u, v) tie rule
        u, v = divmod(flat, n)
        if score[u, v] <= 0:
            warnings.warn("no loss-increasing flip left; stopping early")
            break
        op = "del" if adj[u, v] > 0 else "add"
        val = 0.0 if op == "del" else 1.0
        adj[u, v] = adj[v, u] = val
        flips.append((op, u, v))
    return AttackResult(flips=flips)


def project_budget(s: np.ndarray, budget: float, tol: float = 1e-10) -> np.ndarray:
    """Clip to [0, 1]; if the total still exceeds the budget, shift down by
    the bisection-found constant that restores the budget exactly."""
    s = np.clip(s, 0.0, 1.0)
    if s.sum() <= budget:
        return s
    lo, hi = 0.0, s.max()
    for _ in range(100):
        mu = 0.5 * (lo + hi)
        total = np.clip(s - mu, 0.0, 1.0).sum()
        if total > budget:
            lo = mu
        else:
            hi = mu
        if hi - lo < tol:
            break
    return np.clip(s - 0.5 * (lo + hi), 0.0, 1.0)


def pgd_l0_attack(surrogate_model: gnn.GnnModel, graph: SparseGraph,
                  budget: AttackBudget, steps: int = 50, step_size: float = 0.1,
                  seed: int = 0, idx=None, final_draws: int = 20) -> AttackResult:
    """Relaxed flip indicators optimized by projected gradient ascent.

    The continuous adjacency interpolates each pair between its clean and
    flipped state. After the ascent, flip sets are sampled from the relaxed
    indicators and the feasible set with the largest surrogate loss wins;
    if every draw is infeasible the largest indicators are taken directly.
    """
    _require_weighted_sum(surrogate_model)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    b = budget.flips(graph)
    labels = graph.labels
    idx = np.arange(graph.n_nodes) if idx is None else np.asarray(idx)
    adj0 = (graph.adjacency.toarray() > 0).astype(np.float64)
    n = adj0.shape[0]
    iu, ju = _upper_pairs(n)
    flip_dir = 1.0 - 2.0 * adj0[iu, ju]
    s = np.zeros(len(iu))
    if b == 0:
        return AttackResult(flips=[])
    for _ in range(steps):
        adj_c = adj0.copy()
        adj_c[iu, ju] += s * flip_dir
        adj_c[ju, iu] = adj_c[iu, ju]
        _, grad = adjacency_loss_grad(surrogate_model, adj_c, graph.features, labels, idx)
        s = project_budget(s + step_size * grad[iu, ju] * flip_dir, b)
    rng = np.random.default_rng(seed)
    best_flips, best_loss = None, -np.inf
    for _ in range(final_draws):
        mask = rng.random(len(s)) < s
        if mask.sum() > b or not mask.any():
            continue
        adj_d = adj0.copy()
        adj_d[iu[mask], ju[mask]] = 1.0 - adj_d[iu[mask], ju[mask]]
        adj_d[ju[mask], iu[mask]] = adj_d[iu[mask], ju[mask]]
        loss = surrogate_loss(surrogate_model, adj_d, graph.features, labels, idx)
        if loss > best_loss:
            best_loss, best_flips = loss, mask
    if best_flips is None:
        order = np.lexsort((ju, iu, -s))[:b]
        best_flips = np.zeros(len(s), dtype=bool)
        best_flips[order[s[order] > 0]] = True
    flips = []
    for i in np.nonzero(best_flips)[0]:
        op = "del" if adj0[iu[i], ju[i]] > 0 else "add"
        flips.append((op, int(iu[i]), int(ju[i])))
    return AttackResult(flips=flips)


def evasion_eval(models: dict[str, gnn.GnnModel], graph: SparseGraph,
                 attack: AttackResult, split, normalize_features: bool = False) -> dict[str, float]:
    """Test accuracy of clean-trained models on the perturbed adjacency."""
    adj_p = apply_flips(graph.adjacency, attack.flips)
    feats = graph.features
    if normalize_features:
        from .graph import normalize_features_l1
        feats = normalize_features_l1(feats)
    result = {}
    for name, model in models.items():
        A = build_message_matrix(adj_p, model.message_source, model.gdc_alpha, model.gdc_k)
        result[name] = gnn.predict_accuracy(model, A, feats, graph.labels, split.test)
    attack.accuracies.update(result)
    return result


def write_flips_csv(path, attack: AttackResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["op", "u", "v"])
        for op, u, v in attack.flips:
            writer.writerow([op, u, v])


def read_flips_csv(path) -> AttackResult:
    flips = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["op", "u", "v"]:
            raise ValueError(f"{path}: expected header op,u,v")
        for row in reader:
            if not row:
                continue
            flips.append((row[0], int(row[1]), int(row[2])))
    return AttackResult(flips=flips)

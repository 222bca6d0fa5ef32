"""Discrete randomized smoothing with exact worst-case certificates.

Predictions are smoothed by independently flipping graph bits (edges
and/or binary features): present bits are deleted with one probability,
absent bits added with another. Majority votes over Monte-Carlo samples
yield a confidence-bounded class probability per node, which the exact
two-distribution worst-case argument converts into per-radius
certificates for bit additions and deletions.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import lru_cache
from math import comb
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import betainc

from . import gnn
from .graph import build_message_matrix, normalize_features_l1

_TARGETS = ("edges", "features", "both")


@dataclass
class SmoothingConfig:
    p_plus: float            # probability of adding an absent bit
    p_minus: float           # probability of deleting a present bit
    target: str = "edges"
    n_samples: int = 1000
    alpha_conf: float = 0.05

    def __post_init__(self):
        if not (0 <= self.p_plus < 1 and 0 <= self.p_minus < 1):
            raise ValueError("flip probabilities must lie in [0, 1)")
        if self.target not in _TARGETS:
            raise ValueError(f"target must be one of {_TARGETS}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0 < self.alpha_conf < 1:
            raise ValueError("alpha_conf must lie in (0, 1)")


@dataclass
class VoteRecord:
    """Per-node class counts from the Monte-Carlo samples."""

    counts: np.ndarray      # (n, C) integer counts
    n_samples: int
    majority: np.ndarray    # (n,) argmax class, ties to the smaller id
    pA_lower: np.ndarray    # (n,) one-sided lower bound on the majority probability

    @classmethod
    def from_counts(cls, counts: np.ndarray, n_samples: int, alpha: float) -> "VoteRecord":
        counts = np.asarray(counts, dtype=np.int64)
        if np.any(counts.sum(axis=1) != n_samples):
            raise ValueError("class counts must sum to n_samples for every node")
        majority = np.argmax(counts, axis=1)
        top = counts[np.arange(len(counts)), majority]
        p_lower = np.array([clopper_pearson_lower(int(c), n_samples, alpha) for c in top])
        return cls(counts=counts, n_samples=n_samples, majority=majority, pA_lower=p_lower)


@dataclass
class CertificationGrid:
    """Certified-and-correct ratios indexed by (addition, deletion) radius."""

    R: np.ndarray  # (max_ra + 1, max_rd + 1)

    @property
    def max_ra(self) -> int:
        return self.R.shape[0] - 1

    @property
    def max_rd(self) -> int:
        return self.R.shape[1] - 1


def clopper_pearson_lower(count: int, n: int, alpha: float) -> float:
    """Exact one-sided lower confidence bound for a binomial proportion.

    Solves P(X >= count | p) = alpha for p by bisection on the regularized
    incomplete beta function.
    """
    if not 0 <= count <= n:
        raise ValueError("count must lie in [0, n]")
    if count == 0:
        return 0.0
    # P(X >= count | p) = I_p(count, n - count + 1), increasing in p
    a, b = count, n - count + 1
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if betainc(a, b, mid) < alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Monte-Carlo sampling
# ---------------------------------------------------------------------------

def perturb_adjacency(adj: sp.csr_matrix, p_plus: float, p_minus: float,
                      rng: np.random.Generator,
                      absent_pairs: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """One random flip of the graph: drawn on the upper triangle, mirrored.

    ``absent_pairs`` (linearized upper-triangle ids) can be precomputed once
    per clean graph to avoid the n^2 scan per sample.
    """
    n = adj.shape[0]
    upper = sp.triu(adj, k=1).tocoo()
    keep = rng.random(upper.nnz) >= p_minus
    rows = [upper.row[keep]]
    cols = [upper.col[keep]]
    vals = [upper.data[keep]]
    if p_plus > 0:
        if absent_pairs is None:
            absent_pairs = absent_pair_ids(adj)
        n_add = rng.binomial(len(absent_pairs), p_plus)
        if n_add:
            chosen = rng.choice(absent_pairs, size=n_add, replace=False)
            rows.append(chosen // n)
            cols.append(chosen % n)
            vals.append(np.ones(n_add))
    row = np.concatenate(rows)
    col = np.concatenate(cols)
    val = np.concatenate(vals)
    out = sp.csr_matrix((np.concatenate([val, val]),
                         (np.concatenate([row, col]), np.concatenate([col, row]))),
                        shape=(n, n))
    return out


def absent_pair_ids(adj: sp.csr_matrix) -> np.ndarray:
    """Linearized (u * n + v) ids of absent upper-triangle pairs."""
    n = adj.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    all_ids = iu * n + ju
    upper = sp.triu(adj, k=1).tocoo()
    present = upper.row * n + upper.col
    return np.setdiff1d(all_ids, present, assume_unique=True)


def perturb_binary_matrix(M: np.ndarray, p_plus: float, p_minus: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Independent bit flips of a dense 0/1 matrix."""
    M = np.asarray(M)
    u = rng.random(M.shape)
    flip = np.where(M > 0, u < p_minus, u < p_plus)
    return np.where(flip, 1.0 - (M > 0), M).astype(np.float64)


def sample_votes(model: gnn.GnnModel, graph, cfg: SmoothingConfig, seed: int = 0,
                 normalize_features: bool = False) -> VoteRecord:
    """Monte-Carlo votes of the base classifier under random bit flips.

    The message matrix is rebuilt from the perturbed raw adjacency for
    every sample, so the noise hits the graph bits, not the normalized
    weights. Sample i uses its own RNG stream derived from (seed, i).
    """
    n = graph.n_nodes
    counts = np.zeros((n, model.classes), dtype=np.int64)
    flip_edges = cfg.target in ("edges", "both")
    flip_feats = cfg.target in ("features", "both")
    absent = absent_pair_ids(graph.adjacency) if (flip_edges and cfg.p_plus > 0) else None
    clean_A = None
    if not flip_edges:
        clean_A = build_message_matrix(graph.adjacency, model.message_source,
                                       model.gdc_alpha, model.gdc_k)
    for i in range(cfg.n_samples):
        rng = np.random.default_rng((seed, i))
        if flip_edges:
            adj = perturb_adjacency(graph.adjacency, cfg.p_plus, cfg.p_minus, rng, absent)
            A = build_message_matrix(adj, model.message_source, model.gdc_alpha, model.gdc_k)
        else:
            A = clean_A
        feats = graph.features
        if flip_feats:
            feats = perturb_binary_matrix(feats, cfg.p_plus, cfg.p_minus, rng)
        if normalize_features:
            feats = normalize_features_l1(feats)
        logits = gnn.forward(model, A, feats)
        pred = np.argmax(logits, axis=1)
        counts[np.arange(n), pred] += 1
    return VoteRecord.from_counts(counts, cfg.n_samples, cfg.alpha_conf)


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

@lru_cache(maxsize=100000)
def _worst_case_prob(pA: float, p_plus: float, p_minus: float,
                     r_a: int, r_d: int) -> float:
    """Smallest possible smoothed probability of the majority class at x'.

    The joint flip pattern on the differing bits partitions the sample
    space into constant-likelihood-ratio regions; mass pA is allocated
    greedily to the regions with the smallest ratio.
    """
    regions = []
    for i in range(r_a + 1):
        pa_x = comb(r_a, i) * p_plus ** i * (1 - p_plus) ** (r_a - i)
        pa_xp = comb(r_a, i) * (1 - p_minus) ** i * p_minus ** (r_a - i)
        for j in range(r_d + 1):
            pd_x = comb(r_d, j) * (1 - p_minus) ** j * p_minus ** (r_d - j)
            pd_xp = comb(r_d, j) * p_plus ** j * (1 - p_plus) ** (r_d - j)
            px = pa_x * pd_x
            pxp = pa_xp * pd_xp
            if px > 0:
                regions.append((pxp / px, px, pxp))
    regions.sort(key=lambda t: t[0])
    remaining = pA
    worst = 0.0
    for ratio, px, pxp in regions:
        take = min(px, remaining)
        worst += take * ratio
        remaining -= take
        if remaining <= 0:
            break
    return worst


def certify_radius(pA_lower: float, cfg: SmoothingConfig, r_a: int, r_d: int) -> bool:
    """True when the majority class provably survives any r_a additions and
    r_d deletions."""
    if not 0 <= pA_lower <= 1:
        raise ValueError("pA_lower must lie in [0, 1]")
    return _worst_case_prob(float(pA_lower), cfg.p_plus, cfg.p_minus,
                            int(r_a), int(r_d)) > 0.5


def _bit_probs(bits: np.ndarray, z: np.ndarray, p_plus: float, p_minus: float) -> np.ndarray:
    # z: (m, d) outcomes, bits: (d,) originals; per-bit observation likelihoods
    on = np.where(z == 1, 1 - p_minus, p_minus)
    off = np.where(z == 1, p_plus, 1 - p_plus)
    return np.where(bits[None, :] == 1, on, off)


def certify_bruteforce(pA_lower: float, cfg: SmoothingConfig,
                       x_bits, x_prime_bits) -> bool:
    """Exhaustive-enumeration oracle for ``certify_radius`` (<= 20 bits)."""
    x = np.asarray(x_bits, dtype=np.int64)
    xp = np.asarray(x_prime_bits, dtype=np.int64)
    if x.shape != xp.shape or x.ndim != 1:
        raise ValueError("bit vectors must be 1-D and equally sized")
    d = len(x)
    if d > 20:
        raise ValueError("brute force limited to 20 bits")
    outcomes = ((np.arange(2 ** d)[:, None] >> np.arange(d)) & 1).astype(np.int64)
    px = np.prod(_bit_probs(x, outcomes, cfg.p_plus, cfg.p_minus), axis=1)
    pxp = np.prod(_bit_probs(xp, outcomes, cfg.p_plus, cfg.p_minus), axis=1)
    keep = px > 0
    px, pxp = px[keep], pxp[keep]
    order = np.argsort(pxp / px, kind="stable")
    remaining = float(pA_lower)
    worst = 0.0
    for idx in order:
        take = min(px[idx], remaining)
        worst += take * (pxp[idx] / px[idx])
        remaining -= take
        if remaining <= 0:
            break
    return worst > 0.5


def certification_grid(votes: VoteRecord, labels, cfg: SmoothingConfig,
                       max_ra: int, max_rd: int,
                       index_set=None) -> CertificationGrid:
    """Fraction of nodes that are both correct and certified, per radius pair."""
    labels = np.asarray(labels)
    nodes = np.arange(len(labels)) if index_set is None else np.asarray(index_set)
    correct = votes.majority[nodes] == labels[nodes]
    R = np.zeros((max_ra + 1, max_rd + 1))
    for ra in range(max_ra + 1):
        for rd in range(max_rd + 1):
            ok = [bool(c) and certify_radius(votes.pA_lower[v], cfg, ra, rd)
                  for v, c in zip(nodes, correct)]
            R[ra, rd] = float(np.mean(ok))
    return CertificationGrid(R=R)


def accumulated_certifications(grid: CertificationGrid) -> float:
    """Sum of the certification ratios over the grid, minus the accuracy term."""
    return float(grid.R.sum() - grid.R[0, 0])


def average_certifiable_radius(votes: VoteRecord, labels, cfg: SmoothingConfig,
                               axis: str, index_set=None, max_radius: int = 256) -> float:
    """Mean over correct nodes of the largest certifiable single-axis radius."""
    if axis not in ("add", "del"):
        raise ValueError("axis must be 'add' or 'del'")
    labels = np.asarray(labels)
    nodes = np.arange(len(labels)) if index_set is None else np.asarray(index_set)
    correct = [v for v in nodes if votes.majority[v] == labels[v]]
    if not correct:
        raise ValueError("no correctly predicted nodes")
    radii = []
    for v in correct:
        r = 0
        while r < max_radius:
            ra, rd = (r + 1, 0) if axis == "add" else (0, r + 1)
            if not certify_radius(votes.pA_lower[v], cfg, ra, rd):
                break
            r += 1
        radii.append(r)
    return float(np.mean(radii))


def certification_metrics(votes: VoteRecord, labels, cfg: SmoothingConfig,
                          grid: CertificationGrid, acc_base: float,
                          index_set=None) -> dict:
    """Scalar summary: accumulated certifications per axis plus accuracies."""
    labels = np.asarray(labels)
    nodes = np.arange(len(labels)) if index_set is None else np.asarray(index_set)
    acc_smooth = float(np.mean(votes.majority[nodes] == labels[nodes]))
    add_row = grid.R[:, 0]
    del_row = grid.R[0, :]
    return {
        "AC_addNdel": accumulated_certifications(grid),
        "AC_add": float(add_row.sum() - add_row[0]),
        "AC_del": float(del_row.sum() - del_row[0]),
        "r_bar_a": average_certifiable_radius(votes, labels, cfg, "add", index_set),
        "r_bar_d": average_certifiable_radius(votes, labels, cfg, "del", index_set),
        "acc_base": float(acc_base),
        "acc_smooth": acc_smooth,
    }


def write_grid_csv(path, grid: CertificationGrid) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r_a", "r_d", "R"])
        for ra in range(grid.max_ra + 1):
            for rd in range(grid.max_rd + 1):
                writer.writerow([ra, rd, repr(float(grid.R[ra, rd]))])


def write_metrics_json(path, metrics: dict) -> None:
    with open(path, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")

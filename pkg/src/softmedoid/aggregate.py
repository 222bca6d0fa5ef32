"""Per-node neighborhood aggregation over a message-passing matrix.

The soft-medoid family is evaluated per node on the rows selected by the
matrix row support (optionally truncated to the k highest weights). The
implementation here is a padded, vectorized numpy formulation that also
produces the caches needed for the exact backward pass; a compiled CSR
kernel (see ``kernels``) covers the cache-free inference path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

AGGREGATOR_KINDS = ("weighted_sum", "dimwise_median", "medoid", "soft_medoid", "soft_medoid_alt")
_SOFT_KINDS = ("soft_medoid", "soft_medoid_alt")


@dataclass
class AggregatorConfig:
    """Selects and parameterizes the per-node aggregation.

    ``k = 0`` disables top-k truncation. The temperature is ignored by the
    weighted-sum, median and hard-medoid kinds.
    """

    kind: str = "weighted_sum"
    T: float = 1.0
    k: int = 0

    def __post_init__(self):
        if self.kind not in AGGREGATOR_KINDS:
            raise ValueError(f"unknown aggregator kind {self.kind!r}")
        self.T = float(self.T)
        self.k = int(self.k)
        if self.kind in _SOFT_KINDS and self.T <= 0:
            raise ValueError("soft aggregators need a positive temperature")
        if self.k < 0:
            raise ValueError("k must be >= 0 (0 disables truncation)")


@dataclass
class NeighborhoodPlan:
    """Padded per-row neighbor table extracted from a CSR matrix."""

    idx: np.ndarray    # (n, K) source-row indices, padded with 0
    wts: np.ndarray    # (n, K) matrix weights, padded with 0
    mask: np.ndarray   # (n, K) validity of each slot
    n_sources: int


def build_plan(A, k: int = 0) -> NeighborhoodPlan:
    """Extract, per row, the (up to k) highest-weight entries of A.

    Ties in the weight go to the smaller column index, matching the
    estimator-level truncation rule.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    indptr, indices, data = A.indptr, A.indices, A.data
    rows_idx, rows_w = [], []
    width = 1
    for v in range(n):
        ids = indices[indptr[v]:indptr[v + 1]]
        w = data[indptr[v]:indptr[v + 1]]
        if k and len(ids) > k:
            # keep slots in ascending index order so hard tie-breaks stay
            # aligned with the estimator-level rule
            order = np.sort(np.lexsort((ids, -w))[:k])
            ids, w = ids[order], w[order]
        rows_idx.append(ids)
        rows_w.append(w)
        width = max(width, len(ids))
    idx = np.zeros((n, width), dtype=np.int64)
    wts = np.zeros((n, width), dtype=np.float64)
    mask = np.zeros((n, width), dtype=bool)
    for v in range(n):
        m = len(rows_idx[v])
        idx[v, :m] = rows_idx[v]
        wts[v, :m] = rows_w[v]
        mask[v, :m] = True
    return NeighborhoodPlan(idx=idx, wts=wts, mask=mask, n_sources=A.shape[1])


@dataclass
class AggregationCache:
    kind: str
    T: float
    plan: NeighborhoodPlan
    gathered: Optional[np.ndarray] = None   # (n, K, h)
    dist: Optional[np.ndarray] = None       # (n, K, K)
    soft: Optional[np.ndarray] = None       # (n, K) softmax weights
    wsum: Optional[np.ndarray] = None       # (n,) total row weight
    smass: Optional[np.ndarray] = None      # (n,) sum of soft * weight
    out: Optional[np.ndarray] = None        # (n, h)
    selected: Optional[np.ndarray] = None   # (n,) or (n, h) hard selections


def _pairwise_distances(G: np.ndarray) -> np.ndarray:
    sq = np.einsum("nkh,nkh->nk", G, G)
    dots = np.einsum("nkh,nmh->nkm", G, G)
    d2 = sq[:, :, None] + sq[:, None, :] - 2.0 * dots
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def _soft_forward(Z: np.ndarray, plan: NeighborhoodPlan, T: float, alt: bool) -> AggregationCache:
    G = Z[plan.idx]                          # (n, K, h)
    D = _pairwise_distances(G)
    r = np.einsum("nkm,nm->nk", D, plan.wts)
    z = np.where(plan.mask, -r / T, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    wsum = plan.wts.sum(axis=1)
    if alt:
        out = wsum[:, None] * np.einsum("nk,nkh->nh", s, G)
        smass = None
    else:
        w = s * plan.wts
        smass = w.sum(axis=1)
        coeff = (wsum / smass)[:, None] * w
        out = np.einsum("nk,nkh->nh", coeff, G)
    return AggregationCache(kind="soft_medoid_alt" if alt else "soft_medoid", T=T,
                            plan=plan, gathered=G, dist=D, soft=s, wsum=wsum,
                            smass=smass, out=out)


def _soft_backward(cache: AggregationCache, d_out: np.ndarray) -> np.ndarray:
    plan = cache.plan
    G, D, s = cache.gathered, cache.dist, cache.soft
    wts, wsum = plan.wts, cache.wsum
    T = cache.T
    ux = np.einsum("nh,nkh->nk", d_out, G)
    if cache.kind == "soft_medoid":
        smass = cache.smass
        uo = np.einsum("nh,nh->n", d_out, cache.out)
        g = (wts / smass[:, None]) * (wsum[:, None] * ux - uo[:, None])
        direct = ((wsum / smass)[:, None] * s * wts)[:, :, None] * d_out[:, None, :]
    else:
        g = wsum[:, None] * ux
        direct = (wsum[:, None] * s)[:, :, None] * d_out[:, None, :]
    g = np.where(plan.mask, g, 0.0)
    q = s * (g - np.einsum("nk,nk->n", s, g)[:, None])
    rho = -q / T
    with np.errstate(divide="ignore", invalid="ignore"):
        P = (rho[:, :, None] * wts[:, None, :] + rho[:, None, :] * wts[:, :, None]) / D
    P[~np.isfinite(P)] = 0.0
    grad_g = direct + P.sum(axis=2)[:, :, None] * G - np.einsum("nkm,nmh->nkh", P, G)
    grad_z = np.zeros((plan.n_sources, d_out.shape[1]))
    np.add.at(grad_z, plan.idx[plan.mask], grad_g[plan.mask])
    return grad_z


def _hard_medoid_forward(Z: np.ndarray, plan: NeighborhoodPlan) -> AggregationCache:
    G = Z[plan.idx]
    D = _pairwise_distances(G)
    r = np.einsum("nkm,nm->nk", D, plan.wts)
    eligible = plan.mask & (plan.wts > 0)
    r = np.where(eligible, r, np.inf)
    sel = np.argmin(r, axis=1)
    wsum = plan.wts.sum(axis=1)
    out = wsum[:, None] * G[np.arange(len(sel)), sel]
    return AggregationCache(kind="medoid", T=0.0, plan=plan, wsum=wsum,
                            out=out, selected=sel)


def _hard_medoid_backward(cache: AggregationCache, d_out: np.ndarray) -> np.ndarray:
    plan = cache.plan
    grad_z = np.zeros((plan.n_sources, d_out.shape[1]))
    rows = np.arange(len(cache.selected))
    src = plan.idx[rows, cache.selected]
    np.add.at(grad_z, src, cache.wsum[:, None] * d_out)
    return grad_z


def _dimwise_median_forward(Z: np.ndarray, plan: NeighborhoodPlan) -> AggregationCache:
    n, _ = plan.idx.shape
    h = Z.shape[1]
    out = np.zeros((n, h))
    sel = np.zeros((n, h), dtype=np.int64)
    wsum = plan.wts.sum(axis=1)
    ranks_cache = {}
    for v in range(n):
        m = int(plan.mask[v].sum())
        ids = plan.idx[v, :m]
        a = plan.wts[v, :m]
        ranks = ranks_cache.setdefault(m, np.arange(m))
        half = 0.5 * a.sum()
        for j in range(h):
            order = np.lexsort((ranks, Z[ids, j]))
            cum = np.cumsum(a[order])
            slot = order[int(np.searchsorted(cum, half, side="left"))]
            sel[v, j] = slot
            out[v, j] = wsum[v] * Z[ids[slot], j]
    return AggregationCache(kind="dimwise_median", T=0.0, plan=plan, wsum=wsum,
                            out=out, selected=sel)


def _dimwise_median_backward(cache: AggregationCache, d_out: np.ndarray) -> np.ndarray:
    plan = cache.plan
    n, h = d_out.shape
    grad_z = np.zeros((plan.n_sources, h))
    for v in range(n):
        src = plan.idx[v, cache.selected[v]]
        for j in range(h):
            grad_z[src[j], j] += cache.wsum[v] * d_out[v, j]
    return grad_z


def aggregate(A, Z: np.ndarray, cfg: AggregatorConfig, need_cache: bool = False):
    """Aggregate transformed embeddings Z over the rows of A.

    Returns the (n, h) output, plus the backward cache when requested.
    The weighted-sum kind is the plain sparse product and needs no cache
    beyond the matrix itself.
    """
    if cfg.kind == "weighted_sum":
        out = A @ Z
        cache = AggregationCache(kind="weighted_sum", T=0.0, plan=None) if need_cache else None
        if cache is not None:
            cache.selected = A
        return (out, cache) if need_cache else out
    plan = build_plan(A, cfg.k)
    if cfg.kind == "soft_medoid":
        cache = _soft_forward(Z, plan, cfg.T, alt=False)
    elif cfg.kind == "soft_medoid_alt":
        cache = _soft_forward(Z, plan, cfg.T, alt=True)
    elif cfg.kind == "medoid":
        cache = _hard_medoid_forward(Z, plan)
    else:
        cache = _dimwise_median_forward(Z, plan)
    return (cache.out, cache) if need_cache else cache.out


def aggregate_backward(cache: AggregationCache, d_out: np.ndarray) -> np.ndarray:
    """Gradient of the aggregation output w.r.t. the stacked embeddings Z."""
    if cache.kind == "weighted_sum":
        return cache.selected.T @ d_out
    if cache.kind in _SOFT_KINDS:
        return _soft_backward(cache, d_out)
    if cache.kind == "medoid":
        return _hard_medoid_backward(cache, d_out)
    return _dimwise_median_backward(cache, d_out)

"""Robust location estimators over weighted point sets.

Every estimator takes an (n, d) array of points and, where meaningful, a
non-negative weight vector of length n. Results carry the estimated
location together with the effective per-point coefficients, i.e. the
multipliers that, applied to the rows of the input, reproduce the
location. Downstream code (message passing, gradients, diagnostics)
relies on those coefficients.

Temperature convention: a positive temperature selects the smooth
estimator; ``T = 0`` requests the exact (hard) medoid limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

#: Sentinel temperature for the hard-medoid limit.
EXACT_MEDOID = 0.0

_COINCIDENT_TOL = 1e-12


@dataclass
class EstimatorResult:
    """Location estimate plus the per-point coefficients that produced it."""

    location: np.ndarray
    coefficients: np.ndarray
    converged: bool = True


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"point set must be a 2-D array, got shape {X.shape}")
    n, d = X.shape
    if n < 1 or d < 1:
        raise ValueError(f"point set needs n >= 1 and d >= 1, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("point set contains non-finite entries")
    return X


def _as_weights(a, n: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (n,):
        raise ValueError(f"weight vector must have shape ({n},), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("weight vector contains non-finite entries")
    if np.any(a < 0):
        raise ValueError("weights must be non-negative")
    if not np.any(a > 0):
        raise ValueError("weights must contain at least one positive entry")
    return a


def _as_temperature(T) -> float:
    T = float(T)
    if not np.isfinite(T) or T < 0:
        raise ValueError("temperature must be finite and >= 0 (0 selects the exact medoid)")
    return T


def _softmax(z: np.ndarray) -> np.ndarray:
    # max-subtraction keeps exp() in range even for huge distance sums
    e = np.exp(z - z.max())
    return e / e.sum()


def _weighted_distance_sums(X: np.ndarray, a: np.ndarray) -> np.ndarray:
    # r_i = sum_j a_j ||x_j - x_i||; cdist is symmetric so D @ a works
    return cdist(X, X) @ a


def mean(X, a) -> EstimatorResult:
    """Weighted sum of the rows of X (the usual message-passing aggregation).

    The weights are applied as-is; they are not renormalized, so uniform
    weights 1/n give the arithmetic mean while all-ones weights give a sum.
    """
    X = _as_points(X)
    a = _as_weights(a, X.shape[0])
    return EstimatorResult(location=a @ X, coefficients=a.copy())


def dimensionwise_median(X, a) -> EstimatorResult:
    """Per-coordinate weighted median (lower median on ties).

    The coefficients report, per point, the fraction of coordinates for
    which that point supplied the median value.
    """
    X = _as_points(X)
    n, d = X.shape
    a = _as_weights(a, n)
    half = 0.5 * a.sum()
    ranks = np.arange(n)
    location = np.empty(d)
    indicator = np.zeros(n)
    for j in range(d):
        order = np.lexsort((ranks, X[:, j]))
        cum = np.cumsum(a[order])
        pos = int(np.searchsorted(cum, half, side="left"))
        chosen = order[pos]
        location[j] = X[chosen, j]
        indicator[chosen] += 1.0 / d
    return EstimatorResult(location=location, coefficients=indicator)


def medoid(X, a) -> EstimatorResult:
    """Input point minimizing the weighted sum of distances to all points.

    Ties are broken deterministically by the smallest index.
    """
    X = _as_points(X)
    a = _as_weights(a, X.shape[0])
    r = _weighted_distance_sums(X, a)
    k = int(np.argmin(r))
    coeff = np.zeros(X.shape[0])
    coeff[k] = 1.0
    return EstimatorResult(location=X[k].copy(), coefficients=coeff)


def l1_estimator(X, a, tol: float = 1e-8, max_iter: int = 1000) -> EstimatorResult:
    """Geometric median via Weiszfeld iteration with the classic singularity fix.

    If an iterate lands on a data point, the subgradient optimality test is
    applied and, when it fails, the modified step excluding that point's
    term is taken. Non-convergence is reported through ``converged`` rather
    than raised; the last iterate is still returned.
    """
    X = _as_points(X)
    n, _ = X.shape
    a = _as_weights(a, n)
    if tol <= 0:
        raise ValueError("tol must be positive")
    y = (a @ X) / a.sum()
    converged = False
    for _ in range(max_iter):
        diff = X - y
        dist = np.linalg.norm(diff, axis=1)
        hit = np.nonzero(dist <= _COINCIDENT_TOL)[0]
        if hit.size:
            kh = int(hit[0])
            rest = dist > _COINCIDENT_TOL
            if not np.any(rest):
                converged = True
                break
            w = a[rest] / dist[rest]
            resid = (a[rest] / dist[rest]) @ diff[rest]
            rnorm = np.linalg.norm(resid)
            if rnorm <= a[kh]:
                # the data point itself is optimal
                y = X[kh].copy()
                converged = True
                break
            pull = (w @ X[rest]) / w.sum()
            beta = a[kh] / rnorm
            y_new = max(0.0, 1.0 - beta) * pull + min(1.0, beta) * y
        else:
            w = a / dist
            y_new = (w @ X) / w.sum()
        if np.linalg.norm(y_new - y) <= tol:
            y = y_new
            converged = True
            break
        y = y_new
    dist = np.linalg.norm(X - y, axis=1)
    if np.any(dist <= _COINCIDENT_TOL):
        coeff = np.zeros(n)
        coeff[int(np.argmin(dist))] = 1.0
    else:
        w = a / dist
        coeff = w / w.sum()
    return EstimatorResult(location=y, coefficients=coeff, converged=converged)


def soft_medoid(X, T) -> EstimatorResult:
    """Smooth medoid: softmax over negative distance sums picks the location.

    The coefficients are the softmax weights (non-negative, summing to 1),
    so the location is a convex combination of the input points. ``T = 0``
    returns the exact medoid; large T approaches the arithmetic mean.
    """
    X = _as_points(X)
    T = _as_temperature(T)
    n = X.shape[0]
    if T == EXACT_MEDOID:
        return medoid(X, np.ones(n))
    r = cdist(X, X).sum(axis=1)
    s = _softmax(-r / T)
    return EstimatorResult(location=s @ X, coefficients=s)


def _weighted_medoid_index(r: np.ndarray, a: np.ndarray) -> int:
    # hard limit: argmin of the weighted distance sums, restricted to points
    # that actually carry weight (zero-weight points cannot be normalized)
    support = np.nonzero(a > 0)[0]
    return int(support[np.argmin(r[support])])


def _wsm_numeric(X: np.ndarray, a: np.ndarray, T: float) -> EstimatorResult:
    # validated inputs only
    n = X.shape[0]
    asum = a.sum()
    r = _weighted_distance_sums(X, a)
    if T == EXACT_MEDOID:
        k = _weighted_medoid_index(r, a)
        coeff = np.zeros(n)
        coeff[k] = asum
        return EstimatorResult(location=asum * X[k], coefficients=coeff)
    s = _softmax(-r / T)
    w = s * a
    c = asum / w.sum()
    coeff = c * w
    return EstimatorResult(location=coeff @ X, coefficients=coeff)


def weighted_soft_medoid(X, a, T) -> EstimatorResult:
    """Weighted smooth medoid with GCN-compatible normalization.

    The weights enter twice: the distance sums seen by the softmax are
    weighted, and the softmax output is multiplied elementwise by the
    weights before combining the points. A scalar factor rescales the
    coefficients so they sum to the total weight mass, matching the scale
    of a plain weighted sum.
    """
    X = _as_points(X)
    n = X.shape[0]
    a = _as_weights(a, n)
    T = _as_temperature(T)
    return _wsm_numeric(X, a, T)


def top_weight_indices(a: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest weights, ties resolved to the smallest index."""
    order = np.lexsort((np.arange(len(a)), -a))
    return np.sort(order[:k])


def weighted_soft_medoid_topk(X, a, T, k: int) -> EstimatorResult:
    """Weighted smooth medoid restricted to the k highest-weight points.

    Coefficients of dropped points are zero; on the kept points the result
    is identical to running the full estimator on the restriction.
    """
    X = _as_points(X)
    n = X.shape[0]
    a = _as_weights(a, n)
    T = _as_temperature(T)
    k = int(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= n:
        return _wsm_numeric(X, a, T)
    sel = top_weight_indices(a, k)
    sub = _wsm_numeric(X[sel], a[sel], T)
    coeff = np.zeros(n)
    coeff[sel] = sub.coefficients
    return EstimatorResult(location=sub.location, coefficients=coeff)


def weighted_soft_medoid_alt(X, a, T) -> EstimatorResult:
    """Variant where weights only shape the distance sums, not the combination.

    The softmax output is combined with the points directly and scaled by
    the total weight mass, so the coefficients are that scalar times the
    softmax weights.
    """
    X = _as_points(X)
    n = X.shape[0]
    a = _as_weights(a, n)
    T = _as_temperature(T)
    asum = a.sum()
    r = _weighted_distance_sums(X, a)
    if T == EXACT_MEDOID:
        k = int(np.argmin(r))
        coeff = np.zeros(n)
        coeff[k] = asum
        return EstimatorResult(location=asum * X[k], coefficients=coeff)
    s = _softmax(-r / T)
    coeff = asum * s
    return EstimatorResult(location=coeff @ X, coefficients=coeff)


def wsm_backward(X, a, T, upstream):
    """Reverse-mode derivative of ``weighted_soft_medoid``.

    Given the upstream gradient w.r.t. the location, returns the exact
    gradients w.r.t. the points (n, d) and the weights (n,). The distance
    derivative at coincident points uses the subgradient 0. In the hard
    limit (T = 0) only the selected point receives gradient.
    """
    X = _as_points(X)
    n, d = X.shape
    a = _as_weights(a, n)
    T = _as_temperature(T)
    u = np.asarray(upstream, dtype=np.float64)
    if u.shape != (d,):
        raise ValueError(f"upstream must have shape ({d},), got {u.shape}")
    asum = a.sum()
    D = cdist(X, X)
    r = D @ a
    if T == EXACT_MEDOID:
        k = _weighted_medoid_index(r, a)
        grad_x = np.zeros_like(X)
        grad_x[k] = asum * u
        grad_a = np.full(n, float(u @ X[k]))
        return grad_x, grad_a
    s = _softmax(-r / T)
    w = s * a
    S = w.sum()
    c = asum / S
    out = c * (w @ X)
    ux = X @ u
    uo = float(out @ u)
    g = (a / S) * (asum * ux - uo)          # dL/ds
    q = s * (g - float(s @ g))              # softmax backward
    rho = -q / T                            # dL/dr
    with np.errstate(divide="ignore", invalid="ignore"):
        P = (rho[:, None] * a[None, :] + rho[None, :] * a[:, None]) / D
    P[~np.isfinite(P)] = 0.0
    grad_x = c * np.outer(w, u) + P.sum(axis=1)[:, None] * X - P @ X
    grad_a = c * s * ux + (1.0 / asum - s / S) * uo + D @ rho
    return grad_x, grad_a

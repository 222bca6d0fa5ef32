"""Empirical breakdown and bias harness for the location estimators.

Simulates point-mass contamination of Gaussian clouds and records how far
each estimator can be dragged, turning the asymptotic robustness claims
into finite, seeded experiments.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import estimators as est

#: ratio-per-decade threshold separating bounded from growing estimates
BOUNDED_RATIO = 1.01
#: ||t(p)||/p band that identifies a broken-down estimator
DIVERGED_REL_MIN = 1e-3


@dataclass
class PerturbationSpec:
    """Replace ``m`` points with a point mass of magnitude ``p`` along ``axis``."""

    m: int
    p: float
    axis: np.ndarray | None = None

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be >= 0")
        if self.p <= 0:
            raise ValueError("p must be positive")
        if self.axis is not None:
            axis = np.asarray(self.axis, dtype=np.float64)
            norm = np.linalg.norm(axis)
            if norm == 0:
                raise ValueError("axis must be non-zero")
            self.axis = axis / norm

    def direction(self, d: int) -> np.ndarray:
        if self.axis is None:
            e1 = np.zeros(d)
            e1[0] = 1.0
            return e1
        if self.axis.shape != (d,):
            raise ValueError(f"axis must have shape ({d},)")
        return self.axis


@dataclass
class BiasCurve:
    """Mean displacement of a recentered estimator under point-mass contamination."""

    estimator: str
    T: float | None
    n: int
    d: int
    p: float
    epsilons: np.ndarray
    bias_mean: np.ndarray
    bias_std: np.ndarray


class WeightRatioDiagnostic(NamedTuple):
    alpha1: float  # spread of the perturbed cluster, seen from its first point
    alpha2: float  # distances from the first perturbed point to the clean points
    alpha3: float  # distances from the first clean point to the perturbed points
    alpha4: float  # spread of the clean cluster, seen from its first point
    ratio: float   # softmax-weight ratio perturbed/clean implied by the four terms


def point_mass_perturb(X, spec: PerturbationSpec, rng_seed=0) -> np.ndarray:
    """Replace ``spec.m`` uniformly chosen rows of X with the point mass."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if spec.m > n:
        raise ValueError(f"cannot replace {spec.m} of {n} points")
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(n, size=spec.m, replace=False)
    out = X.copy()
    out[idx] = spec.p * spec.direction(d)
    return out


def _resolve_estimator(name: str, T: float | None) -> Callable[[np.ndarray], np.ndarray]:
    """Location function for an estimator tag; weighted members get uniform 1/n."""

    def uniform(X):
        return np.full(len(X), 1.0 / len(X))

    table = {
        "mean": lambda X: est.mean(X, uniform(X)).location,
        "dimwise_median": lambda X: est.dimensionwise_median(X, uniform(X)).location,
        "medoid": lambda X: est.medoid(X, uniform(X)).location,
        "l1": lambda X: est.l1_estimator(X, uniform(X)).location,
        "soft_medoid": lambda X: est.soft_medoid(X, T).location,
        "weighted_soft_medoid": lambda X: est.weighted_soft_medoid(X, uniform(X), T).location,
    }
    if name not in table:
        raise ValueError(f"unknown estimator {name!r}; choose from {sorted(table)}")
    if name in ("soft_medoid", "weighted_soft_medoid") and T is None:
        raise ValueError(f"estimator {name!r} needs a temperature")
    return table[name]


def empirical_bias_curve(estimator: str, n: int, d: int, p: float, T: float | None,
                         eps_grid: Sequence[float], trials: int = 20,
                         rng_seed: int = 0) -> BiasCurve:
    """Monte-Carlo bias of a recentered estimator over a contamination grid.

    Per trial a standard-normal cloud is drawn and shifted so the clean
    estimate sits at the origin; the recorded bias is then simply the norm
    of the estimate on the contaminated cloud. Trials are paired across
    epsilon values (same clouds) so the curves are directly comparable.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    eps_grid = np.asarray(list(eps_grid), dtype=np.float64)
    if np.any(np.diff(eps_grid) <= 0):
        raise ValueError("eps_grid must be strictly increasing")
    loc = _resolve_estimator(estimator, T)
    bias = np.zeros((len(eps_grid), trials))
    for t in range(trials):
        rng = np.random.default_rng((rng_seed, t))
        X = rng.standard_normal((n, d))
        X = X - loc(X)
        for ei, eps in enumerate(eps_grid):
            m = int(math.floor(eps * n))
            if m == 0:
                bias[ei, t] = np.linalg.norm(loc(X))
                continue
            Xp = point_mass_perturb(X, PerturbationSpec(m=m, p=p), rng_seed=(rng_seed, t, m))
            bias[ei, t] = np.linalg.norm(loc(Xp))
    return BiasCurve(
        estimator=estimator, T=T, n=n, d=d, p=p, epsilons=eps_grid,
        bias_mean=bias.mean(axis=1), bias_std=bias.std(axis=1),
    )


@dataclass
class BreakdownSweep:
    estimator: str
    T: float | None
    m: int
    p_schedule: np.ndarray
    norms: np.ndarray
    guarantee: float  # 2 M (m+1), the worst-case displacement bound
    verdict: str = field(default="indeterminate")


def breakdown_sweep(estimator: str, X, m: int, p_schedule: Sequence[float],
                    T: float | None = None, rng_seed: int = 0) -> BreakdownSweep:
    """Push m points to increasing magnitudes and record the estimate norm.

    The cloud is recentered with the estimator's own clean value first, so
    the norm directly measures displacement. The same rows are replaced at
    every magnitude.
    """
    p_schedule = np.asarray(list(p_schedule), dtype=np.float64)
    if np.any(np.diff(p_schedule) <= 0):
        raise ValueError("p_schedule must be increasing")
    loc = _resolve_estimator(estimator, T)
    X = np.asarray(X, dtype=np.float64)
    X = X - loc(X)
    M = np.linalg.norm(X, axis=1).max()
    norms = np.empty(len(p_schedule))
    for i, p in enumerate(p_schedule):
        Xp = point_mass_perturb(X, PerturbationSpec(m=m, p=float(p)), rng_seed=rng_seed)
        norms[i] = np.linalg.norm(loc(Xp))
    sweep = BreakdownSweep(estimator=estimator, T=T, m=m, p_schedule=p_schedule,
                           norms=norms, guarantee=2.0 * M * (m + 1))
    sweep.verdict = classify_breakdown(p_schedule, norms)
    return sweep


def classify_breakdown(p_schedule, norms) -> str:
    """Label a sweep as bounded or diverged.

    Bounded: successive norms grow by less than 1% per magnitude decade.
    Diverged: the norm tracks the perturbation (||t||/p stays in [1e-3, 1]
    and does not vanish).
    """
    p_schedule = np.asarray(p_schedule, dtype=np.float64)
    norms = np.asarray(norms, dtype=np.float64)
    if np.all(norms < 1e-12):
        return "bounded"
    ratios = norms[1:] / np.maximum(norms[:-1], 1e-300)
    if np.all(ratios < BOUNDED_RATIO):
        return "bounded"
    rel = norms / p_schedule
    if np.all(rel >= DIVERGED_REL_MIN) and np.all(rel <= 1.0 + 1e-9) and rel[-1] >= 0.5 * rel[0]:
        return "diverged"
    return "indeterminate"


def weight_ratio_diagnostic(X_clean, X_pert, T: float) -> WeightRatioDiagnostic:
    """Four competing distance sums behind the perturbed/clean weight ratio.

    The first perturbed and first clean point act as representatives; the
    returned ratio is the implied softmax-weight ratio between them.
    """
    Xc = np.atleast_2d(np.asarray(X_clean, dtype=np.float64))
    Xp = np.atleast_2d(np.asarray(X_pert, dtype=np.float64))
    if Xc.shape[0] == 0 or Xp.shape[0] == 0:
        raise ValueError("both point sets must be non-empty")
    rep_p, rep_c = Xp[0], Xc[0]
    a1 = float(np.linalg.norm(Xp - rep_p, axis=1).sum())
    a2 = float(np.linalg.norm(Xc - rep_p, axis=1).sum())
    a3 = float(np.linalg.norm(Xp - rep_c, axis=1).sum())
    a4 = float(np.linalg.norm(Xc - rep_c, axis=1).sum())
    ratio = float(np.exp(-(a1 + a2 - a3 - a4) / T))
    return WeightRatioDiagnostic(a1, a2, a3, a4, ratio)


def write_bias_curves(path, curves: Sequence[BiasCurve]) -> None:
    """CSV dump, one row per (curve, epsilon) pair."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "T", "n", "d", "p", "epsilon", "bias_mean", "bias_std"])
        for c in curves:
            for eps, bm, bs in zip(c.epsilons, c.bias_mean, c.bias_std):
                writer.writerow([c.estimator, "" if c.T is None else repr(float(c.T)),
                                 c.n, c.d, repr(float(c.p)), repr(float(eps)),
                                 repr(float(bm)), repr(float(bs))])


def write_breakdown_sweeps(path, sweeps: Sequence[BreakdownSweep]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "T", "m", "p", "norm", "guarantee", "verdict"])
        for s in sweeps:
            for p, norm in zip(s.p_schedule, s.norms):
                writer.writerow([s.estimator, "" if s.T is None else repr(float(s.T)),
                                 s.m, repr(float(p)), repr(float(norm)),
                                 repr(float(s.guarantee)), s.verdict])

import numpy as np
import pytest

from softmedoid import estimators as est


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------

def medoid_by_enumeration(X, a):
    """Exhaustive candidate scan, independent of the library distance code."""
    best_k, best_val = 0, np.inf
    for k in range(len(X)):
        val = sum(a[j] * np.sqrt(np.sum((X[j] - X[k]) ** 2)) for j in range(len(X)))
        if val < best_val - 1e-15:
            best_k, best_val = k, val
    return best_k


def golden_section(f, lo, hi, iters=200):
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    c = hi - phi * (hi - lo)
    d = lo + phi * (hi - lo)
    for _ in range(iters):
        if f(c) < f(d):
            hi = d
        else:
            lo = c
        c = hi - phi * (hi - lo)
        d = lo + phi * (hi - lo)
    return 0.5 * (lo + hi)


def soft_medoid_reference(X, T):
    """Straight transcription of the smooth-medoid formula, loop based."""
    n = len(X)
    r = np.array([sum(np.linalg.norm(X[j] - X[i]) for j in range(n)) for i in range(n)])
    z = -r / T
    e = np.exp(z - z.max())
    s = e / e.sum()
    return s @ X


# ---------------------------------------------------------------------------
# mean
# ---------------------------------------------------------------------------

def test_mean_uniform_weights():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    res = est.mean(X, np.full(3, 1.0 / 3.0))
    assert np.allclose(res.location, [1.0 / 3.0, 1.0 / 3.0])
    assert np.allclose(res.coefficients, 1.0 / 3.0)


def test_mean_single_point():
    res = est.mean(np.array([[5.0, 5.0]]), np.array([1.0]))
    assert np.allclose(res.location, [5.0, 5.0])


def test_mean_is_unnormalized_weighted_sum():
    res = est.mean(np.array([[0.0, 0.0], [2.0, 0.0]]), np.array([1.0, 1.0]))
    assert np.allclose(res.location, [2.0, 0.0])


def test_mean_rejects_bad_input():
    with pytest.raises(ValueError):
        est.mean(np.array([[np.nan, 0.0]]), np.array([1.0]))
    with pytest.raises(ValueError):
        est.mean(np.zeros((2, 2)), np.array([1.0]))  # dimension mismatch
    with pytest.raises(ValueError):
        est.mean(np.zeros((2, 2)), np.array([-1.0, 1.0]))
    with pytest.raises(ValueError):
        est.mean(np.zeros((2, 2)), np.array([0.0, 0.0]))


# ---------------------------------------------------------------------------
# dimension-wise median
# ---------------------------------------------------------------------------

def test_dimwise_median_triangle():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    res = est.dimensionwise_median(X, np.ones(3))
    # per coordinate the sorted values are {0, 0, 1} whose median is 0
    assert np.allclose(res.location, [0.0, 0.0])


def test_dimwise_median_single_point():
    res = est.dimensionwise_median(np.array([[7.0, 7.0]]), np.array([1.0]))
    assert np.allclose(res.location, [7.0, 7.0])


def test_dimwise_median_scalar_oracle():
    X = np.array([[0.0], [1.0], [100.0]])
    res = est.dimensionwise_median(X, np.ones(3))
    assert res.location[0] == np.median([0.0, 1.0, 100.0]) == 1.0


def test_dimwise_median_lower_median_on_even_mass():
    X = np.array([[0.0], [1.0]])
    res = est.dimensionwise_median(X, np.ones(2))
    assert res.location[0] == 0.0


def test_dimwise_median_indicator_coefficients():
    X = np.array([[0.0, 5.0], [1.0, 0.0], [2.0, 1.0]])
    res = est.dimensionwise_median(X, np.ones(3))
    # coordinate medians come from row 1 (value 1.0) and row 2 (value 1.0)
    assert np.allclose(res.location, [1.0, 1.0])
    assert np.allclose(res.coefficients, [0.0, 0.5, 0.5])


# ---------------------------------------------------------------------------
# medoid
# ---------------------------------------------------------------------------

def test_medoid_triangle_enumeration():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    a = np.ones(3)
    res = est.medoid(X, a)
    k = medoid_by_enumeration(X, a)
    assert np.allclose(res.location, X[k])
    assert np.allclose(res.location, [0.0, 0.0])


def test_medoid_single_point():
    res = est.medoid(np.array([[3.0, -1.0]]), np.array([1.0]))
    assert np.allclose(res.location, [3.0, -1.0])
    assert np.allclose(res.coefficients, [1.0])


def test_medoid_majority_mass_wins():
    X = np.array([[0.0, 0.0], [0.0, 0.0], [9.0, 9.0]])
    res = est.medoid(X, np.ones(3))
    assert np.allclose(res.location, [0.0, 0.0])
    # smallest-index tie rule between the duplicated rows
    assert np.allclose(res.coefficients, [1.0, 0.0, 0.0])


def test_medoid_random_sets_match_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(25):
        n = rng.integers(2, 12)
        d = rng.integers(1, 5)
        X = rng.normal(size=(n, d))
        a = rng.uniform(0.1, 2.0, size=n)
        res = est.medoid(X, a)
        assert np.allclose(res.location, X[medoid_by_enumeration(X, a)])


# ---------------------------------------------------------------------------
# geometric median (Weiszfeld)
# ---------------------------------------------------------------------------

def test_l1_two_points_flat_objective():
    X = np.array([[0.0], [1.0]])
    res = est.l1_estimator(X, np.ones(2), tol=1e-10)
    # 1-D objective is flat on [0, 1]; the iteration settles at the midpoint
    oracle = golden_section(lambda y: abs(y - 0.0) + abs(y - 1.0), -1.0, 2.0)
    assert abs(sum(abs(res.location[0] - X[:, 0]))
               - sum(abs(oracle - X[:, 0]))) < 1e-8
    assert abs(res.location[0] - 0.5) < 1e-8


def test_l1_single_point():
    res = est.l1_estimator(np.array([[2.0, 3.0]]), np.array([1.0]))
    assert np.allclose(res.location, [2.0, 3.0])


def test_l1_square_center():
    X = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    res = est.l1_estimator(X, np.ones(4), tol=1e-10)
    assert np.allclose(res.location, [0.0, 0.0], atol=1e-8)


def test_l1_singularity_at_data_point():
    # symmetric star: the center data point is optimal and the start lands on it
    X = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [-2.0, 0.0], [0.0, -2.0]])
    res = est.l1_estimator(X, np.ones(5), tol=1e-10)
    assert res.converged
    assert np.allclose(res.location, [0.0, 0.0], atol=1e-10)


def test_l1_non_convergence_reports_last_iterate():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(12, 3))
    res = est.l1_estimator(X, np.ones(12), tol=1e-15, max_iter=1)
    assert not res.converged
    assert np.all(np.isfinite(res.location))


def test_l1_majority_weight_point_is_optimal():
    X = np.array([[0.0, 0.0], [1.0, 2.0], [-3.0, 1.0]])
    a = np.array([5.0, 1.0, 1.0])
    res = est.l1_estimator(X, a, tol=1e-12, max_iter=5000)
    assert np.allclose(res.location, [0.0, 0.0], atol=1e-6)


# ---------------------------------------------------------------------------
# smooth medoid
# ---------------------------------------------------------------------------

def test_soft_medoid_symmetric_pair():
    res = est.soft_medoid(np.array([[0.0], [10.0]]), T=1.0)
    assert np.allclose(res.location, [5.0])
    assert np.allclose(res.coefficients, [0.5, 0.5])


def test_soft_medoid_exact_mode_is_medoid():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    res = est.soft_medoid(X, T=est.EXACT_MEDOID)
    assert np.allclose(res.location, X[medoid_by_enumeration(X, np.ones(3))])
    assert np.allclose(res.location, [0.0, 0.0])


def test_soft_medoid_high_temperature_is_mean():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    res = est.soft_medoid(X, T=1e6)
    assert np.allclose(res.location, [1.0 / 3.0, 1.0 / 3.0], atol=1e-5)


def test_soft_medoid_matches_loop_reference():
    rng = np.random.default_rng(11)
    for T in (0.2, 1.0, 5.0):
        X = rng.normal(size=(8, 3))
        res = est.soft_medoid(X, T)
        assert np.allclose(res.location, soft_medoid_reference(X, T), atol=1e-12)


def test_soft_medoid_coefficients_convex():
    rng = np.random.default_rng(3)
    for _ in range(20):
        X = rng.normal(size=(rng.integers(1, 15), rng.integers(1, 6)))
        res = est.soft_medoid(X, T=rng.uniform(0.05, 10.0))
        assert np.all(res.coefficients >= 0)
        assert np.all(res.coefficients <= 1)
        assert abs(res.coefficients.sum() - 1.0) <= 1e-9


# ---------------------------------------------------------------------------
# weighted smooth medoid
# ---------------------------------------------------------------------------

def test_wsm_one_hot_weights_pick_that_point():
    X = np.array([[1.0, 2.0], [5.0, -1.0], [0.0, 0.0]])
    a = np.array([1.0, 0.0, 0.0])
    res = est.weighted_soft_medoid(X, a, T=0.7)
    assert np.allclose(res.location, X[0], atol=1e-12)
    assert abs(res.coefficients.sum() - 1.0) <= 1e-9


def test_wsm_all_ones_high_temperature_is_sum():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(6, 3))
    res = est.weighted_soft_medoid(X, np.ones(6), T=1e6)
    assert np.allclose(res.location, X.sum(axis=0), atol=1e-4)


def test_wsm_duplication_identity():
    # integer weights equal running the unweighted estimator on a multiset
    rng = np.random.default_rng(9)
    X = rng.normal(size=(5, 2))
    a = np.array([3, 1, 2, 1, 2], dtype=float)
    for T in (0.3, 1.0, 4.0):
        res = est.weighted_soft_medoid(X, a, T)
        X_dup = np.repeat(X, a.astype(int), axis=0)
        dup = est.soft_medoid(X_dup, T)
        expected = a.sum() * dup.location
        assert np.linalg.norm(res.location - expected) <= 1e-8 * (1 + np.linalg.norm(expected))


def test_wsm_coefficient_sum_matches_weight_mass():
    rng = np.random.default_rng(13)
    for _ in range(15):
        n = rng.integers(2, 10)
        X = rng.normal(size=(n, 3))
        a = rng.uniform(0.0, 2.0, size=n)
        a[rng.integers(0, n)] = 1.0  # keep at least one positive
        res = est.weighted_soft_medoid(X, a, T=rng.uniform(0.1, 5.0))
        assert abs(res.coefficients.sum() - a.sum()) <= 1e-9 * a.sum()


def test_wsm_exact_mode_normalization():
    X = np.array([[0.0, 0.0], [4.0, 0.0], [1.0, 1.0]])
    a = np.array([2.0, 1.0, 1.0])
    res = est.weighted_soft_medoid(X, a, T=est.EXACT_MEDOID)
    k = medoid_by_enumeration(X, a)
    assert np.allclose(res.location, a.sum() * X[k])
    assert res.coefficients[k] == a.sum()


def test_wsm_exact_mode_skips_zero_weight_points():
    # the zero-weight point is the most central but cannot carry the estimate
    X = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    a = np.array([0.0, 1.0, 1.0])
    res = est.weighted_soft_medoid(X, a, T=est.EXACT_MEDOID)
    assert np.allclose(res.location, a.sum() * X[1])


# ---------------------------------------------------------------------------
# top-k truncation
# ---------------------------------------------------------------------------

def test_topk_no_truncation_when_k_large():
    rng = np.random.default_rng(17)
    X = rng.normal(size=(5, 2))
    a = rng.uniform(0.1, 1.0, size=5)
    full = est.weighted_soft_medoid(X, a, T=1.0)
    res = est.weighted_soft_medoid_topk(X, a, T=1.0, k=9)
    assert np.allclose(res.location, full.location)
    assert np.allclose(res.coefficients, full.coefficients)


def test_topk_k1_collapses_to_heaviest_point():
    X = np.array([[1.0, 0.0], [0.0, 3.0], [2.0, 2.0]])
    a = np.array([0.5, 2.0, 1.0])
    res = est.weighted_soft_medoid_topk(X, a, T=1.0, k=1)
    # single-point restriction: coefficient a_max on the heaviest point
    assert np.allclose(res.location, a[1] * X[1])
    assert np.allclose(res.coefficients, [0.0, 2.0, 0.0])


def test_topk_restriction_matches_direct_recomputation():
    X = np.arange(10.0).reshape(5, 2)
    a = np.array([5.0, 4.0, 3.0, 2.0, 1.0])
    res = est.weighted_soft_medoid_topk(X, a, T=0.8, k=3)
    direct = est.weighted_soft_medoid(X[:3], a[:3], T=0.8)
    assert np.allclose(res.location, direct.location)
    assert np.allclose(res.coefficients[:3], direct.coefficients)
    assert np.all(res.coefficients[3:] == 0.0)


def test_topk_tie_break_smallest_index():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    a = np.array([1.0, 2.0, 2.0, 1.0])
    sel = est.top_weight_indices(a, 3)
    assert list(sel) == [0, 1, 2]


# ---------------------------------------------------------------------------
# alternative normalization
# ---------------------------------------------------------------------------

def test_alt_uniform_weights_reduce_to_soft_medoid():
    # weights 1/n rescale the distance sums, i.e. the softmax temperature;
    # with the temperature adjusted accordingly the reduction is exact
    rng = np.random.default_rng(21)
    X = rng.normal(size=(6, 2))
    n = len(X)
    T = 0.9
    res = est.weighted_soft_medoid_alt(X, np.full(n, 1.0 / n), T)
    ref = est.soft_medoid(X, n * T)
    assert np.allclose(res.location, ref.location, atol=1e-12)


def test_alt_single_point_scales_by_weight_mass():
    res = est.weighted_soft_medoid_alt(np.array([[2.0, -1.0]]), np.array([3.0]), T=1.0)
    assert np.allclose(res.location, [6.0, -3.0])


def test_alt_hand_evaluated_two_points():
    X = np.array([[1.0], [9.0]])
    a = np.array([2.0, 0.0])
    T = 1.0
    # weighted distance sums: r = (0, 16); softmax of -r/T
    e = np.exp(np.array([0.0, -16.0]))
    s = e / e.sum()
    expected = 2.0 * (s[0] * 1.0 + s[1] * 9.0)
    res = est.weighted_soft_medoid_alt(X, a, T)
    assert np.allclose(res.location, [expected], atol=1e-12)
    assert np.allclose(res.coefficients, 2.0 * s)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def wsm_loc(X, a, T):
    return est.weighted_soft_medoid(X, a, T).location


def fd_grads(X, a, T, u, h=1e-5):
    gx = np.zeros_like(X)
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            Xp, Xm = X.copy(), X.copy()
            Xp[i, j] += h
            Xm[i, j] -= h
            gx[i, j] = (u @ wsm_loc(Xp, a, T) - u @ wsm_loc(Xm, a, T)) / (2 * h)
    ga = np.zeros_like(a)
    for i in range(len(a)):
        ap, am = a.copy(), a.copy()
        ap[i] += h
        am[i] -= h
        ga[i] = (u @ wsm_loc(X, ap, T) - u @ wsm_loc(X, am, T)) / (2 * h)
    return gx, ga


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(42)
    count = 0
    for T in (0.2, 1.0, 5.0):
        for _ in range(8):
            n = int(rng.integers(2, 11))
            d = int(rng.integers(1, 6))
            X = rng.normal(size=(n, d))
            a = rng.uniform(0.2, 2.0, size=n)
            u = rng.normal(size=d)
            gx, ga = est.wsm_backward(X, a, T, u)
            fx, fa = fd_grads(X, a, T, u)
            scale = max(1.0, np.abs(fx).max(), np.abs(fa).max())
            assert np.abs(gx - fx).max() / scale < 1e-5
            assert np.abs(ga - fa).max() / scale < 1e-5
            count += 1
    assert count >= 20


def test_backward_single_point_is_identity():
    u = np.array([0.3, -0.7])
    gx, ga = est.wsm_backward(np.array([[1.0, 2.0]]), np.array([1.0]), 1.0, u)
    assert np.allclose(gx, u[None, :])


def test_backward_weighted_sum_limit():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(5, 3))
    u = rng.normal(size=3)
    gx, _ = est.wsm_backward(X, np.ones(5), 1e6, u)
    assert np.allclose(gx, np.tile(u, (5, 1)), atol=1e-4)


def test_backward_exact_mode_one_hot_passthrough():
    X = np.array([[0.0, 0.0], [5.0, 5.0], [-5.0, 5.0]])
    a = np.ones(3)
    u = np.array([1.0, 2.0])
    gx, ga = est.wsm_backward(X, a, est.EXACT_MEDOID, u)
    assert np.allclose(gx[1], 0) and np.allclose(gx[2], 0)
    assert np.allclose(gx[0], a.sum() * u)
    assert np.allclose(ga, u @ X[0])


def test_backward_coincident_points_finite():
    X = np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 0.0]])
    gx, ga = est.wsm_backward(X, np.ones(3), 0.5, np.array([1.0, -1.0]))
    assert np.all(np.isfinite(gx)) and np.all(np.isfinite(ga))


# ---------------------------------------------------------------------------
# shared invariants
# ---------------------------------------------------------------------------

def random_orthogonal(rng, d):
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return Q


@pytest.mark.parametrize("name", ["medoid", "l1", "soft_medoid", "weighted_soft_medoid"])
def test_orthogonal_equivariance(name):
    rng = np.random.default_rng(101)
    for _ in range(10):
        n, d = int(rng.integers(2, 10)), int(rng.integers(2, 5))
        X = rng.normal(size=(n, d))
        a = rng.uniform(0.2, 2.0, size=n)
        Q = random_orthogonal(rng, d)
        v = rng.normal(size=d)
        if name == "medoid":
            t = lambda Y: est.medoid(Y, a).location
        elif name == "l1":
            t = lambda Y: est.l1_estimator(Y, a, tol=1e-11, max_iter=3000).location
        elif name == "soft_medoid":
            t = lambda Y: est.soft_medoid(Y, 0.7).location
        else:
            t = lambda Y: est.weighted_soft_medoid(Y, a, 0.7).location
        lhs = t(X @ Q.T + v)
        rhs = t(X) @ Q.T + v if name != "weighted_soft_medoid" else None
        if name == "weighted_soft_medoid":
            # coefficients sum to the weight mass, so translation scales with it
            rhs = est.weighted_soft_medoid(X, a, 0.7).location @ Q.T + a.sum() * v
        assert np.linalg.norm(lhs - rhs) <= 1e-8 * max(1.0, np.linalg.norm(rhs))


def test_permutation_invariance():
    rng = np.random.default_rng(55)
    X = rng.normal(size=(9, 4))
    a = rng.uniform(0.1, 2.0, size=9)
    perm = rng.permutation(9)
    pairs = [
        (est.soft_medoid(X, 0.5).location, est.soft_medoid(X[perm], 0.5).location),
        (est.weighted_soft_medoid(X, a, 0.5).location,
         est.weighted_soft_medoid(X[perm], a[perm], 0.5).location),
        (est.medoid(X, a).location, est.medoid(X[perm], a[perm]).location),
        (est.dimensionwise_median(X, a).location,
         est.dimensionwise_median(X[perm], a[perm]).location),
    ]
    for lhs, rhs in pairs:
        assert np.linalg.norm(lhs - rhs) <= 1e-10


def test_temperature_limits_on_unique_medoid_sets():
    rng = np.random.default_rng(77)
    done = 0
    while done < 10:
        n, d = int(rng.integers(3, 15)), int(rng.integers(1, 5))
        X = rng.normal(size=(n, d))
        r = np.array([np.linalg.norm(X - X[i], axis=1).sum() for i in range(n)])
        gaps = np.sort(r)
        if gaps[1] - gaps[0] < 1e-3:
            continue  # require a unique medoid
        diam = np.linalg.norm(X[:, None] - X[None, :], axis=2).max()
        med = est.medoid(X, np.ones(n)).location
        cold = est.soft_medoid(X, 1e-6).location
        hot = est.soft_medoid(X, 1e6).location
        assert np.linalg.norm(cold - med) <= 1e-6 * diam
        assert np.linalg.norm(hot - X.mean(axis=0)) <= 1e-5 * diam
        done += 1


def test_weighted_breakdown_bound():
    # minority perturbation mass: the estimate norm stops growing with the
    # perturbation magnitude (ratio < 1.01 per decade step, allowing the
    # O(1/p) transient in the softmax weights) and respects the worst-case
    # bound
    rng = np.random.default_rng(31)
    n, d = 12, 3
    X = rng.normal(size=(n, d))
    a = np.ones(n)
    m = 5  # perturbed weight mass 5 < 7 clean
    M = np.linalg.norm(X, axis=1).max()
    bound = 2.0 * M * (m + 1) * a.sum()
    norms = []
    for p in (1e3, 1e6, 1e9):
        Xp = X.copy()
        Xp[:m] = 0.0
        Xp[:m, 0] = p
        res = est.weighted_soft_medoid(Xp, a, T=1.0)
        norms.append(np.linalg.norm(res.location))
    assert norms[1] <= norms[0] * 1.01
    assert norms[2] <= norms[1] * 1.01
    assert all(v <= bound for v in norms)

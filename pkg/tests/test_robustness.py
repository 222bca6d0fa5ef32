import numpy as np
import pytest

from softmedoid import estimators as est
from softmedoid import robustness as rob


def test_point_mass_zero_m_leaves_input():
    X = np.arange(8.0).reshape(4, 2)
    out = rob.point_mass_perturb(X, rob.PerturbationSpec(m=0, p=5.0), rng_seed=1)
    assert np.array_equal(out, X)


def test_point_mass_full_replacement():
    X = np.ones((3, 2))
    out = rob.point_mass_perturb(X, rob.PerturbationSpec(m=3, p=7.0), rng_seed=0)
    assert np.allclose(out, np.array([[7.0, 0.0]] * 3))


def test_point_mass_replaces_exactly_m_rows():
    X = np.arange(8.0).reshape(4, 2) + 1.0
    out = rob.point_mass_perturb(X, rob.PerturbationSpec(m=2, p=9.0), rng_seed=3)
    replaced = [i for i in range(4) if np.allclose(out[i], [9.0, 0.0])]
    kept = [i for i in range(4) if np.array_equal(out[i], X[i])]
    assert len(replaced) == 2 and len(kept) == 2
    assert sorted(replaced + kept) == [0, 1, 2, 3]


def test_point_mass_m_too_large():
    with pytest.raises(ValueError):
        rob.point_mass_perturb(np.ones((2, 2)), rob.PerturbationSpec(m=3, p=1.0))


def test_bias_curve_zero_epsilon_is_zero():
    curve = rob.empirical_bias_curve("mean", n=20, d=2, p=100.0, T=None,
                                     eps_grid=[0.0, 0.2], trials=3, rng_seed=0)
    assert curve.bias_mean[0] < 1e-12


def test_bias_curve_mean_matches_closed_form():
    curve = rob.empirical_bias_curve("mean", n=50, d=2, p=1000.0, T=None,
                                     eps_grid=[0.3], trials=10, rng_seed=1)
    # replacing m points pulls the recentered mean by (m/n) * p
    assert abs(curve.bias_mean[0] - 300.0) < 0.05 * 300.0


def test_bias_curve_soft_medoid_below_mean():
    mean_curve = rob.empirical_bias_curve("mean", n=50, d=2, p=1000.0, T=None,
                                          eps_grid=[0.3], trials=10, rng_seed=2)
    sm_curve = rob.empirical_bias_curve("soft_medoid", n=50, d=2, p=1000.0, T=1.0,
                                        eps_grid=[0.3], trials=10, rng_seed=2)
    assert sm_curve.bias_mean[0] < mean_curve.bias_mean[0]


def test_bias_curve_finite_below_breakdown():
    for p in (1e3, 1e6):
        curve = rob.empirical_bias_curve("soft_medoid", n=20, d=2, p=p, T=0.5,
                                         eps_grid=[0.1, 0.3, 0.45], trials=4, rng_seed=4)
        assert np.all(np.isfinite(curve.bias_mean))


def test_bias_curve_near_data_perturbation_stays_small():
    # a perturbation close to the data cannot produce a large bias
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 2))
    diam = np.linalg.norm(X[:, None] - X[None], axis=2).max()
    p = 10.0
    for name, T in [("mean", None), ("medoid", None), ("soft_medoid", 1.0)]:
        curve = rob.empirical_bias_curve(name, n=40, d=2, p=p, T=T,
                                         eps_grid=[0.2, 0.4], trials=4, rng_seed=6)
        assert np.all(curve.bias_mean <= p + 2 * diam)


def test_breakdown_sweep_bounded_below_half():
    rng = np.random.default_rng(10)
    X = rng.standard_normal((50, 2))
    for T in (0.2, 1.0, 5.0):
        sweep = rob.breakdown_sweep("soft_medoid", X, m=24, p_schedule=[1e3, 1e6, 1e9], T=T)
        assert sweep.verdict == "bounded"
        ratios = sweep.norms[1:] / sweep.norms[:-1]
        assert np.all(ratios < 1.01)


def test_breakdown_sweep_diverges_above_half():
    rng = np.random.default_rng(10)
    X = rng.standard_normal((50, 2))
    sweep = rob.breakdown_sweep("soft_medoid", X, m=26, p_schedule=[1e3, 1e6, 1e9], T=1.0)
    assert sweep.verdict == "diverged"
    assert np.all(sweep.norms / sweep.p_schedule >= 1e-3)


def test_breakdown_sweep_mean_breaks_with_one_point():
    rng = np.random.default_rng(10)
    X = rng.standard_normal((50, 2))
    sweep = rob.breakdown_sweep("mean", X, m=1, p_schedule=[1e3, 1e6, 1e9])
    assert sweep.verdict == "diverged"
    # the mean is linear in the perturbation magnitude
    assert np.allclose(sweep.norms / sweep.p_schedule, 1.0 / 50.0, rtol=1e-2)


def test_breakdown_guarantee_column():
    X = np.array([[1.0, 0.0], [0.0, 2.0], [-1.0, -1.0], [0.5, 0.5]])
    sweep = rob.breakdown_sweep("medoid", X, m=1, p_schedule=[10.0, 100.0])
    M = np.linalg.norm(X - est.medoid(X, np.full(4, 0.25)).location, axis=1).max()
    assert sweep.guarantee == pytest.approx(2 * M * 2)


def test_weight_ratio_vanishes_for_minority_point_mass():
    n, m = 20, 6
    clean = np.zeros((n - m, 2))
    prev = None
    for p in (1e2, 1e4, 1e6):
        pert = np.tile([p, 0.0], (m, 1))
        diag = rob.weight_ratio_diagnostic(clean, pert, T=1.0)
        assert diag.alpha1 == 0.0  # coincident perturbed points
        assert diag.alpha2 - diag.alpha3 == pytest.approx((n - 2 * m) * p)
        if prev is not None:
            assert diag.ratio <= prev
        prev = diag.ratio
    assert prev < 1e-12


def test_weight_ratio_identical_points_is_one():
    x = np.array([[1.0, 2.0]])
    diag = rob.weight_ratio_diagnostic(x, x, T=0.5)
    assert diag.ratio == pytest.approx(1.0)


def test_bias_csv_roundtrip(tmp_path):
    curve = rob.empirical_bias_curve("mean", n=10, d=2, p=10.0, T=None,
                                     eps_grid=[0.0, 0.2], trials=2, rng_seed=0)
    path = tmp_path / "bias.csv"
    rob.write_bias_curves(path, [curve])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "estimator,T,n,d,p,epsilon,bias_mean,bias_std"
    assert len(lines) == 3
    assert lines[1].startswith("mean,")

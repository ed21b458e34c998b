"""Gaussian path sampling, covariance rho-variation, and dyadic lifts."""

import numpy as np
import pytest

from oracles import rho_var_2d_exhaustive, stratonovich_midpoint_integral

from roughflow.errors import ArgumentError, NumericalError
from roughflow.gaussian import (
    CovarianceKernel,
    GaussianSampleConfig,
    _rho_var_ascent,
    brownian_covariance,
    dyadic_grid,
    dyadic_lift_sequence,
    fbm_covariance,
    make_kernel,
    rho_variation_2d,
    rho_variation_scaling,
    sample_gaussian_path,
    sample_gaussian_paths,
    sample_gaussian_values,
    uniform_grid,
)
from roughflow.paths import chen_residual_max, homogeneous_pvar_distance


# ---------------------------------------------------------------- kernels


def test_brownian_covariance_matches_min():
    k = brownian_covariance()
    assert k.eval(1.0, 2.0) == pytest.approx(1.0, abs=1e-15)
    rng = np.random.default_rng(0)
    for _ in range(20):
        s, t = rng.uniform(0.0, 5.0, size=2)
        assert k.eval(s, t) == pytest.approx(min(s, t), abs=1e-12)


def test_unit_variance_at_time_one_for_every_hurst():
    for h in (0.1, 0.25, 0.4, 0.5, 0.75, 0.9):
        assert fbm_covariance(h).eval(1.0, 1.0) == pytest.approx(1.0, abs=1e-15)


def test_fbm_covariance_closed_form_value():
    k = fbm_covariance(0.4)
    assert k.eval(1.0, 2.0) == pytest.approx(0.5 * 2.0 ** 0.8, rel=1e-15)


def test_hurst_out_of_range_raises():
    for h in (0.0, 1.0, -0.3, 1.7):
        with pytest.raises(ArgumentError):
            fbm_covariance(h)


def test_make_kernel_registry():
    assert make_kernel("fbm", hurst=0.4).params["hurst"] == 0.4
    assert make_kernel("bm").name == "bm"
    assert make_kernel("brownian").params["hurst"] == 0.5
    with pytest.raises(ArgumentError):
        make_kernel("fbm")
    with pytest.raises(ArgumentError):
        make_kernel("ornstein")


def test_kernel_symmetry_guard():
    crooked = CovarianceKernel(eval=lambda s, t: s - t + s * t, name="crooked")
    with pytest.raises(NumericalError):
        crooked.matrix([0.5, 1.0, 1.5])


# ---------------------------------------------------------------- sampling


def test_uniform_grid_contains_zero_and_rejects_misaligned():
    g = uniform_grid(-1.0, 1.0, 10)
    assert g.size == 11
    assert 0.0 in g
    assert np.allclose(np.diff(g), 0.2)
    with pytest.raises(ArgumentError):
        uniform_grid(0.5, 1.0, 4)
    with pytest.raises(ArgumentError):
        uniform_grid(-1.0, 1.0, 3)


def test_config_validation():
    with pytest.raises(ArgumentError):
        GaussianSampleConfig(times=np.array([0.0, 0.5, 2.0]))
    with pytest.raises(ArgumentError):
        GaussianSampleConfig(times=np.array([0.5, 1.0, 1.5]))
    with pytest.raises(ArgumentError):
        GaussianSampleConfig(times=uniform_grid(-1, 1, 10), method="fft")
    with pytest.raises(ArgumentError):
        GaussianSampleConfig(times=uniform_grid(-1, 1, 10), dim=0)
    with pytest.raises(ArgumentError):
        GaussianSampleConfig(times=uniform_grid(0, 1, 4200))
    cfg = GaussianSampleConfig(times=uniform_grid(-2, 2, 8), dim=3, seed=11)
    assert cfg.spacing == pytest.approx(0.5)
    assert cfg.times[cfg.zero_index] == 0.0


def test_sample_value_at_zero_is_exactly_zero():
    cfg = GaussianSampleConfig(times=uniform_grid(-1.0, 1.0, 16), dim=2, seed=3)
    vals = sample_gaussian_values(fbm_covariance(0.4), cfg, count=50)
    assert np.all(vals[:, cfg.zero_index, :] == 0.0)
    path = sample_gaussian_path(fbm_covariance(0.4), cfg)
    assert np.all(path.value(0.0) == 0.0)


def test_seed_split_is_reproducible_and_prefix_stable():
    cfg = GaussianSampleConfig(times=uniform_grid(-1.0, 1.0, 8), dim=1, seed=42)
    k = brownian_covariance()
    a = sample_gaussian_values(k, cfg, count=3)
    b = sample_gaussian_values(k, cfg, count=3)
    assert np.array_equal(a, b)
    two = sample_gaussian_values(k, cfg, count=2)
    assert np.array_equal(a[:2], two)
    single = sample_gaussian_path(k, cfg)
    assert np.array_equal(single.values, a[0])
    other = sample_gaussian_values(k, GaussianSampleConfig(times=cfg.times, seed=43), count=1)
    assert not np.array_equal(a[0], other[0])


def test_sample_variance_matches_kernel():
    # Var(B_1) over 10^4 draws within 5 percent of R(1, 1).
    cfg = GaussianSampleConfig(times=uniform_grid(-1.0, 1.0, 8), dim=1, seed=5)
    for h in (0.4, 0.5):
        vals = sample_gaussian_values(fbm_covariance(h), cfg, count=10_000)
        var = float(np.mean(vals[:, -1, 0] ** 2))
        assert abs(var - 1.0) < 0.05


def test_fbm_covariance_monte_carlo_cross_check():
    # Empirical E[B_1 B_2] within 3 standard errors of the closed form.
    cfg = GaussianSampleConfig(times=uniform_grid(0.0, 2.0, 16), dim=1, seed=8)
    vals = sample_gaussian_values(fbm_covariance(0.4), cfg, count=10_000)
    prod = vals[:, 8, 0] * vals[:, 16, 0]
    est = float(np.mean(prod))
    se = float(np.std(prod)) / np.sqrt(len(prod))
    assert abs(est - 0.5 * 2.0 ** 0.8) < 3.0 * se


def test_increment_variance_independent_of_anchor():
    # Stationarity of increments: Var(B_{t0 + h} - B_{t0}) = |h|^{2H} at both anchors.
    h, window = 0.4, 0.5
    cfg = GaussianSampleConfig(times=uniform_grid(-2.0, 3.0, 40), dim=1, seed=13)
    vals = sample_gaussian_values(fbm_covariance(h), cfg, count=10_000)[:, :, 0]
    t = cfg.times
    target = window ** (2 * h)
    observed = []
    for anchor in (-1.0, 2.0):
        i = int(np.argmin(np.abs(t - anchor)))
        j = int(np.argmin(np.abs(t - (anchor + window))))
        inc = vals[:, j] - vals[:, i]
        var = float(np.mean(inc ** 2))
        se = target * np.sqrt(2.0 / (len(inc) - 1))
        assert abs(var - target) < 3.0 * se
        observed.append(var)
    assert abs(observed[0] - observed[1]) < 6.0 * target * np.sqrt(2.0 / 9999)


def test_brownian_disjoint_increments_uncorrelated():
    cfg = GaussianSampleConfig(times=uniform_grid(0.0, 1.0, 8), dim=1, seed=21)
    vals = sample_gaussian_values(brownian_covariance(), cfg, count=2000)[:, :, 0]
    first = vals[:, 4] - vals[:, 0]
    second = vals[:, 8] - vals[:, 4]
    corr = float(np.corrcoef(first, second)[0, 1])
    assert abs(corr) < 3.0 / np.sqrt(2000)


def test_non_psd_kernel_raises_naming_smallest_eigenvalue():
    bad = CovarianceKernel(eval=lambda s, t: -np.abs(t - s), name="bad")
    cfg = GaussianSampleConfig(times=uniform_grid(0.0, 1.0, 8), dim=1, seed=1)
    with pytest.raises(NumericalError) as err:
        sample_gaussian_values(bad, cfg)
    assert err.value.details["smallest_eigenvalue"] < -1e-8


def test_components_are_independent():
    cfg = GaussianSampleConfig(times=uniform_grid(0.0, 1.0, 4), dim=2, seed=30)
    vals = sample_gaussian_values(brownian_covariance(), cfg, count=4000)
    end = vals[:, -1, :]
    corr = float(np.corrcoef(end[:, 0], end[:, 1])[0, 1])
    assert abs(corr) < 3.0 / np.sqrt(4000)


# ---------------------------------------------------------------- rho-variation


def test_rho_var_brownian_unit_square_is_one():
    value = rho_variation_2d(brownian_covariance(), (0.0, 1.0), 1.0, 8)
    assert value == pytest.approx(1.0, abs=1e-12)
    grid = np.linspace(0.0, 1.0, 8)
    oracle = rho_var_2d_exhaustive(brownian_covariance().matrix(grid), 1.0)
    assert value == pytest.approx(oracle, abs=1e-13)


def test_rho_var_matches_exhaustive_oracle_off_origin():
    k = fbm_covariance(0.4)
    square, rho, n = (0.25, 1.5), 1.25, 7
    value = rho_variation_2d(k, square, rho, n)
    oracle = rho_var_2d_exhaustive(k.matrix(np.linspace(*square, n)), rho)
    assert value == pytest.approx(oracle, rel=1e-12)


def test_rho_var_single_cell_is_rectangle_increment():
    k = fbm_covariance(0.3)
    s, t = 0.5, 2.0
    value = rho_variation_2d(k, (s, t), 1.7, 2)
    rect = k.eval(t, t) - 2.0 * k.eval(s, t) + k.eval(s, s)
    assert value == pytest.approx(abs(rect), rel=1e-14)
    # stationary increments make the single cell equal |t - s|^{2H}
    assert value == pytest.approx((t - s) ** 0.6, rel=1e-13)


def test_rho_var_coordinate_ascent_agrees_with_exhaustive():
    for k, rho in ((brownian_covariance(), 1.0), (fbm_covariance(0.4), 1.25)):
        grid = np.linspace(0.0, 1.0, 9)
        cov = k.matrix(grid)
        ascent = _rho_var_ascent(cov, rho) ** (1.0 / rho)
        oracle = rho_var_2d_exhaustive(cov, rho)
        assert ascent <= oracle * (1.0 + 1e-12)
        assert ascent == pytest.approx(oracle, rel=1e-10)


def test_rho_var_monotone_nonincreasing_in_rho():
    k = fbm_covariance(0.4)
    values = [rho_variation_2d(k, (0.0, 1.0), r, 8) for r in (1.0, 1.1, 1.25, 1.5, 2.0)]
    for lo, hi in zip(values[1:], values[:-1]):
        assert lo <= hi * (1.0 + 1e-12)


def test_rho_var_superadditive_over_diagonal_squares():
    k, rho = fbm_covariance(0.4), 1.25
    whole = rho_variation_2d(k, (0.0, 1.0), rho, 9)
    left = rho_variation_2d(k, (0.0, 0.5), rho, 5)
    right = rho_variation_2d(k, (0.5, 1.0), rho, 5)
    assert whole ** rho >= left ** rho + right ** rho - 1e-12


def test_rho_var_guards():
    k = brownian_covariance()
    with pytest.raises(ArgumentError):
        rho_variation_2d(k, (0.0, 1.0), 1.0, 65)
    with pytest.raises(ArgumentError):
        rho_variation_2d(k, (0.0, 1.0), 0.5, 8)
    with pytest.raises(ArgumentError):
        rho_variation_2d(k, (1.0, 1.0), 1.0, 8)


def test_fbm_rho_var_scaling_exponent():
    # Self-similarity: values on [0, side]^2 scale like side^{1/rho}, 1/rho = 2H.
    rho = 1.25
    report = rho_variation_scaling(fbm_covariance(0.4), rho, depth=4, grid_n=9)
    assert abs(report["slope"] - 1.0 / rho) <= 0.15 / rho
    assert report["constant"] > 0.0
    for side, value in zip(report["sides"], report["values"]):
        assert value <= report["constant"] * side ** (1.0 / rho) * (1.0 + 1e-12)


# ---------------------------------------------------------------- dyadic lifts


def test_dyadic_grid_nodes():
    g = dyadic_grid(3, (0.0, 1.0))
    assert np.array_equal(g, np.arange(9) / 8.0)
    g2 = dyadic_grid(2, (-1.0, 1.0))
    assert 0.0 in g2 and g2.size == 9
    with pytest.raises(ArgumentError):
        dyadic_grid(2, (0.1, 1.0))


def test_dyadic_lift_sequence_is_cauchy_for_smooth_path():
    t = np.linspace(0.0, 1.0, 513)
    from roughflow.paths import PiecewiseLinearPath

    x = PiecewiseLinearPath(t, np.column_stack([np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)]))
    lifts = dyadic_lift_sequence(x, levels=[3, 4, 5, 6, 7], level_count=2, p=2.5)
    gaps = [
        homogeneous_pvar_distance(a, b, 2.5) for a, b in zip(lifts[:-1], lifts[1:])
    ]
    assert all(g2 < g1 for g1, g2 in zip(gaps[:-1], gaps[1:]))
    assert gaps[-1] < gaps[0] / 4.0


def test_dyadic_lift_one_dimensional_path_has_no_area():
    t = np.linspace(0.0, 1.0, 65)
    from roughflow.paths import PiecewiseLinearPath

    x = PiecewiseLinearPath(t, np.sin(t))
    for lift in dyadic_lift_sequence(x, levels=[2, 4], level_count=2):
        for i in range(lift.times.size):
            two = lift.points[i].piece(2)
            assert np.array_equal(two, two.T)


def test_dyadic_level_finer_than_data_raises():
    t = np.linspace(0.0, 1.0, 9)
    from roughflow.paths import PiecewiseLinearPath

    x = PiecewiseLinearPath(t, np.sin(t))
    with pytest.raises(ArgumentError):
        dyadic_lift_sequence(x, levels=[5], level_count=2)


def test_dyadic_lifts_satisfy_chen_exactly():
    cfg = GaussianSampleConfig(times=uniform_grid(0.0, 1.0, 64), dim=2, seed=17)
    path = sample_gaussian_path(brownian_covariance(), cfg)
    lift = dyadic_lift_sequence(path, levels=[4], level_count=2, p=2.2)[0]
    assert chen_residual_max(lift) < 1e-13


def test_brownian_area_converges_to_midpoint_stratonovich():
    cfg = GaussianSampleConfig(times=uniform_grid(0.0, 1.0, 256), dim=2, seed=9)
    paths = sample_gaussian_paths(brownian_covariance(), cfg, count=200)

    def area(lift):
        two = lift.point(1.0).piece(2)
        return 0.5 * (two[0, 1] - two[1, 0])

    finest_gap, coarse_gap, oracle_gap = [], [], []
    for path in paths:
        lifts = dyadic_lift_sequence(path, levels=[4, 6, 8], level_count=2, p=2.2)
        a4, a6, a8 = (area(l) for l in lifts)
        b1, b2 = path.values[:, 0], path.values[:, 1]
        oracle = 0.5 * (
            stratonovich_midpoint_integral(b1, b2)
            - stratonovich_midpoint_integral(b2, b1)
        )
        # level 8 is the sampling grid itself: the lift must reproduce the
        # midpoint-rule area to rounding
        assert abs(a8 - oracle) < 1e-12
        coarse_gap.append(abs(a4 - a8))
        finest_gap.append(abs(a6 - a8))
        oracle_gap.append(a4 - oracle)
    assert np.mean(finest_gap) < np.mean(coarse_gap)
    se = np.std(oracle_gap) / np.sqrt(len(oracle_gap))
    assert abs(np.mean(oracle_gap)) < 3.0 * se + 1e-12

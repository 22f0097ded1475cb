import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_dataset
from csv_io import read_csv
from diagnostics import (
    ErrorReport,
    critical_radius,
    ellipsoid_complexity,
    empirical_deviation,
    empirical_norm,
    error_report,
    graph_complexity,
    manifold_bias,
    rate_slope,
    spline_bias,
    write_report_csv,
    x_norm,
)
from estimators import TaskDataset
from penalties import penalty_value, roughness_penalty_spec
from processes import GPSampler, make_kernel, sample_paths
from simdiag import diagonalize
from simgen import GroundTruth, make_scenario
from spline_basis import evaluate, integrate_covariate, make_basis


def test_x_norm_of_coordinate_vectors(brownian_system, demeaned_system):
    assert x_norm(brownian_system, np.zeros(20)) == 0.0
    assert x_norm(brownian_system, np.eye(20)[:, 4]) == pytest.approx(1.0)
    assert x_norm(demeaned_system, np.eye(20)[:, -1]) == 0.0
    assert_allclose(x_norm(brownian_system, np.eye(20)), np.ones(20))


def test_x_norm_under_installed_kernel_matches_quadrature(brownian_system, rng):
    b = rng.standard_normal((20, 3))
    direct = x_norm(brownian_system, b)
    by_quadrature = x_norm(brownian_system, b, kernel=make_kernel("brownian"))
    assert_allclose(direct, by_quadrature, rtol=1e-5)


def test_x_norm_matches_monte_carlo(brownian_system, rng):
    b = rng.standard_normal(20)
    grid = np.linspace(0, 1, 513)
    sampler = GPSampler(brownian_system.kernel, grid=grid, seed=21)
    draws = np.random.default_rng(22)
    total = 0.0
    for _ in range(5):
        design = integrate_covariate(brownian_system.basis, sample_paths(sampler, 10000, rng=draws), grid)
        total += np.sum((design @ b) ** 2)
    assert np.sqrt(total / 50000) == pytest.approx(x_norm(brownian_system, b), rel=0.03)


def test_empirical_norm_with_a_single_observation(rng):
    x = rng.standard_normal((2, 1, 5))
    data = TaskDataset(x=x, y=np.zeros((2, 1)))
    b = rng.standard_normal(5)
    assert empirical_norm(data, 1, b) == pytest.approx(abs(x[1, 0] @ b))
    with pytest.raises(ValueError):
        empirical_norm(data, 2, b)


def test_empirical_deviation_is_nonnegative(small_system, rng):
    data, _ = random_dataset(rng, n_tasks=2, n_obs=40)
    assert empirical_deviation(small_system, data, 0, 1e-3) >= 0.0


def test_ellipsoid_complexity_limits():
    gamma = np.array([0.0, 0.0, 1.0, 16.0, 81.0])
    assert ellipsoid_complexity(gamma, 0.0) == pytest.approx(np.sqrt(5))
    assert ellipsoid_complexity(gamma, 1e12) == pytest.approx(np.sqrt(2), rel=1e-6)
    assert ellipsoid_complexity(gamma, 1.0) < np.sqrt(5)
    with pytest.raises(ValueError):
        ellipsoid_complexity(np.array([-1.0, 2.0]), 1.0)


def test_ellipsoid_complexity_slope_in_the_smoothing_regime():
    gamma = diagonalize(make_basis(400), make_kernel("brownian"), 2).gamma
    etas = np.logspace(-15, -11, 9)
    slope, _ = rate_slope(etas, [ellipsoid_complexity(gamma, eta) for eta in etas])
    assert abs(slope + 1.0 / 12.0) <= 0.02
    assert ellipsoid_complexity(gamma, etas[0]) <= np.sqrt(400)


def test_graph_complexity_limits():
    eigs = np.array([0.0, 1.0, 2.0, 3.0])
    assert graph_complexity(eigs, 0.0) == pytest.approx(2.0)
    assert graph_complexity(eigs, 1e12) == pytest.approx(1.0, rel=1e-6)


def test_critical_radius_without_penalties():
    reduced = critical_radius("reduced", n_obs=100, dof=16, n_tasks=4, rank=4)
    graph = critical_radius("graph", n_obs=100, dof=16, n_tasks=4)
    assert reduced == pytest.approx(np.sqrt(4 * 16 / 100))
    assert graph == pytest.approx(np.sqrt(4 * 16 / 100))
    low = critical_radius("reduced", n_obs=100, dof=16, n_tasks=4, rank=1)
    assert low == pytest.approx((4 + np.sqrt(3)) / 10)


def test_critical_radius_uses_supplied_spectra():
    gamma = np.array([0.0, 0.0, 1.0, 16.0])
    value = critical_radius("graph", n_obs=4, dof=4, n_tasks=3, eta1=1.0, gamma=gamma, omega_eigs=np.zeros(3))
    assert value == pytest.approx(np.sqrt(3) * ellipsoid_complexity(gamma, 1.0) / 2)


def test_critical_radius_validation():
    with pytest.raises(ValueError):
        critical_radius("pooled", n_obs=10, dof=4)
    with pytest.raises(ValueError):
        critical_radius("reduced", n_obs=10, dof=4, n_tasks=3, rank=4)


def test_rate_slope_recovers_power_law():
    ns = np.array([100, 200, 400, 800, 1600])
    slope, stderr = rate_slope(ns, 3.0 * ns**-0.4)
    assert slope == pytest.approx(-0.4)
    assert stderr < 1e-10
    with pytest.raises(ValueError):
        rate_slope(ns[:3], ns[:3] ** -0.5)
    with pytest.raises(ValueError):
        rate_slope(ns, np.r_[0.0, ns[1:] ** -0.5])


def test_error_report_for_exact_fit(brownian_system, rng, tmp_path):
    b = rng.standard_normal((20, 3)) / np.arange(1, 21)[:, None]
    grid = np.linspace(0, 1, 513)
    truth = GroundTruth(grid=grid, beta=(evaluate(brownian_system.basis, grid) @ b).T, b0=b)
    spec = roughness_penalty_spec(brownian_system, 1e-6, 3)
    report = error_report(brownian_system, spec, b, truth)
    assert_allclose(report.x_norm_errs, 0.0, atol=1e-12)
    assert report.penalty_val == pytest.approx(penalty_value(spec, b))
    assert report.combined == pytest.approx(np.sqrt(report.penalty_val) / 3)

    frame, meta = read_csv(write_report_csv([report], tmp_path / "report.csv", {"model": "pooled"}))
    assert meta["model"] == "pooled"
    assert frame["combined"].iloc[0] == pytest.approx(report.combined)
    assert np.isnan(frame["spline_bias"].iloc[0])


def test_error_report_row_fields():
    report = ErrorReport(np.array([0.1, 0.3]), 0.04, 0.3, spline_bias=0.01)
    row = report.to_row()
    assert row["x_err_max"] == 0.3 and row["spline_bias"] == 0.01
    assert np.isnan(row["manifold_bias"])


def test_spline_bias_shrinks_with_more_knots():
    scenario = make_scenario("single_task_smooth")
    kernel = make_kernel("brownian")
    coarse = spline_bias(scenario, diagonalize(make_basis(8), kernel, 2), 1e-12, n_big=4000)
    fine = spline_bias(scenario, diagonalize(make_basis(20), kernel, 2), 1e-12, n_big=4000)
    assert 0 < fine < coarse


def test_manifold_bias_vanishes_at_true_rank(small_system):
    scenario = make_scenario("reduced_rank(2)", n_tasks=5)
    at_truth = manifold_bias(scenario, small_system, 1e-8, rank=2, n_big=2000)
    too_low = manifold_bias(scenario, small_system, 1e-8, rank=1, n_big=2000)
    assert at_truth < 0.1 * too_low

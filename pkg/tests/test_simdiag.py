import numpy as np
import pytest
from numpy.testing import assert_allclose

from csv_io import read_csv
from processes import make_kernel
from simdiag import basis_covariance, diagonalize, gamma_growth_check, refinement_report, write_diag_csv
from spline_basis import evaluate, make_basis


def test_brownian_system_is_diagonal(brownian_system):
    assert brownian_system.pbar == 0
    assert brownian_system.pattern_deviation() < 1e-6
    assert brownian_system.roughness_offdiag() < 1e-8 * brownian_system.gamma.max()


def test_gamma_is_sorted_and_has_polynomial_null_space(brownian_system):
    gamma = brownian_system.gamma
    assert np.all(np.diff(gamma) >= -1e-10 * gamma.max())
    # linear functions carry no roughness
    assert np.all(gamma[:2] < 1e-9 * gamma.max())
    assert gamma[2] > 1e-7 * gamma.max()


def test_demeaned_kernel_leaves_one_null_direction(demeaned_system):
    assert demeaned_system.pbar == 1
    assert demeaned_system.pattern_deviation() < 1e-6
    assert_allclose(np.diag(demeaned_system.sigma_pattern), np.r_[np.ones(19), 0.0])


def test_null_direction_is_the_constant_function(demeaned_system):
    grid = np.linspace(0, 1, 41)
    curve = evaluate(demeaned_system.basis, grid)[:, -1]
    assert np.ptp(curve) < 1e-6 * np.max(np.abs(curve))


def test_covariance_matches_recomputation(brownian_system):
    cov = basis_covariance(brownian_system.basis, brownian_system.kernel)
    assert_allclose(cov, np.eye(20), atol=1e-6)


def test_to_raw_represents_the_same_function(brownian_system, rng):
    b = rng.standard_normal((20, 3))
    grid = np.linspace(0, 1, 23)
    working = evaluate(brownian_system.basis, grid) @ b
    raw = evaluate(brownian_system.basis.raw(), grid) @ brownian_system.to_raw(b)
    assert_allclose(working, raw, atol=1e-8)


def test_derivative_order_must_be_below_spline_order():
    with pytest.raises(ValueError):
        diagonalize(make_basis(10), make_kernel("brownian"), 4)


def test_rediagonalizing_ignores_installed_transform(brownian_system):
    again = diagonalize(brownian_system.basis, make_kernel("brownian"), 2)
    assert_allclose(again.gamma, brownian_system.gamma, rtol=1e-8, atol=1e-8)


def test_growth_check_needs_enough_dof(small_system):
    with pytest.raises(ValueError):
        gamma_growth_check(small_system)


def test_large_basis_diagonalizes():
    system = diagonalize(make_basis(400), make_kernel("brownian"), 2)
    assert system.dof == 400
    assert system.pbar == 0
    assert system.pattern_deviation() < 1e-6
    assert np.all(np.diff(system.gamma) >= 0)


@pytest.mark.slow
def test_gamma_grows_polynomially():
    system = diagonalize(make_basis(40), make_kernel("brownian"), 2)
    assert gamma_growth_check(system) >= 5.0


def test_refinement_report_columns():
    report = refinement_report(make_basis(8), make_kernel("brownian"), 2, grids=(129, 257, 513))
    assert list(report["n_grid"]) == [129, 257, 513]
    assert np.isnan(report["sigma_change"].iloc[0])
    assert report["sigma_change"].iloc[-1] < 1e-3
    assert (report["pbar"] == 0).all()


def test_write_diag_csv_round_trip(demeaned_system, tmp_path):
    path = write_diag_csv(demeaned_system, tmp_path / "diag.csv", {"K": 20})
    frame, meta = read_csv(path)
    assert meta["pbar"] == "1" and meta["K"] == "20"
    assert_allclose(frame["gamma"], demeaned_system.gamma, rtol=1e-12)
    assert frame["null_block"].tolist() == [False] * 19 + [True]

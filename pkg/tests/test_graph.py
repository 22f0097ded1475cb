import math

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from csv_io import read_csv
from graph import (
    bandwidth_rule,
    build_laplacian,
    dirichlet_form,
    dirichlet_pairs,
    kernel_constants,
    laplacian_from_weights,
    load_weights_csv,
    sample_manifold,
    spectral_growth,
    write_eigs_csv,
)


@pytest.fixture(scope="module")
def sphere_graph():
    return build_laplacian(sample_manifold("sphere", 300, seed=4, mu=2))


@pytest.mark.parametrize(
    "manifold, mu, width",
    [("sphere", 2, 3), ("sphere", 3, 4), ("torus", 2, 4), ("euclidean_cube", 2, 2)],
)
def test_sample_shapes(manifold, mu, width):
    sample = sample_manifold(manifold, 50, seed=1, mu=mu)
    assert sample.points.shape == (50, width)
    assert sample.intrinsic_dim == mu


def test_sphere_points_have_unit_norm():
    points = sample_manifold("sphere", 100, seed=2).points
    assert_allclose(np.linalg.norm(points, axis=1), 1.0, rtol=1e-12)


def test_sampling_validation():
    with pytest.raises(ValueError):
        sample_manifold("klein_bottle", 10, seed=0)
    with pytest.raises(ValueError):
        sample_manifold("sphere", 1, seed=0)
    with pytest.raises(ValueError):
        sample_manifold("sphere", 10, seed=0, mu=0)


def test_one_dimensional_kernel_constants():
    norm_const, sigma_g = kernel_constants("exp_trunc", 1)
    expected = 1.0 / (2.0 * (1.0 - math.exp(-1.0)))
    assert norm_const == pytest.approx(expected, rel=1e-10)
    assert sigma_g == pytest.approx(expected * 2.0 * (2.0 - 5.0 * math.exp(-1.0)), rel=1e-10)
    with pytest.raises(ValueError):
        kernel_constants("gaussian", 3)


def test_bandwidth_rule_exponents():
    assert bandwidth_rule(100, 2, scale=1.0) == pytest.approx(math.log(100) ** 0.85 / 10.0)
    assert bandwidth_rule(1000, 3, scale=1.0) == pytest.approx(math.log(1000) ** (1 / 3 + 0.1) / 10.0)


def test_laplacian_is_symmetric_psd_with_zero_row_sums(sphere_graph):
    omega = sphere_graph.omega
    assert_allclose(omega, omega.T, atol=1e-12)
    assert np.max(np.abs(omega.sum(axis=1))) < 1e-10 * np.max(np.abs(omega))
    eigs = np.linalg.eigvalsh(omega)
    assert eigs[0] > -1e-9 * eigs[-1]
    assert np.all(sphere_graph.weights >= 0)


def test_dirichlet_form_equals_pair_sum(sphere_graph, rng):
    f = rng.standard_normal(sphere_graph.n_tasks)
    assert dirichlet_form(sphere_graph, f) == pytest.approx(dirichlet_pairs(sphere_graph, f), rel=1e-10)
    assert dirichlet_form(sphere_graph, np.ones(sphere_graph.n_tasks)) == pytest.approx(0.0, abs=1e-8)


def test_tiny_bandwidth_warns_about_components():
    sample = sample_manifold("sphere", 60, seed=3)
    with pytest.warns(RuntimeWarning):
        lap = build_laplacian(sample, h=1e-3)
    assert lap.n_components() == 60


def test_build_laplacian_rejects_bad_bandwidth():
    with pytest.raises(ValueError):
        build_laplacian(sample_manifold("sphere", 10, seed=0), h=-0.1)


def test_fixed_weights(rng):
    w = np.zeros((6, 6))
    w[:3, :3] = 1.0
    w[3:, 3:] = 2.0
    np.fill_diagonal(w, 0.0)
    lap = laplacian_from_weights(w)
    assert lap.n_components() == 2
    assert_allclose(lap.degree, [2, 2, 2, 4, 4, 4])
    with pytest.raises(ValueError):
        laplacian_from_weights(w - 3.0)
    asym = w.copy()
    asym[0, 1] = 5.0
    with pytest.raises(ValueError):
        laplacian_from_weights(asym)


def test_weights_csv_round_trip(tmp_path, rng):
    w = rng.uniform(0, 1, (5, 5))
    w = (w + w.T) / 2
    pd.DataFrame(w).to_csv(tmp_path / "w.csv", header=False, index=False)
    lap = load_weights_csv(tmp_path / "w.csv")
    assert_allclose(lap.weights, w, rtol=1e-12)


def test_spectral_growth_validation(sphere_graph):
    with pytest.raises(ValueError):
        spectral_growth(sphere_graph, m_lo=3)
    with pytest.raises(ValueError):
        spectral_growth(sphere_graph, m_hi=301)


def test_eigs_csv(sphere_graph, tmp_path):
    eigs, _ = spectral_growth(sphere_graph, m_hi=40)
    frame, meta = read_csv(write_eigs_csv(eigs, tmp_path / "eigs.csv", {"manifold": "sphere"}))
    assert meta == {"manifold": "sphere"}
    assert list(frame["m"]) == list(range(1, 41))
    assert np.all(np.diff(frame["lambda"]) >= -1e-10)


@pytest.mark.slow
@pytest.mark.parametrize("mu", [2, 3])
def test_spectrum_follows_weyl_growth(mu):
    lap = build_laplacian(sample_manifold("sphere", 2000, seed=10 + mu, mu=mu))
    _, slope = spectral_growth(lap, m_lo=5, m_hi=100)
    assert abs(slope - 2.0 / mu) < 0.4

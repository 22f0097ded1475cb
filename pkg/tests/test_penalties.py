import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_dataset
from graph import laplacian_from_weights
from penalties import (
    PenaltySpec,
    PenaltyTerm,
    graph_penalty_functional,
    graph_penalty_spec,
    pairwise_difference_sum,
    penalty_apply,
    penalty_gradient,
    penalty_matrix,
    penalty_value,
    pooled_covariance,
    q_norm,
    roughness_penalty_spec,
)


def _psd(rng, n, rank=None):
    a = rng.standard_normal((n, rank or n))
    return a @ a.T


def _random_weights(rng, m):
    w = rng.uniform(0, 1, (m, m)) * (rng.uniform(0, 1, (m, m)) < 0.6)
    w = (w + w.T) / 2.0
    np.fill_diagonal(w, 0.0)
    return w


def test_value_matches_kronecker_form(rng):
    for _ in range(100):
        k, m = rng.integers(2, 9), rng.integers(2, 7)
        terms = tuple(
            PenaltyTerm(eta=float(rng.uniform(0, 3)), pi1=_psd(rng, k), pi2=_psd(rng, m, rank=1 + j))
            for j in range(rng.integers(1, 4))
        )
        spec = PenaltySpec(terms=terms)
        b = rng.standard_normal((k, m))
        vec = b.reshape(-1, order="F")
        kron_value = vec @ penalty_matrix(spec) @ vec
        assert abs(penalty_value(spec, b) - kron_value) <= 1e-10 * max(1.0, abs(kron_value))


def test_apply_matches_kronecker_matvec(rng):
    spec = PenaltySpec(terms=(PenaltyTerm(eta=0.7, pi1=_psd(rng, 5), pi2=_psd(rng, 3)),))
    b = rng.standard_normal((5, 3))
    expected = penalty_matrix(spec) @ b.reshape(-1, order="F")
    assert_allclose(penalty_apply(spec, b).reshape(-1, order="F"), expected, rtol=1e-12, atol=1e-12)


def test_pairwise_sum_equals_laplacian_trace(rng):
    for _ in range(20):
        k, m = 4, 7
        w = _random_weights(rng, m)
        omega = np.diag(w.sum(axis=1)) - w
        metric = _psd(rng, k)
        b = rng.standard_normal((k, m))
        trace = np.trace(b.T @ metric @ b @ omega)
        assert abs(pairwise_difference_sum(w, b, metric) - trace) <= 1e-10 * max(1.0, abs(trace))


def test_graph_spec_agrees_with_functional_form(small_system, rng):
    data, _ = random_dataset(rng, n_tasks=6, n_obs=40, dof=8)
    w = _random_weights(rng, 6)
    lap = laplacian_from_weights(w)
    b = rng.standard_normal((8, 6))
    spec = graph_penalty_spec(small_system, lap, pooled_covariance(data), 0.3, 1.7)
    assert spec.etas == pytest.approx((0.3, 1.7, 0.51))
    functional = graph_penalty_functional(small_system, w, data, b, 0.3, 1.7)
    assert_allclose(functional, penalty_value(spec, b), rtol=1e-6)


def test_gradient_matches_central_differences(small_system, rng):
    data, _ = random_dataset(rng, n_tasks=5, n_obs=30, dof=8)
    lap = laplacian_from_weights(_random_weights(rng, 5))
    spec = graph_penalty_spec(small_system, lap, pooled_covariance(data), 1e-3, 0.5)
    b = rng.standard_normal((8, 5))
    step = 1e-6
    numeric = np.zeros_like(b)
    for idx in np.ndindex(b.shape):
        e = np.zeros_like(b)
        e[idx] = step
        numeric[idx] = (penalty_value(spec, b + e) - penalty_value(spec, b - e)) / (2 * step)
    grad = penalty_gradient(spec, b)
    assert_allclose(grad, numeric, rtol=1e-5, atol=1e-6 * np.max(np.abs(grad)))


def test_q_norm_adds_penalty_to_euclidean(brownian_system, rng):
    spec = roughness_penalty_spec(brownian_system, 1e-4, 3)
    b = rng.standard_normal((20, 3))
    expected = np.sqrt(np.sum(b**2) + 1e-4 * np.sum(brownian_system.gamma[:, None] * b**2))
    assert q_norm(spec, b) == pytest.approx(expected, rel=1e-12)


def test_pooled_covariance_averages_tasks(rng):
    data, _ = random_dataset(rng, n_tasks=3, n_obs=10, dof=4)
    flat = data.x.reshape(-1, 4)
    assert_allclose(pooled_covariance(data), flat.T @ flat / 30, rtol=1e-12)


def test_spec_validation(rng):
    good = _psd(rng, 3)
    with pytest.raises(ValueError):
        PenaltySpec(terms=())
    with pytest.raises(ValueError):
        PenaltySpec(terms=(PenaltyTerm(eta=-1.0, pi1=good, pi2=np.eye(2)),))
    with pytest.raises(ValueError):
        PenaltySpec(terms=(PenaltyTerm(eta=1.0, pi1=good + np.triu(np.ones((3, 3)), 1), pi2=np.eye(2)),))
    with pytest.raises(ValueError):
        PenaltySpec(terms=(PenaltyTerm(eta=1.0, pi1=-np.eye(3), pi2=np.eye(2)),))
    with pytest.raises(ValueError):
        PenaltySpec(
            terms=(
                PenaltyTerm(eta=1.0, pi1=good, pi2=np.eye(2)),
                PenaltyTerm(eta=1.0, pi1=np.eye(4), pi2=np.eye(2)),
            )
        )
    spec = PenaltySpec(terms=(PenaltyTerm(eta=1.0, pi1=good, pi2=np.eye(2)),))
    with pytest.raises(ValueError):
        penalty_value(spec, np.ones((2, 3)))


def test_graph_spec_rejects_non_laplacian(small_system, rng):
    data, _ = random_dataset(rng, n_tasks=4, n_obs=20, dof=8)
    with pytest.raises(ValueError):
        graph_penalty_spec(small_system, np.eye(4), pooled_covariance(data), 1.0, 1.0)


def test_kronecker_form_refused_when_large(brownian_system):
    spec = roughness_penalty_spec(brownian_system, 1.0, 13)
    with pytest.raises(ValueError):
        penalty_matrix(spec)

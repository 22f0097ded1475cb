import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import ConfigError
from estimators import LossKind
from simgen import Scenario, _responses, generate, ground_truth, make_scenario


def test_preset_parameters_are_parsed():
    assert make_scenario("reduced_rank(3)").rank_true == 3
    assert make_scenario("graph_sphere(3)").mu == 3
    single = make_scenario("single_task_smooth", n_obs=64)
    assert (single.n_tasks, single.n_obs) == (1, 64)


@pytest.mark.parametrize("preset", ["single_task_smooth(2)", "spiral", "reduced_rank(x)"])
def test_bad_presets_raise(preset):
    with pytest.raises(ConfigError):
        make_scenario(preset)


def test_scenario_validation():
    with pytest.raises(ConfigError):
        make_scenario("reduced_rank", rank_true=30)
    with pytest.raises(ConfigError):
        make_scenario("single_task_smooth", noise_sd=-1.0)
    with pytest.raises(ConfigError):
        make_scenario("graph_sphere", n_tasks=1)
    with pytest.raises(ConfigError):
        Scenario.from_dict({"preset": "single_task_smooth", "colour": "red"})
    with pytest.raises(ConfigError):
        Scenario.from_dict({"preset": "single_task_smooth", "kernel": {"kind": "matern"}})


def test_scenario_dict_round_trip():
    scenario = make_scenario("reduced_rank(2)", loss=LossKind(kind="quantile", w=0.25), seed=9)
    again = Scenario.from_dict(scenario.to_dict())
    assert again.to_dict() == scenario.to_dict()
    moved = scenario.replace(n_obs=17)
    assert moved.n_obs == 17 and moved.seed == 9 and moved.loss.w == 0.25


def test_reduced_rank_truth_has_the_requested_rank(brownian_system):
    truth = ground_truth(make_scenario("reduced_rank(2)", n_tasks=6), brownian_system)
    sv = np.linalg.svd(truth.b0, compute_uv=False)
    assert sv[2] < 1e-10 * sv[0]
    assert truth.loadings.shape == (6, 2)
    assert truth.beta.shape == (6, 512)


def test_graph_truth_carries_auxiliary_sample(small_system):
    truth = ground_truth(make_scenario("graph_sphere", n_tasks=12), small_system)
    assert truth.aux.points.shape == (12, 3)
    assert truth.b0.shape == (8, 12)


def test_truth_depends_only_on_truth_seed(small_system):
    a = ground_truth(make_scenario("reduced_rank(2)", n_tasks=4, seed=1), small_system)
    b = ground_truth(make_scenario("reduced_rank(2)", n_tasks=4, seed=2), small_system)
    c = ground_truth(make_scenario("reduced_rank(2)", n_tasks=4, truth_seed=5), small_system)
    assert_allclose(a.b0, b.b0, rtol=0, atol=0)
    assert not np.allclose(a.b0, c.b0)


def test_generation_is_deterministic(small_system):
    scenario = make_scenario("reduced_rank(2)", n_tasks=3, n_obs=20, seed=4)
    first, _ = generate(scenario, small_system)
    second, _ = generate(scenario, small_system)
    other, _ = generate(scenario.replace(seed=5), small_system)
    assert_allclose(first.x, second.x, rtol=0, atol=0)
    assert_allclose(first.y, second.y, rtol=0, atol=0)
    assert not np.allclose(first.x, other.x)


def test_noiseless_responses_match_projected_truth(brownian_system):
    scenario = make_scenario("single_task_smooth", n_obs=200, noise_sd=0.0)
    data, truth = generate(scenario, brownian_system, intercept_mode="fitted")
    assert data.fits_intercept
    assert data.x.shape == (1, 200, 20)
    residual = data.y[0] - data.x[0] @ truth.b0[:, 0]
    assert np.max(np.abs(residual)) < 0.02 * np.std(data.y[0])


def test_logistic_scenario_produces_labels(small_system):
    scenario = make_scenario("single_task_smooth", n_obs=50, loss=LossKind(kind="logistic"))
    data, _ = generate(scenario, small_system)
    assert set(np.unique(data.y)) <= {0.0, 1.0}
    assert data.loss.kind == "logistic"


def test_quantile_noise_has_zero_quantile_at_level():
    scenario = make_scenario("single_task_smooth", noise_sd=1.0, loss=LossKind(kind="quantile", w=0.3))
    y = _responses(scenario, np.zeros((1, 40000)), np.random.default_rng(8))
    assert abs(np.mean(y < 0) - 0.3) < 0.015

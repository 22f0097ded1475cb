"""Synthetic multi-task scenarios: true slope surfaces, covariate paths and responses."""

import logging
import re
from dataclasses import dataclass, field, fields

import numpy as np
from scipy import special, stats

from errors import ConfigError
from estimators import LossKind, TaskDataset
from graph import sample_manifold
from processes import GPSampler, make_kernel, kernel_from_dict, sample_paths
from spline_basis import integrate_covariate, project_function, trapezoid_weights

logger = logging.getLogger(__name__)

PRESETS = ("single_task_smooth", "reduced_rank", "graph_sphere")

PRESET_DEFAULTS = {
    "single_task_smooth": {"n_tasks": 1, "n_obs": 256, "noise_sd": 0.5},
    "reduced_rank": {"n_tasks": 20, "n_obs": 100, "noise_sd": 0.5, "rank_true": 2},
    "graph_sphere": {"n_tasks": 100, "n_obs": 64, "noise_sd": 0.5, "mu": 2},
}

_PRESET_CALL = re.compile(r"^(\w+)\((\d+)\)$")


@dataclass(eq=False)
class Scenario:
    """A data-generating setting. ``seed`` drives paths and noise, ``truth_seed`` the true surface."""

    preset: str
    kernel: object = field(default_factory=lambda: make_kernel("brownian"))
    n_tasks: int = 1
    n_obs: int = 256
    noise_sd: float = 0.5
    loss: LossKind = field(default_factory=LossKind)
    rank_true: int | None = None
    mu: int = 2
    manifold: str = "sphere"
    seed: int = 0
    truth_seed: int = 0
    sampler_grid: int = 512

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        if self.n_tasks < 1 or self.n_obs < 1:
            raise ConfigError(f"need n_tasks >= 1 and n_obs >= 1, got {self.n_tasks}, {self.n_obs}")
        if self.noise_sd < 0:
            raise ConfigError(f"noise_sd must be nonnegative, got {self.noise_sd}")
        if self.preset == "reduced_rank":
            if self.rank_true is None or not 1 <= self.rank_true <= self.n_tasks:
                raise ConfigError(f"rank_true must lie in [1, n_tasks={self.n_tasks}], got {self.rank_true}")
        if self.preset == "graph_sphere" and self.n_tasks < 2:
            raise ConfigError("graph scenarios need at least two tasks")

    def replace(self, **changes):
        return Scenario.from_dict({**self.to_dict(), **changes})

    def to_dict(self):
        return {
            "preset": self.preset,
            "kernel": self.kernel.to_dict(),
            "n_tasks": self.n_tasks,
            "n_obs": self.n_obs,
            "noise_sd": self.noise_sd,
            "loss": self.loss.to_dict(),
            "rank_true": self.rank_true,
            "mu": self.mu,
            "manifold": self.manifold,
            "seed": self.seed,
            "truth_seed": self.truth_seed,
            "sampler_grid": self.sampler_grid,
        }

    @classmethod
    def from_dict(cls, payload):
        payload = dict(payload)
        unknown = set(payload) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        try:
            if isinstance(payload.get("kernel"), dict):
                payload["kernel"] = kernel_from_dict(payload["kernel"])
            if isinstance(payload.get("loss"), dict):
                payload["loss"] = LossKind(**payload["loss"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc
        return cls(**payload)


@dataclass(eq=False)
class GroundTruth:
    """True surface on the sampler grid (M x G), its spline projection b0 (K x M) and auxiliary data."""

    grid: np.ndarray
    beta: np.ndarray
    b0: np.ndarray
    aux: object = None
    loadings: np.ndarray | None = None


def make_scenario(preset, **overrides):
    """Preset scenario; ``preset`` may carry its parameter as in ``reduced_rank(2)`` or ``graph_sphere(3)``."""
    match = _PRESET_CALL.match(preset)
    if match:
        preset, arg = match.group(1), int(match.group(2))
        key = {"reduced_rank": "rank_true", "graph_sphere": "mu"}.get(preset)
        if key is None:
            raise ConfigError(f"preset {preset!r} takes no parameter")
        overrides.setdefault(key, arg)
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    return Scenario.from_dict({"preset": preset, **PRESET_DEFAULTS[preset], **overrides})


def _truth_streams(scenario):
    return np.random.SeedSequence([scenario.truth_seed, 7919]).spawn(2)


def _psi(t, r):
    """Smooth rank-one profiles for the reduced-rank surfaces."""
    return np.sqrt(2.0) * np.sin(np.pi * r * t + 0.5 * r)


def true_surface(scenario):
    """Callable t -> (M, len(t)) true slopes, with the auxiliary sample and loadings."""
    m_tasks = scenario.n_tasks
    loadings, aux = None, None

    if scenario.preset == "single_task_smooth":
        def beta(t):
            t = np.asarray(t, dtype=float)
            row = np.sin(2 * np.pi * t) + 0.5 * np.cos(4 * np.pi * t)
            return np.tile(row, (m_tasks, 1))

    elif scenario.preset == "reduced_rank":
        load_stream = _truth_streams(scenario)[0]
        loadings = np.random.default_rng(load_stream).standard_normal((m_tasks, scenario.rank_true))

        def beta(t):
            t = np.asarray(t, dtype=float)
            profiles = np.array([_psi(t, r) for r in range(1, scenario.rank_true + 1)])
            return loadings @ profiles

    else:
        aux_stream = _truth_streams(scenario)[1]
        aux_seed = int(aux_stream.generate_state(1)[0])
        aux = sample_manifold(scenario.manifold, m_tasks, aux_seed, mu=scenario.mu)
        s = aux.points

        def beta(t):
            t = np.asarray(t, dtype=float)
            return np.outer(1.0 + s[:, 0], np.sin(2 * np.pi * t)) + np.outer(s[:, 1], np.cos(2 * np.pi * t))

    return beta, aux, loadings


def ground_truth(scenario, system):
    beta, aux, loadings = true_surface(scenario)
    grid = np.linspace(0.0, 1.0, scenario.sampler_grid)
    b0 = np.column_stack(
        [project_function(system.basis, lambda t, m=m: beta(t)[m]) for m in range(scenario.n_tasks)]
    )
    return GroundTruth(grid=grid, beta=beta(grid), b0=b0, aux=aux, loadings=loadings)


def _responses(scenario, u, rng):
    loss = scenario.loss
    if loss.kind == "squared":
        return u + scenario.noise_sd * rng.standard_normal(u.shape)
    if loss.kind == "logistic":
        return rng.binomial(1, special.expit(u)).astype(float)
    # Student-t(4) noise shifted so that its w-quantile is zero
    noise = rng.standard_t(4, size=u.shape) - stats.t.ppf(loss.w, 4)
    return u + scenario.noise_sd * noise


def generate(scenario, system, intercept_mode="none"):
    """Sample a TaskDataset from ``scenario`` with designs in the installed basis.

    Linear predictors are formed from the true surface on the sampler grid,
    not from its spline projection.
    """
    truth = ground_truth(scenario, system)
    grid, weights = truth.grid, trapezoid_weights(truth.grid)
    path_stream, noise_stream = np.random.SeedSequence([scenario.seed, 104729]).spawn(2)
    path_rng = np.random.default_rng(path_stream)
    noise_rng = np.random.default_rng(noise_stream)
    sampler = GPSampler(scenario.kernel, grid=grid, seed=scenario.seed)

    m_tasks, n_obs = scenario.n_tasks, scenario.n_obs
    x = np.empty((m_tasks, n_obs, system.dof))
    u = np.empty((m_tasks, n_obs))
    for m in range(m_tasks):
        paths = sample_paths(sampler, n_obs, rng=path_rng)
        x[m] = integrate_covariate(system.basis, paths, grid)
        u[m] = paths @ (weights * truth.beta[m])

    y = _responses(scenario, u, noise_rng)
    data = TaskDataset(x=x, y=y, intercept_mode=intercept_mode, loss=scenario.loss)
    logger.info(
        "Successfully generated %s data: M=%d, N=%d, K=%d (seed %d)",
        scenario.preset, m_tasks, n_obs, system.dof, scenario.seed,
    )
    return data, truth

"""Error functionals, complexity proxies and critical radii used to predict and check rates."""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from csv_io import write_csv
from estimators import fit_graph, fit_pooled, fit_reduced
from penalties import graph_penalty_spec, penalty_value, pooled_covariance, roughness_penalty_spec
from processes import x_norm_of_function
from simdiag import basis_covariance
from simgen import generate
from spline_basis import evaluate

logger = logging.getLogger(__name__)

CRITICAL_MODELS = ("reduced", "graph")
POPULATION_N = 20000


@dataclass(frozen=True, eq=False)
class ErrorReport:
    x_norm_errs: np.ndarray
    penalty_val: float
    combined: float
    spline_bias: float | None = None
    manifold_bias: float | None = None

    def to_row(self):
        return {
            "combined": self.combined,
            "x_err_mean": float(np.mean(self.x_norm_errs)),
            "x_err_max": float(np.max(self.x_norm_errs)),
            "penalty": self.penalty_val,
            "spline_bias": np.nan if self.spline_bias is None else self.spline_bias,
            "manifold_bias": np.nan if self.manifold_bias is None else self.manifold_bias,
        }


def x_norm(system, b, kernel=None):
    """Prediction semi-norm of spline coefficients; one value per column of a K x M array.

    Under the installed kernel this is the Euclidean norm on the leading
    K - pbar coordinates. Another ``kernel`` is handled by quadrature.
    """
    b = np.asarray(b, dtype=float)
    if kernel is None or kernel is system.kernel:
        pattern = np.diag(system.sigma_pattern)
        quad = np.einsum("k,k...->...", pattern, b**2)
    else:
        cov = basis_covariance(system.basis, kernel)
        quad = np.einsum("k...,kl,l...->...", b, cov, b)
    return np.sqrt(np.maximum(quad, 0.0))


def gamma_norm(system, b):
    b = np.asarray(b, dtype=float)
    return np.sqrt(np.einsum("k,k...->...", system.gamma, b**2))


def function_x_errors(system, b, beta_values, grid):
    """X-norm distance between each fitted curve phi' b_m and a true curve sampled on ``grid``."""
    fitted = (evaluate(system.basis, grid) @ np.asarray(b, dtype=float)).T
    return x_norm_of_function(system.kernel, fitted - np.asarray(beta_values, dtype=float), grid)


def empirical_norm(data, m, b):
    if not 0 <= m < data.n_tasks:
        raise ValueError(f"task index {m} out of range for {data.n_tasks} tasks")
    return float(np.sqrt(np.mean((data.x[m] @ np.asarray(b, dtype=float)) ** 2)))


def empirical_deviation(system, data, m, eta1, n_draws=200, rng=None):
    """sup over random b of |N-norm^2 - X-norm^2| / (X-norm^2 + eta1 Gamma-norm^2)."""
    rng = np.random.default_rng(0) if rng is None else rng
    draws = rng.standard_normal((system.dof, n_draws))
    emp = np.mean((data.x[m] @ draws) ** 2, axis=0)
    pop = x_norm(system, draws) ** 2
    scale = pop + eta1 * gamma_norm(system, draws) ** 2
    return float(np.max(np.abs(emp - pop) / scale))


def ellipsoid_complexity(gamma, eta1):
    """(sum_k 1 / (1 + eta1 gamma_k))^(1/2)."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise ValueError("roughness eigenvalues must be nonnegative")
    return float(np.sqrt(np.sum(1.0 / (1.0 + eta1 * gamma))))


def graph_complexity(omega_eigs, eta2):
    """(sum_m 1 / (1 + eta2 lambda_m))^(1/2) from Laplacian eigenvalues."""
    eigs = np.clip(np.asarray(omega_eigs, dtype=float), 0.0, None)
    return float(np.sqrt(np.sum(1.0 / (1.0 + eta2 * eigs))))


def _spline_factor(dof, eta1, q, d, gamma):
    if gamma is not None:
        return ellipsoid_complexity(gamma, eta1)
    if eta1 <= 0:
        return np.sqrt(dof)
    return min(np.sqrt(dof), eta1 ** (-1.0 / (4 * d + 4 * q)))


def critical_radius(model, *, n_obs, dof, n_tasks=1, rank=None, eta1=0.0, eta2=0.0, q=1, d=2, mu=2,
                    gamma=None, omega_eigs=None):
    """Critical-radius proxy up to constants.

    reduced: sqrt(R) (min(sqrt K, eta1^(-1/(4d+4q))) + sqrt(M - R)) / sqrt(N)
    graph:   min(sqrt M, eta2^(-mu/4)) min(sqrt K, eta1^(-1/(4d+4q))) / sqrt(N)

    Supplying ``gamma`` or ``omega_eigs`` replaces the closed-form factors by
    the ellipsoid sums over the actual spectra.
    """
    if model not in CRITICAL_MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {CRITICAL_MODELS}")
    spline = _spline_factor(dof, eta1, q, d, gamma)
    if model == "reduced":
        rank = n_tasks if rank is None else rank
        if not 1 <= rank <= n_tasks:
            raise ValueError(f"rank {rank} must lie in [1, M={n_tasks}]")
        return float(np.sqrt(rank) * (spline + np.sqrt(n_tasks - rank)) / np.sqrt(n_obs))

    if omega_eigs is not None:
        graph = graph_complexity(omega_eigs, eta2)
    elif eta2 <= 0:
        graph = np.sqrt(n_tasks)
    else:
        graph = min(np.sqrt(n_tasks), eta2 ** (-mu / 4.0))
    return float(graph * spline / np.sqrt(n_obs))


def rate_slope(ns, errs):
    """Least-squares slope of log err on log n with its standard error."""
    ns = np.asarray(ns, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if ns.size != errs.size or ns.size < 4:
        raise ValueError(f"need at least four (n, err) pairs, got {ns.size}")
    if np.any(ns <= 0) or np.any(errs <= 0):
        raise ValueError("sample sizes and errors must be positive")
    fit = stats.linregress(np.log(ns), np.log(errs))
    return float(fit.slope), float(fit.stderr)


def error_report(system, spec, b, truth, spline_bias=None, manifold_bias=None):
    """Per-task X-norm errors against the true surface and (1/M)(sum err + P^(1/2))."""
    errs = function_x_errors(system, b, truth.beta, truth.grid)
    pen = penalty_value(spec, b)
    combined = (float(np.sum(errs)) + np.sqrt(pen)) / errs.size
    return ErrorReport(
        x_norm_errs=errs,
        penalty_val=pen,
        combined=float(combined),
        spline_bias=spline_bias,
        manifold_bias=manifold_bias,
    )


def _population_data(scenario, system, n_big):
    big = scenario.replace(n_obs=n_big, noise_sd=0.0 if scenario.loss.kind == "squared" else scenario.noise_sd)
    return generate(big, system)


def _population_fit(data, system, eta1, rank=None, lap=None, eta2=0.0):
    if rank is not None:
        return fit_reduced(data, system, eta1, rank).b
    if lap is not None:
        return fit_graph(data, system, lap, eta1, eta2).b
    return fit_pooled(data, system, eta1).b


def spline_bias(scenario, system, eta1, n_big=POPULATION_N, lap=None, eta2=0.0):
    """Spline approximation bias (sum ||beta0bar - beta0||_X^2 + P(beta0bar))^(1/2) from one large fit."""
    data, truth = _population_data(scenario, system, n_big)
    b_bar = _population_fit(data, system, eta1, lap=lap, eta2=eta2)
    if lap is None:
        spec = roughness_penalty_spec(system, eta1, data.n_tasks)
    else:
        spec = graph_penalty_spec(system, lap, pooled_covariance(data), eta1, eta2)
    errs = function_x_errors(system, b_bar, truth.beta, truth.grid)
    value = float(np.sqrt(np.sum(errs**2) + penalty_value(spec, b_bar)))
    logger.info("Spline bias at K=%d, eta1=%.3e: %.4e", system.dof, eta1, value)
    return value


def manifold_bias(scenario, system, eta1, rank, n_big=POPULATION_N):
    """Rank-constraint bias (sum ||beta0bar - betabar||_X^2 + P(beta0bar - betabar))^(1/2)."""
    data, _ = _population_data(scenario, system, n_big)
    spec = roughness_penalty_spec(system, eta1, data.n_tasks)
    diff = _population_fit(data, system, eta1) - _population_fit(data, system, eta1, rank=rank)
    value = float(np.sqrt(np.sum(x_norm(system, diff) ** 2) + penalty_value(spec, diff)))
    logger.info("Manifold bias at rank %d: %.4e", rank, value)
    return value


def write_report_csv(reports, path, metadata=None):
    frame = pd.DataFrame([r.to_row() if isinstance(r, ErrorReport) else r for r in reports])
    return write_csv(frame, path, metadata)

"""Covariance kernels of functional covariates, their spectra, and Gaussian path sampling."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from errors import CholeskyError
from spline_basis import trapezoid_weights

logger = logging.getLogger(__name__)

DEFAULT_SAMPLER_GRID = 512

JITTER_LADDER = (0.0, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)

# kind -> (declared eigen decay q, declared null dimension p, default parameters)
# brownian declares p = 1 but Var(int x phi) has no null direction, so simdiag finds pbar = 0;
# brownian_demeaned is the kernel whose covariance matrix really loses one direction
KERNEL_KINDS = {
    "brownian": (1, 1, {}),
    "brownian_shifted": (1, 0, {"a": 1.0, "b": 1.0}),
    "ornstein_uhlenbeck": (1, 0, {"c1": 1.0, "c2": 1.0}),
    "brownian_bridge": (1, 2, {}),
    "iterated_brownian": (None, None, {"q": 2}),
    "sobolev": (None, 0, {"q": 1, "coefs": None}),
    "two_sided_brownian": (1, 0, {}),
    "brownian_demeaned": (1, 1, {}),
}


@dataclass(frozen=True)
class CovKernel:
    kind: str
    eigen_decay_q: int
    null_dim_p: int
    params: dict = field(default_factory=dict)

    def to_dict(self):
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params.items()}
        return {"kind": self.kind, **params}


def make_kernel(kind, **params):
    """Build a covariance kernel with its declared (q, p) pair."""
    if kind not in KERNEL_KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}; expected one of {sorted(KERNEL_KINDS)}")
    q, p, defaults = KERNEL_KINDS[kind]
    unknown = set(params) - set(defaults)
    if unknown:
        raise ValueError(f"unknown parameters for {kind}: {sorted(unknown)}")
    merged = {**defaults, **params}

    if kind in ("iterated_brownian", "sobolev"):
        order = int(merged["q"])
        if order < 1:
            raise ValueError(f"{kind} needs q >= 1, got {order}")
        merged["q"] = order
        q = order
        if kind == "iterated_brownian":
            p = order
        else:
            coefs = merged["coefs"]
            coefs = (1.0,) * (order + 1) if coefs is None else tuple(float(c) for c in coefs)
            if len(coefs) != order + 1 or any(c <= 0 for c in coefs):
                raise ValueError(f"sobolev(q={order}) needs {order + 1} positive constants c_0..c_q")
            merged["coefs"] = coefs
    if kind == "ornstein_uhlenbeck" and (merged["c1"] <= 0 or merged["c2"] <= 0):
        raise ValueError("ornstein_uhlenbeck constants must be positive")
    if kind == "brownian_shifted" and (merged["a"] <= 0 or merged["b"] <= 0):
        raise ValueError("brownian_shifted constants must be positive")

    return CovKernel(kind=kind, eigen_decay_q=q, null_dim_p=p, params=merged)


def kernel_from_dict(spec):
    spec = dict(spec)
    return make_kernel(spec.pop("kind"), **spec)


def _iterated_integral(s, t, q):
    """Integral over u in [0, min(s,t)] of (s-u)^(q-1) (t-u)^(q-1) / ((q-1)!)^2."""
    upper = np.minimum(s, t)
    if q == 1:
        return upper
    # the integrand is a polynomial of degree 2q-2: q Gauss nodes are exact
    x, w = np.polynomial.legendre.leggauss(q)
    half = upper[..., None] / 2.0
    u = half * (x + 1.0)
    integrand = ((s[..., None] - u) * (t[..., None] - u)) ** (q - 1)
    return np.sum(half * w * integrand, axis=-1) / math.factorial(q - 1) ** 2


def kernel_eval(kernel, s, t):
    """Evaluate C(s, t); broadcasts over array arguments."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(s > 1) or np.any(t < 0) or np.any(t > 1):
        raise ValueError("kernel arguments must lie in [0, 1]")
    s, t = np.broadcast_arrays(s, t)
    kind, params = kernel.kind, kernel.params

    if kind == "brownian":
        value = np.minimum(s, t)
    elif kind == "brownian_shifted":
        value = params["a"] + params["b"] * np.minimum(s, t)
    elif kind == "ornstein_uhlenbeck":
        value = params["c1"] * np.exp(-params["c2"] * np.abs(s - t))
    elif kind == "brownian_bridge":
        value = np.minimum(s, t) - s * t
    elif kind == "iterated_brownian":
        value = _iterated_integral(s, t, params["q"])
    elif kind == "sobolev":
        q, coefs = params["q"], params["coefs"]
        value = coefs[q] * _iterated_integral(s, t, q)
        for ell in range(q):
            value = value + coefs[ell] * (s * t) ** ell / math.factorial(ell) ** 2
    elif kind == "two_sided_brownian":
        value = 1.0 - np.abs(s - t)
    elif kind == "brownian_demeaned":
        value = np.minimum(s, t) - (s - s**2 / 2) - (t - t**2 / 2) + 1.0 / 3.0
    else:
        raise ValueError(f"unknown kernel kind {kind!r}")

    return value[()] if value.ndim == 0 else value


def _centering(weights):
    n = weights.size
    return np.eye(n) - np.outer(np.ones(n), weights / weights.sum())


def kernel_matrix(kernel, grid, weights=None):
    """Grid covariance matrix C(t_i, t_j).

    For ``brownian_demeaned`` the Brownian grid matrix is centred with the
    quadrature ``weights`` (trapezoid by default) so that discretely
    integrated paths have exactly zero integral.
    """
    grid = np.asarray(grid, dtype=float)
    if kernel.kind == "brownian_demeaned":
        weights = trapezoid_weights(grid) if weights is None else np.asarray(weights, dtype=float)
        base = np.minimum(grid[:, None], grid[None, :])
        center = _centering(weights)
        cov = center @ base @ center.T
    else:
        cov = kernel_eval(kernel, grid[:, None], grid[None, :])
    return (cov + cov.T) / 2.0


def kernel_trace(kernel, n_nodes=64):
    """Integral of C(t, t) over [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    t = (x + 1.0) / 2.0
    return float(np.sum(w / 2.0 * kernel_eval(kernel, t, t)))


def kernel_eigs(kernel, n_grid=1024, n_eigs=10):
    """Nystrom eigenvalues of the covariance operator on a midpoint grid, decreasing."""
    if n_grid < 32:
        raise ValueError(f"n_grid must be at least 32, got {n_grid}")
    if n_eigs > n_grid:
        raise ValueError(f"cannot return {n_eigs} eigenvalues from a {n_grid}-point grid")
    grid = (np.arange(n_grid) + 0.5) / n_grid
    weights = np.full(n_grid, 1.0 / n_grid)
    operator = kernel_matrix(kernel, grid, weights) / n_grid
    eigs = linalg.eigh(operator, eigvals_only=True)
    return eigs[::-1][:n_eigs]


def x_norm_of_function(kernel, values, grid):
    """(int int C(s,t) f(s) f(t) ds dt)^(1/2) for functions sampled on ``grid``.

    ``values`` may hold several functions along its leading axis.
    """
    grid = np.asarray(grid, dtype=float)
    weighted = np.asarray(values, dtype=float) * trapezoid_weights(grid)
    cov = kernel_matrix(kernel, grid)
    quad = np.einsum("...i,ij,...j->...", weighted, cov, weighted)
    return np.sqrt(np.maximum(quad, 0.0))


def _cholesky_with_jitter(cov):
    """Cholesky factor of a PSD matrix; rows with zero variance stay pinned at zero."""
    n = cov.shape[0]
    diag = np.diag(cov)
    active = diag > 1e-14 * max(diag.max(), np.finfo(float).tiny)
    sub = cov[np.ix_(active, active)]
    scale = np.trace(sub) / max(sub.shape[0], 1)

    for jitter in JITTER_LADDER:
        try:
            chol = linalg.cholesky(sub + jitter * scale * np.eye(sub.shape[0]), lower=True)
        except linalg.LinAlgError:
            logger.debug("Cholesky failed with relative jitter %.0e", jitter)
            continue
        if jitter > 1e-10:
            logger.warning("Grid covariance needed relative jitter %.0e to factor", jitter)
        factor = np.zeros((n, n))
        factor[np.ix_(active, active)] = chol
        return factor, jitter * scale

    raise CholeskyError(f"grid covariance could not be factored with jitter up to {JITTER_LADDER[-1]:.0e}")


@dataclass(eq=False)
class GPSampler:
    """Zero-mean Gaussian path sampler on a fixed dense grid."""

    kernel: CovKernel
    grid: np.ndarray | None = None
    seed: int = 0
    chol: np.ndarray = field(init=False, repr=False)
    jitter: float = field(init=False)

    def __post_init__(self):
        if self.grid is None:
            self.grid = np.linspace(0.0, 1.0, DEFAULT_SAMPLER_GRID)
        self.grid = np.asarray(self.grid, dtype=float)

        if self.kernel.kind == "brownian_demeaned":
            weights = trapezoid_weights(self.grid)
            base = np.minimum(self.grid[:, None], self.grid[None, :])
            factor, self.jitter = _cholesky_with_jitter(base)
            self.chol = _centering(weights) @ factor
        else:
            self.chol, self.jitter = _cholesky_with_jitter(kernel_matrix(self.kernel, self.grid))
        logger.debug("Factored %s covariance on %d grid points", self.kernel.kind, self.grid.size)

    @property
    def weights(self):
        return trapezoid_weights(self.grid)


def sample_paths(sampler, n, rng=None):
    """Draw ``n`` paths on the sampler grid; shape (n, n_grid).

    Without an explicit generator, a fresh one seeded from ``sampler.seed`` is
    used, so repeated calls return identical paths.
    """
    if n < 1:
        raise ValueError(f"number of paths must be >= 1, got {n}")
    if rng is None:
        rng = np.random.default_rng(sampler.seed)
    z = rng.standard_normal((n, sampler.grid.size))
    return z @ sampler.chol.T

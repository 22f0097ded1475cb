"""Task-similarity graphs from auxiliary covariates on a manifold, and their Laplacian spectra."""

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import integrate, linalg, stats
from scipy.sparse.csgraph import connected_components
from sklearn.neighbors import radius_neighbors_graph

from csv_io import write_csv
from errors import NumericalError

logger = logging.getLogger(__name__)

MANIFOLDS = ("sphere", "torus", "euclidean_cube")

# edge kernels supported on [0, 1], unnormalized
EDGE_KERNELS = {
    "exp_trunc": lambda u: np.exp(-u) * (u < 1.0),
    "quartic": lambda u: (1.0 - u**2) ** 2 * (u < 1.0),
}

# multiplier on the bandwidth rule; with 1.0 a 2000-point 3-sphere averages about three neighbours
DEFAULT_BANDWIDTH_SCALE = 2.5


@dataclass(frozen=True, eq=False)
class AuxiliarySample:
    points: np.ndarray
    manifold: str
    intrinsic_dim: int

    @property
    def n_tasks(self):
        return self.points.shape[0]

    @property
    def ambient_dim(self):
        return self.points.shape[1]


@dataclass(frozen=True, eq=False)
class Laplacian:
    weights: np.ndarray
    degree: np.ndarray
    omega: np.ndarray
    bandwidth: float
    sigma_g: float
    kernel_g: str

    @property
    def n_tasks(self):
        return self.omega.shape[0]

    def n_components(self):
        adjacency = self.weights - np.diag(np.diag(self.weights))
        return int(connected_components((adjacency > 0).astype(float), directed=False)[0])


def sample_manifold(manifold, n_tasks, seed, mu=2):
    """Uniform samples on the unit mu-sphere, the flat mu-torus or the unit mu-cube."""
    if manifold not in MANIFOLDS:
        raise ValueError(f"unknown manifold {manifold!r}; expected one of {MANIFOLDS}")
    if n_tasks < 2:
        raise ValueError(f"need at least two tasks, got {n_tasks}")
    if mu < 1:
        raise ValueError(f"intrinsic dimension must be >= 1, got {mu}")
    rng = np.random.default_rng(seed)

    if manifold == "sphere":
        points = rng.standard_normal((n_tasks, mu + 1))
        points /= np.linalg.norm(points, axis=1, keepdims=True)
    elif manifold == "torus":
        theta = rng.uniform(0.0, 2.0 * np.pi, size=(n_tasks, mu))
        points = np.hstack([np.cos(theta), np.sin(theta)])
    else:
        points = rng.uniform(0.0, 1.0, size=(n_tasks, mu))
    return AuxiliarySample(points=points, manifold=manifold, intrinsic_dim=mu)


def kernel_constants(kernel_g, ambient_dim):
    """Normalizing constant c with int_{R^s} c G(|x|) dx = 1, and sigma_G = int x_1^2 c G(|x|) dx."""
    if kernel_g not in EDGE_KERNELS:
        raise ValueError(f"unknown edge kernel {kernel_g!r}; expected one of {sorted(EDGE_KERNELS)}")
    g = EDGE_KERNELS[kernel_g]
    s = ambient_dim
    sphere_area = 2.0 * math.pi ** (s / 2.0) / math.gamma(s / 2.0)
    mass = sphere_area * integrate.quad(lambda r: g(r) * r ** (s - 1), 0.0, 1.0)[0]
    second = sphere_area / s * integrate.quad(lambda r: g(r) * r ** (s + 1), 0.0, 1.0)[0]
    norm_const = 1.0 / mass
    return norm_const, norm_const * second


def bandwidth_rule(n_tasks, mu, scale=DEFAULT_BANDWIDTH_SCALE):
    """h = scale * (log M)^(zeta + 0.1) / M^(1/mu), zeta = 3/4 for mu = 2 and 1/mu otherwise."""
    zeta = 0.75 if mu == 2 else 1.0 / mu
    return scale * math.log(n_tasks) ** (zeta + 0.1) / n_tasks ** (1.0 / mu)


def _finish(weights, bandwidth, sigma_g, kernel_g):
    degree = weights.sum(axis=1)
    omega = np.diag(degree) - weights
    lap = Laplacian(
        weights=weights,
        degree=degree,
        omega=(omega + omega.T) / 2.0,
        bandwidth=bandwidth,
        sigma_g=sigma_g,
        kernel_g=kernel_g,
    )
    n_comp = lap.n_components()
    if n_comp > lap.n_tasks / 2:
        message = f"graph splits into {n_comp} components for {lap.n_tasks} vertices; bandwidth too small"
        logger.warning(message)
        warnings.warn(message, RuntimeWarning, stacklevel=3)
    return lap


def build_laplacian(sample, h=None, kernel_g="exp_trunc", scale=DEFAULT_BANDWIDTH_SCALE):
    """Kernel-weighted graph w_vv' = 2 G(|s_v - s_v'|/h) / (sigma_G h^(mu+2) M) and Omega = D - W."""
    if h is None:
        h = bandwidth_rule(sample.n_tasks, sample.intrinsic_dim, scale)
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")

    norm_const, sigma_g = kernel_constants(kernel_g, sample.ambient_dim)
    g = EDGE_KERNELS[kernel_g]
    m, mu = sample.n_tasks, sample.intrinsic_dim

    dist = radius_neighbors_graph(sample.points, radius=h, mode="distance", include_self=False).tocoo()
    weights = np.zeros((m, m))
    weights[dist.row, dist.col] = norm_const * g(dist.data / h)
    weights = (weights + weights.T) / 2.0
    np.fill_diagonal(weights, norm_const * g(np.array(0.0)))
    weights *= 2.0 / (sigma_g * h ** (mu + 2) * m)

    logger.info("Successfully built %s graph on %d tasks (h=%.4f, %d edges)", kernel_g, m, h, dist.nnz // 2)
    return _finish(weights, h, sigma_g, kernel_g)


def laplacian_from_weights(weights):
    """Laplacian of a fixed, externally supplied weight matrix."""
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 2 or weights.shape[0] != weights.shape[1]:
        raise ValueError(f"weight matrix must be square, got shape {weights.shape}")
    if np.max(np.abs(weights - weights.T)) > 1e-10 * max(1.0, np.max(np.abs(weights))):
        raise ValueError("weight matrix is not symmetric")
    if np.any(weights < 0):
        raise ValueError("weight matrix has negative entries")
    return _finish((weights + weights.T) / 2.0, float("nan"), float("nan"), "fixed")


def load_weights_csv(path):
    weights = pd.read_csv(path, header=None, comment="#").to_numpy(dtype=float)
    logger.info("Loaded %dx%d weight matrix from %s", *weights.shape, path)
    return laplacian_from_weights(weights)


def dirichlet_form(lap, f):
    """f' Omega f / M."""
    f = np.asarray(f, dtype=float)
    return float(f @ lap.omega @ f) / lap.n_tasks


def dirichlet_pairs(lap, f):
    """Pairwise form (1/2M) sum_{v,v'} w_vv' (f_v - f_v')^2."""
    f = np.asarray(f, dtype=float)
    return 0.5 * float(np.sum(lap.weights * (f[:, None] - f[None, :]) ** 2)) / lap.n_tasks


def spectral_growth(lap, m_lo=5, m_hi=100):
    """Smallest ``m_hi`` Laplacian eigenvalues and the log-log slope of lambda_m over [m_lo, m_hi]."""
    if m_lo < 5:
        raise ValueError("m_lo must be at least 5; the first four eigenvalues are excluded")
    if m_hi > lap.n_tasks or m_hi <= m_lo:
        raise ValueError(f"need m_lo < m_hi <= M={lap.n_tasks}, got [{m_lo}, {m_hi}]")
    try:
        eigs = linalg.eigh(lap.omega, eigvals_only=True, subset_by_index=[0, m_hi - 1])
    except linalg.LinAlgError as exc:
        raise NumericalError(f"Laplacian eigendecomposition failed: {exc}") from exc

    m = np.arange(m_lo, m_hi + 1)
    window = eigs[m - 1]
    if np.any(window <= 0):
        raise NumericalError("zero Laplacian eigenvalues inside the fit window; the graph is disconnected")
    slope = float(stats.linregress(np.log(m), np.log(window)).slope)
    return eigs, slope


def write_eigs_csv(eigs, path, metadata=None):
    frame = pd.DataFrame({"m": np.arange(1, len(eigs) + 1), "lambda": eigs})
    return write_csv(frame, path, metadata)

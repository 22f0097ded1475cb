"""Composite quadratic penalty sum_j eta_j tr(B' Pi_j1 B Pi_j2) and its Q-norm.

Terms are stored separately and applied as matrix products; the KM x KM
Kronecker form is only built on request for small problems.
"""

import logging
from dataclasses import dataclass

import numpy as np

from spline_basis import evaluate, quadrature_rule

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-8
MAX_KRON_SIZE = 256


def _check_symmetric_psd(name, mat):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {mat.shape}")
    scale = max(1.0, float(np.max(np.abs(mat))))
    if np.max(np.abs(mat - mat.T)) > SYMMETRY_TOL * scale:
        raise ValueError(f"{name} is not symmetric")
    eigs = np.linalg.eigvalsh(mat)
    if eigs.size and eigs[0] < -PSD_TOL * max(abs(eigs[-1]), 1e-300):
        raise ValueError(f"{name} is not positive semidefinite (smallest eigenvalue {eigs[0]:.3e})")
    return mat


@dataclass(frozen=True, eq=False)
class PenaltyTerm:
    eta: float
    pi1: np.ndarray
    pi2: np.ndarray


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    """Ordered penalty terms; by convention term 1 is (eta1, diag(gamma), I)."""

    terms: tuple

    def __post_init__(self):
        if not self.terms:
            raise ValueError("a penalty needs at least one term")
        dof, n_tasks = self.terms[0].pi1.shape[0], self.terms[0].pi2.shape[0]
        for j, term in enumerate(self.terms, start=1):
            if term.eta < 0 or not np.isfinite(term.eta):
                raise ValueError(f"term {j}: eta must be finite and nonnegative, got {term.eta}")
            _check_symmetric_psd(f"term {j} Pi_1", term.pi1)
            _check_symmetric_psd(f"term {j} Pi_2", term.pi2)
            if term.pi1.shape[0] != dof or term.pi2.shape[0] != n_tasks:
                raise ValueError(f"term {j} dimensions do not match term 1")

    @property
    def dof(self):
        return self.terms[0].pi1.shape[0]

    @property
    def n_tasks(self):
        return self.terms[0].pi2.shape[0]

    @property
    def etas(self):
        return tuple(term.eta for term in self.terms)


def _check_coef(spec, b):
    b = np.asarray(b, dtype=float)
    if b.shape != (spec.dof, spec.n_tasks):
        raise ValueError(f"coefficient matrix must be {spec.dof}x{spec.n_tasks}, got {b.shape}")
    return b


def roughness_penalty_spec(system, eta1, n_tasks):
    term = PenaltyTerm(eta=float(eta1), pi1=np.diag(system.gamma), pi2=np.eye(n_tasks))
    return PenaltySpec(terms=(term,))


def _omega_matrix(omega):
    mat = np.asarray(getattr(omega, "omega", omega), dtype=float)
    _check_symmetric_psd("Laplacian", mat)
    scale = max(1.0, float(np.max(np.abs(mat))))
    if np.max(np.abs(mat.sum(axis=1))) > 1e-10 * scale:
        raise ValueError("Laplacian rows must sum to zero")
    return mat


def graph_penalty_spec(system, omega, sigma_hat, eta1, eta2):
    """Terms (eta1, Gamma, I), (eta2, Sigma_hat, Omega), (eta1 eta2, Gamma, Omega)."""
    omega = _omega_matrix(omega)
    sigma_hat = _check_symmetric_psd("pooled covariance", sigma_hat)
    gamma = np.diag(system.gamma)
    terms = (
        PenaltyTerm(eta=float(eta1), pi1=gamma, pi2=np.eye(omega.shape[0])),
        PenaltyTerm(eta=float(eta2), pi1=sigma_hat, pi2=omega),
        PenaltyTerm(eta=float(eta1) * float(eta2), pi1=gamma, pi2=omega),
    )
    return PenaltySpec(terms=terms)


def pooled_covariance(data):
    """(1/MN) sum over tasks and samples of x x'."""
    x = np.asarray(data.x, dtype=float)
    n_tasks, n_obs = x.shape[0], x.shape[1]
    sigma = np.einsum("mnk,mnl->kl", x, x) / (n_tasks * n_obs)
    return (sigma + sigma.T) / 2.0


def penalty_apply(spec, b):
    """sum_j eta_j Pi_j1 B Pi_j2 (half the gradient)."""
    b = _check_coef(spec, b)
    out = np.zeros_like(b)
    for term in spec.terms:
        if term.eta:
            out += term.eta * (term.pi1 @ b @ term.pi2)
    return out


def penalty_value(spec, b):
    b = _check_coef(spec, b)
    total = 0.0
    for term in spec.terms:
        if term.eta:
            total += term.eta * float(np.sum((term.pi1 @ b) * (b @ term.pi2)))
    return max(total, 0.0)


def penalty_gradient(spec, b):
    return 2.0 * penalty_apply(spec, b)


def q_norm(spec, b):
    b = _check_coef(spec, b)
    return float(np.sqrt(np.sum(b**2) + penalty_value(spec, b)))


def penalty_matrix(spec):
    """Kronecker form sum_j eta_j Pi_j2 (x) Pi_j1 acting on column-major vec(B)."""
    size = spec.dof * spec.n_tasks
    if size > MAX_KRON_SIZE:
        raise ValueError(f"refusing to build a {size}x{size} Kronecker penalty (limit {MAX_KRON_SIZE})")
    out = np.zeros((size, size))
    for term in spec.terms:
        out += term.eta * np.kron(term.pi2, term.pi1)
    return out


def pairwise_difference_sum(weights, b, metric):
    """(1/2) sum_{v,v'} w_vv' (b_v - b_v')' metric (b_v - b_v') by brute force."""
    weights = np.asarray(weights, dtype=float)
    b = np.asarray(b, dtype=float)
    diffs = b[:, :, None] - b[:, None, :]
    quad = np.einsum("kvw,kl,lvw->vw", diffs, metric, diffs)
    return 0.5 * float(np.sum(weights * quad))


def graph_penalty_functional(system, weights, data, b, eta1, eta2, nodes_per_interval=None):
    """Graph penalty evaluated from its functional form.

    Roughness integrals use Gauss quadrature of the fitted curves' d-th
    derivatives; the prediction term uses the design vectors directly.
    Pairs are counted once each.
    """
    basis, d = system.basis, system.deriv_order
    nodes, qw = quadrature_rule(basis, nodes_per_interval)
    curves_d = evaluate(basis, nodes, deriv=d) @ b  # (n_nodes, M)

    rough = float(np.sum(qw[:, None] * curves_d**2))

    x = np.asarray(data.x, dtype=float)
    n_tasks, n_obs = x.shape[0], x.shape[1]
    # predictions of every task's curve on every observed covariate
    preds = np.einsum("mnk,kv->mnv", x, b).reshape(n_tasks * n_obs, -1)
    pred_diff = preds[:, :, None] - preds[:, None, :]
    fit_term = 0.5 * float(np.sum(weights * np.mean(pred_diff**2, axis=0)))

    curve_diff = curves_d[:, :, None] - curves_d[:, None, :]
    rough_diff = np.einsum("i,ivw->vw", qw, curve_diff**2)
    cross_term = 0.5 * float(np.sum(weights * rough_diff))

    return eta1 * rough + eta2 * fit_term + eta1 * eta2 * cross_term

"""Simultaneous diagonalization of the covariance and roughness quadratic forms on a spline space.

The installed transform Q makes the working basis phi = Q phi_raw satisfy

    cov(int x phi) = I_{K - pbar} (+) 0_{pbar},    int phi^(d) phi^(d)' = diag(gamma),

so the prediction norm of a coefficient vector is Euclidean on the leading
block and the roughness norm is a weighted Euclidean norm.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import linalg, stats

from csv_io import write_csv
from errors import DiagonalizationError
from processes import kernel_matrix
from spline_basis import evaluate, gram_matrices, trapezoid_weights

logger = logging.getLogger(__name__)

DEFAULT_KERNEL_GRID = 1025
NULL_TOL = 1e-10
PATTERN_TOL = 1e-6
# null roughness eigenvalues sit at rounding level, eps times the largest one
ROUGH_EPS_FACTOR = 64.0


@dataclass(frozen=True, eq=False)
class DiagonalizedSystem:
    basis: object
    gamma: np.ndarray
    pbar: int
    deriv_order: int
    kernel: object
    kernel_grid: np.ndarray
    covariance: np.ndarray
    roughness: np.ndarray

    @property
    def dof(self):
        return self.basis.dof

    @property
    def sigma_pattern(self):
        pattern = np.zeros(self.dof)
        pattern[: self.dof - self.pbar] = 1.0
        return np.diag(pattern)

    @property
    def transform(self):
        return self.basis.transform

    @property
    def condition(self):
        return float(np.linalg.cond(self.basis.transform))

    def pattern_deviation(self):
        return float(np.max(np.abs(self.covariance - self.sigma_pattern)))

    def roughness_offdiag(self):
        off = self.roughness - np.diag(np.diag(self.roughness))
        return float(np.max(np.abs(off)))

    def to_raw(self, b):
        """Coefficients in the raw B-spline basis representing the same function."""
        return self.basis.transform.T @ np.asarray(b, dtype=float)


def _sym(a):
    return (a + a.T) / 2.0


def _inv_sqrt(a):
    w, v = linalg.eigh(_sym(a))
    if w.min() <= 0:
        raise DiagonalizationError(f"matrix is not positive definite (smallest eigenvalue {w.min():.3e})")
    return (v / np.sqrt(w)) @ v.T


def basis_covariance(basis, kernel, n_grid=DEFAULT_KERNEL_GRID):
    """Covariance of int x phi for the given basis, by trapezoid tensor quadrature on a uniform grid."""
    grid = np.linspace(0.0, 1.0, n_grid)
    weights = trapezoid_weights(grid)
    phi_w = weights[:, None] * evaluate(basis, grid)
    return _sym(phi_w.T @ kernel_matrix(kernel, grid, weights) @ phi_w)


def _separate_null_block(f, w1, null):
    """Rows making F = I (+) 0 and diag(w1) diagonal when F has a null space.

    The leading rows are made roughness-orthogonal to the null directions
    through a Schur complement; both blocks are then diagonalized.
    """
    lam, u = linalg.eigh(f)
    u_r, u_n = u[:, ~null], u[:, null]
    lam_r = lam[~null]
    w = np.diag(w1)

    w_rr = u_r.T @ w @ u_r
    w_rn = u_r.T @ w @ u_n
    w_nn = _sym(u_n.T @ w @ u_n)
    shear = -np.linalg.pinv(w_nn, hermitian=True) @ w_rn.T
    schur = _sym(w_rr + w_rn @ shear)

    scaled = schur / np.sqrt(np.outer(lam_r, lam_r))
    g_r, v_r = linalg.eigh(_sym(scaled))
    a = v_r / np.sqrt(lam_r)[:, None]
    range_rows = (u_r @ a + u_n @ (shear @ a)).T

    g_n, e_n = linalg.eigh(w_nn)
    null_rows = (u_n @ e_n).T
    return np.vstack([range_rows, null_rows]), np.concatenate([g_r, g_n])


def diagonalize(basis, kernel, d, n_grid=DEFAULT_KERNEL_GRID):
    """Install the simultaneous-diagonalization transform on ``basis``.

    Step one whitens the Gram matrix and diagonalizes the roughness matrix;
    step two diagonalizes the covariance against the roughness, replacing
    numerically null covariance eigenvalues by K^(-2q).

    pbar counts the null covariance directions actually found, which can be
    below the kernel's declared p: plain brownian gives pbar = 0.
    """
    raw = basis.raw()
    k = raw.dof
    if d >= raw.order:
        raise ValueError(f"derivative order d={d} must be below the spline order {raw.order}")

    pair = gram_matrices(raw, d)
    n_isqrt = _inv_sqrt(pair.gram)
    w1, v1 = linalg.eigh(_sym(n_isqrt @ pair.rough @ n_isqrt))
    w1 = np.clip(w1, 0.0, None)
    flat_tol = ROUGH_EPS_FACTOR * np.finfo(float).eps * w1.max()
    if w1[min(d, k - 1)] <= flat_tol:
        n_flat = int(np.sum(w1 <= flat_tol))
        raise DiagonalizationError(f"roughness matrix has {n_flat} null directions, expected at most d={d}")
    step_one = v1.T @ n_isqrt

    sigma_raw = basis_covariance(raw, kernel, n_grid)
    f = _sym(step_one @ sigma_raw @ step_one.T)
    lam, u = linalg.eigh(f)
    null = lam < NULL_TOL * lam.max()
    pbar = int(null.sum())

    lam_fixed = np.where(null, float(k) ** (-2 * kernel.eigen_decay_q), lam)
    if lam_fixed.min() <= 0:
        raise DiagonalizationError("covariance matrix is singular after the null-space fix")
    f_isqrt = (u / np.sqrt(lam_fixed)) @ u.T
    gamma, v2 = linalg.eigh(_sym(f_isqrt @ np.diag(w1) @ f_isqrt))
    step_two = v2.T @ f_isqrt

    if pbar:
        # move the null block to the trailing coordinates
        cov2 = step_two @ f @ step_two.T
        order = np.argsort(np.diag(cov2) < 0.5, kind="stable")
        step_two, gamma = step_two[order], gamma[order]
        cov2 = step_two @ f @ step_two.T
        target = np.diag(np.r_[np.ones(k - pbar), np.zeros(pbar)])
        if np.max(np.abs(cov2 - target)) > PATTERN_TOL:
            logger.info("Null block of rank %d is not aligned with the roughness spectrum; separating it", pbar)
            step_two, gamma = _separate_null_block(f, w1, null)

    transform = step_two @ step_one
    installed = raw.with_transform(transform)
    covariance = _sym(transform @ sigma_raw @ transform.T)
    roughness = _sym(transform @ pair.rough @ transform.T)
    gamma = np.clip(gamma, 0.0, None)

    system = DiagonalizedSystem(
        basis=installed,
        gamma=gamma,
        pbar=pbar,
        deriv_order=d,
        kernel=kernel,
        kernel_grid=np.linspace(0.0, 1.0, n_grid),
        covariance=covariance,
        roughness=roughness,
    )
    deviation, off = system.pattern_deviation(), system.roughness_offdiag()
    if deviation > PATTERN_TOL or off > 1e-8 * max(gamma.max(), 1.0):
        logger.warning("Diagonalization residuals are large: covariance %.2e, roughness %.2e", deviation, off)
    logger.info("Successfully diagonalized K=%d basis under %s kernel (pbar=%d)", k, kernel.kind, pbar)
    return system


def gamma_growth_check(system):
    """Least-squares slope of log gamma_k on log k over k in [2d+2, K - pbar]."""
    d, k = system.deriv_order, system.dof
    if k < 2 * d + 8:
        raise ValueError(f"K={k} too small for a growth check with d={d} (need K >= {2 * d + 8})")
    ks = np.arange(2 * d + 2, k - system.pbar + 1)
    window = system.gamma[ks - 1]
    if np.any(window <= 0):
        raise ValueError("nonpositive roughness eigenvalue inside the fit window")
    return float(stats.linregress(np.log(ks), np.log(window)).slope)


def refinement_report(basis, kernel, d, grids=(129, 257, 513, 1025, 2049)):
    """How the covariance matrix and gamma move as the kernel grid is refined."""
    rows = []
    previous = None
    for n_grid in grids:
        system = diagonalize(basis, kernel, d, n_grid=n_grid)
        sigma = basis_covariance(basis.raw(), kernel, n_grid)
        row = {"n_grid": n_grid, "pbar": system.pbar, "pattern_deviation": system.pattern_deviation()}
        if previous is None:
            row["sigma_change"] = np.nan
            row["gamma_rel_change"] = np.nan
        else:
            row["sigma_change"] = float(np.max(np.abs(sigma - previous[0])) / np.max(np.abs(sigma)))
            top = slice(None, system.dof - system.pbar)
            scale = np.maximum(system.gamma[top], 1e-12)
            row["gamma_rel_change"] = float(np.max(np.abs(system.gamma[top] - previous[1][top]) / scale))
        rows.append(row)
        previous = (sigma, system.gamma)
    return pd.DataFrame(rows)


def write_diag_csv(system, path, metadata=None):
    frame = pd.DataFrame(
        {
            "k": np.arange(1, system.dof + 1),
            "gamma": system.gamma,
            "null_block": np.arange(system.dof) >= system.dof - system.pbar,
        }
    )
    meta = {"kernel": system.kernel.kind, "pbar": system.pbar, "cond_Q": f"{system.condition:.6e}"}
    meta.update(metadata or {})
    return write_csv(frame, path, meta)

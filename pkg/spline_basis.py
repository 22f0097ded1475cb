"""B-spline bases on [0, 1]: evaluation, Gram/roughness matrices and covariate integration."""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

logger = logging.getLogger(__name__)

KNOT_RULES = ("uniform",)

# Gauss nodes per knot interval for function handles that are not piecewise polynomial
FUNCTION_NODES = 10

MAX_TRANSFORM_CONDITION = 1e14


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """Clamped B-spline system of a given order with K degrees of freedom.

    ``transform`` is the K x K matrix Q mapping raw B-splines to the working
    basis (phi = Q phi_raw). It stays ``None`` (identity) until a
    diagonalization installs one.
    """

    order: int
    dof: int
    knots: np.ndarray
    transform: np.ndarray | None = None
    _splines: dict = field(default_factory=dict, init=False, repr=False)

    @property
    def degree(self):
        return self.order - 1

    @property
    def breakpoints(self):
        return np.unique(self.knots)

    @property
    def interior_knots(self):
        return self.knots[self.order:-self.order]

    def raw(self):
        """The same basis with the identity transform."""
        return SplineBasis(order=self.order, dof=self.dof, knots=self.knots)

    def with_transform(self, transform):
        """Return a copy with ``transform`` installed after an invertibility check."""
        transform = np.asarray(transform, dtype=float)
        if transform.shape != (self.dof, self.dof):
            raise ValueError(f"transform must be {self.dof}x{self.dof}, got {transform.shape}")
        cond = np.linalg.cond(transform)
        if not np.isfinite(cond) or cond > MAX_TRANSFORM_CONDITION:
            raise ValueError(f"transform is numerically singular (condition number {cond:.3e})")
        return SplineBasis(order=self.order, dof=self.dof, knots=self.knots, transform=transform)

    def _raw_spline(self, deriv):
        if deriv not in self._splines:
            spline = BSpline(self.knots, np.eye(self.dof), self.degree, extrapolate=True)
            self._splines[deriv] = spline.derivative(deriv) if deriv > 0 else spline
        return self._splines[deriv]


@dataclass(frozen=True, eq=False)
class GramPair:
    gram: np.ndarray
    rough: np.ndarray
    deriv_order: int


def make_basis(dof, order=4, knot_rule="uniform"):
    """Build a clamped B-spline basis on [0, 1] with ``dof - order`` uniform interior knots."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if dof < order:
        raise ValueError(f"dof K={dof} is smaller than the spline order {order}")
    if knot_rule not in KNOT_RULES:
        raise ValueError(f"unknown knot rule {knot_rule!r}; expected one of {KNOT_RULES}")

    n_interior = dof - order
    interior = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
    knots = np.concatenate([np.zeros(order), interior, np.ones(order)])
    return SplineBasis(order=order, dof=dof, knots=knots)


def _check_unit_interval(t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("evaluation points must lie in [0, 1]")
    return t


def evaluate(basis, t, deriv=0):
    """Evaluate the (transformed) basis or one of its derivatives.

    A scalar ``t`` gives a K-vector, an array of shape (n,) gives (n, K).
    Derivatives of order >= ``basis.order`` vanish identically; they are
    returned as zeros with a warning.
    """
    t = _check_unit_interval(t)
    if deriv < 0:
        raise ValueError(f"derivative order must be nonnegative, got {deriv}")

    if deriv >= basis.order:
        warnings.warn(
            f"derivative of order {deriv} of an order-{basis.order} spline is identically zero",
            RuntimeWarning,
            stacklevel=2,
        )
        values = np.zeros(t.shape + (basis.dof,))
    else:
        values = basis._raw_spline(deriv)(t)

    if basis.transform is not None:
        values = values @ basis.transform.T
    return values


def quadrature_rule(basis, nodes_per_interval=None):
    """Composite Gauss-Legendre nodes and weights over the knot intervals."""
    n = basis.order if nodes_per_interval is None else int(nodes_per_interval)
    x, w = np.polynomial.legendre.leggauss(n)
    bp = basis.breakpoints
    lo, half = bp[:-1], np.diff(bp) / 2.0
    nodes = (lo[:, None] + half[:, None] * (x[None, :] + 1.0)).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def gram_matrices(basis, d, nodes_per_interval=None):
    """Gram matrix of the basis and roughness matrix of its d-th derivatives.

    With the default node count (= order) the rule is exact for products of
    two splines of this order.
    """
    if d < 0 or d >= basis.order:
        raise ValueError(f"derivative order d={d} must satisfy 0 <= d < order={basis.order}")

    nodes, weights = quadrature_rule(basis, nodes_per_interval)
    phi = evaluate(basis, nodes)
    phi_d = evaluate(basis, nodes, deriv=d)

    gram = phi.T @ (weights[:, None] * phi)
    rough = phi_d.T @ (weights[:, None] * phi_d)
    gram = (gram + gram.T) / 2.0
    rough = (rough + rough.T) / 2.0
    return GramPair(gram=gram, rough=rough, deriv_order=d)


def trapezoid_weights(grid):
    """Trapezoid-rule weights for a sorted grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must be a 1-d array with at least two points")
    h = np.diff(grid)
    if np.any(h <= 0):
        raise ValueError("grid must be strictly increasing")
    w = np.zeros_like(grid)
    w[:-1] += h / 2.0
    w[1:] += h / 2.0
    return w


def integrate_covariate(basis, x, grid=None, nodes_per_interval=None):
    """Compute the integral of x(t) phi(t) over [0, 1].

    ``x`` is either a vectorized function handle (integrated by Gauss-Legendre
    per knot interval) or samples of one or several curves on ``grid``
    (integrated by the trapezoid rule). Samples of shape (n_curves, n_grid)
    give an (n_curves, K) design matrix.
    """
    if callable(x):
        n = FUNCTION_NODES if nodes_per_interval is None else nodes_per_interval
        nodes, weights = quadrature_rule(basis, max(n, basis.order))
        values = np.broadcast_to(np.asarray(x(nodes), dtype=float), nodes.shape)
        return evaluate(basis, nodes).T @ (weights * values)

    samples = np.asarray(x, dtype=float)
    n_grid = samples.shape[-1]
    if grid is None:
        grid = np.linspace(0.0, 1.0, n_grid)
    grid = _check_unit_interval(grid)
    if grid.shape != (n_grid,):
        raise ValueError(f"grid has {grid.size} points but curves have {n_grid} samples")
    if n_grid < 4 * basis.dof:
        raise ValueError(f"grid too coarse: {n_grid} points for K={basis.dof} (need >= {4 * basis.dof})")

    weighted_basis = trapezoid_weights(grid)[:, None] * evaluate(basis, grid)
    return samples @ weighted_basis


def project_function(basis, f, nodes_per_interval=None):
    """Coefficients of the L2 projection of a vectorized function onto the spline space."""
    gram = gram_matrices(basis, 0).gram
    rhs = integrate_covariate(basis, f, nodes_per_interval=nodes_per_interval)
    return np.linalg.solve(gram, rhs)


def l2_projection_error(basis, f, nodes_per_interval=None):
    coef = project_function(basis, f, nodes_per_interval)
    nodes, weights = quadrature_rule(basis, FUNCTION_NODES if nodes_per_interval is None else nodes_per_interval)
    resid = np.asarray(f(nodes), dtype=float) - evaluate(basis, nodes) @ coef
    return float(np.sqrt(np.sum(weights * resid**2)))


def rescale_to_unit(t, lo, hi):
    """Affine map of observation points on [lo, hi] onto [0, 1]."""
    if not hi > lo:
        raise ValueError(f"domain upper bound {hi} must exceed lower bound {lo}")
    t = np.asarray(t, dtype=float)
    if np.any(t < lo) or np.any(t > hi):
        raise ValueError(f"points fall outside the domain [{lo}, {hi}]")
    return np.clip((t - lo) / (hi - lo), 0.0, 1.0)

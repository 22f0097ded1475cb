"""Losses and the pooled, reduced-rank and graph-regularized multi-task fitters.

All objectives use the (1/NM) normalization

    (1/NM) sum_m sum_n loss(y_nm, alpha_m + x_nm' b_m) + P(B)

with P the composite penalty from ``penalties``. Coefficients live in the
diagonalized basis, so the roughness matrix is diag(gamma).
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, special
from scipy.sparse.linalg import LinearOperator, cg

from errors import ConvergenceError, NumericalError, RankDegeneracyError
from fixed_rank_manifold import FixedRankPoint, project_tangent, retract
from penalties import (
    graph_penalty_spec,
    penalty_apply,
    penalty_gradient,
    penalty_value,
    pooled_covariance,
    roughness_penalty_spec,
)

try:
    from joblib import Parallel, delayed

    JOBLIB_AVAILABLE = True
except ImportError:
    JOBLIB_AVAILABLE = False

logger = logging.getLogger(__name__)

LOSS_KINDS = ("squared", "logistic", "quantile")
INTERCEPT_MODES = ("none", "fitted")
INIT_MODES = ("svd_of_pooled", "random")
POOLED_INIT_MODES = ("zeros", "random")
REDUCED_METHODS = ("als", "riemannian")

NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 500
ALS_TOL = 1e-10
ALS_MAX_SWEEPS = 500
RIEMANNIAN_TOL = 1e-7
DESCENT_MAX_ITER = 5000
CG_RTOL = 1e-10
ARMIJO = 1e-4


@dataclass(frozen=True)
class LossKind:
    """Loss family; ``w`` is the quantile level and ``smooth_eps`` the Huber corner width."""

    kind: str = "squared"
    w: float = 0.5
    smooth_eps: float | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.kind!r}; expected one of {LOSS_KINDS}")
        if not 0.0 < self.w < 1.0:
            raise ValueError(f"quantile level must lie in (0, 1), got {self.w}")
        if self.smooth_eps is not None and self.smooth_eps <= 0:
            raise ValueError(f"smooth_eps must be positive, got {self.smooth_eps}")

    def resolve(self, y):
        """Fill in the default smoothing width 1e-3 * IQR(y) for the quantile loss."""
        if self.kind != "quantile" or self.smooth_eps is not None:
            return self
        q75, q25 = np.percentile(np.asarray(y, dtype=float), [75, 25])
        eps = 1e-3 * (q75 - q25)
        if eps <= 0:
            eps = 1e-3
            logger.warning("Responses have zero interquartile range; using smooth_eps=%g", eps)
        return LossKind(kind=self.kind, w=self.w, smooth_eps=float(eps))

    def to_dict(self):
        return {"kind": self.kind, "w": self.w, "smooth_eps": self.smooth_eps}


@dataclass(eq=False)
class TaskDataset:
    """Designs x (M x N x K, rows are integrated covariates) and responses y (M x N)."""

    x: np.ndarray
    y: np.ndarray
    intercept_mode: str = "none"
    loss: LossKind = field(default_factory=LossKind)

    def __post_init__(self):
        self.x = np.asarray(np.stack([np.asarray(xm, dtype=float) for xm in self.x]), dtype=float)
        self.y = np.asarray(np.stack([np.asarray(ym, dtype=float) for ym in self.y]), dtype=float)
        if self.x.ndim != 3:
            raise ValueError("designs must stack to an M x N x K array (equal N across tasks)")
        if self.y.shape != self.x.shape[:2]:
            raise ValueError(f"responses have shape {self.y.shape}, designs imply {self.x.shape[:2]}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite entries")
        if self.intercept_mode not in INTERCEPT_MODES:
            raise ValueError(f"unknown intercept mode {self.intercept_mode!r}")
        if self.loss.kind == "logistic" and not np.all(np.isin(self.y, (0.0, 1.0))):
            raise ValueError("logistic loss needs labels in {0, 1}")
        self.loss = self.loss.resolve(self.y)

    @property
    def n_tasks(self):
        return self.x.shape[0]

    @property
    def n_obs(self):
        return self.x.shape[1]

    @property
    def dof(self):
        return self.x.shape[2]

    @property
    def fits_intercept(self):
        return self.intercept_mode == "fitted"

    def centered(self):
        """Copy with per-task centred designs and responses, and the removed means."""
        x_mean = self.x.mean(axis=1)
        y_mean = self.y.mean(axis=1)
        data = TaskDataset(
            x=self.x - x_mean[:, None, :],
            y=self.y - y_mean[:, None],
            intercept_mode="none",
            loss=self.loss,
        )
        return data, x_mean, y_mean


@dataclass(eq=False)
class FitResult:
    b: np.ndarray
    alpha: np.ndarray
    objective_trace: list
    converged: bool
    iterations: int
    method: str = ""
    exact_objective: float | None = None

    @property
    def objective(self):
        return self.objective_trace[-1]


# losses


def pinball_value(y, u, w):
    r = np.asarray(y, dtype=float) - np.asarray(u, dtype=float)
    return float(np.mean(r * (w - (r < 0))))


def loss_value_grad(loss, y, u):
    """Mean loss over the sample and its gradient with respect to ``u``."""
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    n = y.size
    if loss.kind == "squared":
        r = y - u
        return float(np.mean(r**2)), -2.0 * r / n
    if loss.kind == "logistic":
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise ValueError("logistic loss needs labels in {0, 1}")
        value = np.mean(np.logaddexp(0.0, u) - y * u)
        return float(value), (special.expit(u) - y) / n
    loss = loss.resolve(y)
    eps, w = loss.smooth_eps, loss.w
    r = y - u
    huber = np.where(np.abs(r) <= eps, r**2 / (2.0 * eps), np.abs(r) - eps / 2.0)
    value = np.mean((w - 0.5) * r + 0.5 * huber)
    psi = (w - 0.5) + 0.5 * np.clip(r / eps, -1.0, 1.0)
    return float(value), -psi / n


def loss_curvature(loss, y, u):
    """Second derivative of the mean loss in each coordinate of ``u``."""
    n = np.size(y)
    if loss.kind == "squared":
        return np.full(n, 2.0 / n)
    if loss.kind == "logistic":
        p = special.expit(u)
        return p * (1.0 - p) / n
    r = np.asarray(y) - np.asarray(u)
    return (np.abs(r) <= loss.smooth_eps) / (2.0 * loss.smooth_eps * n)


# objective


def _predictor(data, b, alpha):
    return np.einsum("mnk,km->mn", data.x, b) + alpha[:, None]


def _alpha(data, alpha):
    return np.zeros(data.n_tasks) if alpha is None else np.asarray(alpha, dtype=float)


def objective(data, spec, b, alpha=None):
    alpha = _alpha(data, alpha)
    u = _predictor(data, b, alpha)
    total = sum(loss_value_grad(data.loss, data.y[m], u[m])[0] for m in range(data.n_tasks))
    return total / data.n_tasks + penalty_value(spec, b)


def objective_gradient(data, spec, b, alpha=None):
    """Gradients of ``objective`` with respect to B (K x M) and alpha (M)."""
    alpha = _alpha(data, alpha)
    u = _predictor(data, b, alpha)
    grad_b = penalty_gradient(spec, b)
    grad_alpha = np.zeros(data.n_tasks)
    for m in range(data.n_tasks):
        g_u = loss_value_grad(data.loss, data.y[m], u[m])[1] / data.n_tasks
        grad_b[:, m] += data.x[m].T @ g_u
        if data.fits_intercept:
            grad_alpha[m] = g_u.sum()
    return grad_b, grad_alpha


def exact_objective(data, spec, b, alpha=None):
    """Objective with the unsmoothed pinball loss (quantile only)."""
    if data.loss.kind != "quantile":
        return None
    u = _predictor(data, b, _alpha(data, alpha))
    total = sum(pinball_value(data.y[m], u[m], data.loss.w) for m in range(data.n_tasks))
    return total / data.n_tasks + penalty_value(spec, b)


def fit_intercepts(data):
    """Location estimates alpha_m with B = 0: mean, logit of the mean, or smoothed quantile."""
    alpha = np.zeros(data.n_tasks)
    for m in range(data.n_tasks):
        y = data.y[m]
        if data.loss.kind == "squared":
            alpha[m] = y.mean()
        elif data.loss.kind == "logistic":
            p = np.clip(y.mean(), 1e-12, 1 - 1e-12)
            alpha[m] = special.logit(p)
        else:
            def score(a, y=y):
                return loss_value_grad(data.loss, y, np.full(y.size, a))[1].sum()

            alpha[m] = optimize.brentq(score, y.min() - 1.0, y.max() + 1.0, xtol=1e-14)
    return alpha


# solvers


def _solve_psd(a, rhs):
    try:
        return linalg.cho_solve(linalg.cho_factor(a), rhs)
    except linalg.LinAlgError:
        logger.debug("Cholesky solve failed; falling back to least squares")
        return linalg.lstsq(a, rhs)[0]


def _newton(fun, grad, hess, theta, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Damped Newton iterations with Armijo backtracking; returns (theta, trace, converged, iterations)."""
    value = fun(theta)
    trace = [value]
    for it in range(1, max_iter + 1):
        g = grad(theta)
        if np.linalg.norm(g) < tol:
            return theta, trace, True, it - 1
        h = hess(theta)
        damping = 1e-12 * max(1.0, np.max(np.abs(np.diag(h))))
        step = -_solve_psd(h + damping * np.eye(h.shape[0]), g)
        slope = float(g @ step)
        if slope >= 0:
            step, slope = -g, -float(g @ g)
        t = 1.0
        while True:
            candidate = theta + t * step
            new_value = fun(candidate)
            if new_value <= value + ARMIJO * t * slope or t < 1e-14:
                break
            t /= 2.0
        if new_value > value:
            break
        theta, value = candidate, new_value
        trace.append(value)
    g = grad(theta)
    return theta, trace, bool(np.linalg.norm(g) < tol), it


def _task_problem(data, m, penalty_diag, theta0=None):
    """Per-task objective loss_m + b' diag(penalty_diag) b on theta = (b, alpha_m)."""
    x, y, loss = data.x[m], data.y[m], data.loss
    k = data.dof
    with_alpha = data.fits_intercept

    def split(theta):
        return theta[:k], (theta[k] if with_alpha else 0.0)

    def fun(theta):
        b, a = split(theta)
        return loss_value_grad(loss, y, x @ b + a)[0] + float(b @ (penalty_diag * b))

    def grad(theta):
        b, a = split(theta)
        g_u = loss_value_grad(loss, y, x @ b + a)[1]
        g = x.T @ g_u + 2.0 * penalty_diag * b
        return np.r_[g, g_u.sum()] if with_alpha else g

    def hess(theta):
        b, a = split(theta)
        c = loss_curvature(loss, y, x @ b + a)
        design = np.hstack([x, np.ones((x.shape[0], 1))]) if with_alpha else x
        h = design.T @ (c[:, None] * design)
        h[:k, :k] += 2.0 * np.diag(penalty_diag)
        return h

    size = k + 1 if with_alpha else k
    theta0 = np.zeros(size) if theta0 is None else np.asarray(theta0, dtype=float)[:size]
    return fun, grad, hess, theta0, split


def _fit_task(data, m, penalty_diag, theta0=None):
    fun, grad, hess, theta0, split = _task_problem(data, m, penalty_diag, theta0)
    if data.loss.kind == "logistic":
        theta, trace, converged, iters = _newton(fun, grad, hess, theta0)
    else:
        lbfgs_trace = [fun(theta0)]
        res = optimize.minimize(
            lambda th: (fun(th), grad(th)),
            theta0,
            jac=True,
            method="L-BFGS-B",
            callback=lambda th: lbfgs_trace.append(fun(th)),
            options={"maxiter": NEWTON_MAX_ITER, "gtol": 1e-12, "ftol": 1e-15, "maxcor": 20},
        )
        # semismooth Newton polish on the piecewise-quadratic smoothed loss
        theta, trace, converged, iters = _newton(fun, grad, hess, res.x)
        trace = lbfgs_trace + trace[1:]
        iters += res.nit
    b, a = split(theta)
    return b, a, trace, converged, iters


def _stitch_traces(traces, n_tasks):
    length = max(len(t) for t in traces)
    padded = np.array([t + [t[-1]] * (length - len(t)) for t in traces])
    return list(padded.sum(axis=0) / n_tasks)


def fit_pooled(data, system, eta1, n_jobs=1, init="zeros", seed=0):
    """Independent penalized-spline fits per task (the roughness-only penalty).

    Iterative losses start from zero, or from a Gaussian draw with
    ``init="random"``; the squared loss is solved in closed form either way.
    """
    if eta1 < 0:
        raise ValueError(f"eta1 must be nonnegative, got {eta1}")
    if init not in POOLED_INIT_MODES:
        raise ValueError(f"unknown init {init!r}; expected one of {POOLED_INIT_MODES}")
    m_tasks = data.n_tasks
    spec = roughness_penalty_spec(system, eta1, m_tasks)
    gamma = system.gamma

    if data.loss.kind == "squared":
        work, x_mean, y_mean = data.centered() if data.fits_intercept else (data, None, None)
        n = work.n_obs
        b = np.zeros((data.dof, m_tasks))
        for m in range(m_tasks):
            x, y = work.x[m], work.y[m]
            lhs = x.T @ x / n + m_tasks * eta1 * np.diag(gamma)
            try:
                b[:, m] = linalg.solve(lhs, x.T @ y / n, assume_a="pos")
            except linalg.LinAlgError as exc:
                raise NumericalError(f"task {m}: singular normal equations (eta1={eta1}, N={n})") from exc
        alpha = y_mean - np.einsum("mk,km->m", x_mean, b) if data.fits_intercept else np.zeros(m_tasks)
        result = FitResult(b, alpha, [objective(data, spec, b, alpha)], True, 1, "closed_form")
        logger.info("Successfully fitted %d tasks in closed form", m_tasks)
        return result

    penalty_diag = m_tasks * eta1 * gamma
    starts = [None] * m_tasks
    if init == "random":
        rng = np.random.default_rng(seed)
        starts = list(rng.standard_normal((m_tasks, data.dof + 1)))
    if n_jobs != 1 and JOBLIB_AVAILABLE:
        fits = Parallel(n_jobs=n_jobs)(
            delayed(_fit_task)(data, m, penalty_diag, starts[m]) for m in range(m_tasks)
        )
    else:
        fits = [_fit_task(data, m, penalty_diag, starts[m]) for m in range(m_tasks)]

    b = np.column_stack([f[0] for f in fits])
    alpha = np.array([f[1] for f in fits], dtype=float)
    trace = _stitch_traces([f[2] for f in fits], m_tasks)
    converged = all(f[3] for f in fits)
    if not converged:
        logger.warning("Some per-task fits did not reach the gradient tolerance")
    result = FitResult(
        b, alpha, trace, converged, max(f[4] for f in fits), data.loss.kind,
        exact_objective=exact_objective(data, spec, b, alpha),
    )
    logger.info("Successfully fitted %d tasks with %s loss", m_tasks, data.loss.kind)
    return result


def _initial_coefficients(data, system, eta1, rank, init, seed):
    if init == "svd_of_pooled":
        pooled = fit_pooled(data, system, eta1)
        point = FixedRankPoint.from_matrix(pooled.b, rank)
        return point, pooled.alpha
    if init == "random":
        rng = np.random.default_rng(seed)
        b = rng.standard_normal((data.dof, rank)) @ rng.standard_normal((rank, data.n_tasks)) * 0.1
        return FixedRankPoint.from_matrix(b, rank), np.zeros(data.n_tasks)
    raise ValueError(f"unknown init {init!r}; expected one of {INIT_MODES}")


def _als(data, spec, gamma, eta1, point, max_sweeps=ALS_MAX_SWEEPS, tol=ALS_TOL):
    """Alternating exact least-squares solves for B = D A' (centred squared-loss data)."""
    n, m_tasks, k = data.n_obs, data.n_tasks, data.dof
    xtx = np.einsum("mnk,mnl->mkl", data.x, data.x) / (n * m_tasks)
    xty = np.einsum("mnk,mn->mk", data.x, data.y) / (n * m_tasks)
    rank = point.rank
    d_mat = point.u * point.d
    a_mat = point.v.copy()
    rough = np.diag(gamma)

    trace = [objective(data, spec, d_mat @ a_mat.T)]
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        shared = eta1 * d_mat.T @ rough @ d_mat
        for m in range(m_tasks):
            a_mat[m] = _solve_psd(d_mat.T @ xtx[m] @ d_mat + shared, d_mat.T @ xty[m])

        lhs = np.einsum("mr,ms,mkl->rksl", a_mat, a_mat, xtx).reshape(rank * k, rank * k)
        lhs += eta1 * np.kron(a_mat.T @ a_mat, rough)
        rhs = np.einsum("mr,mk->rk", a_mat, xty).ravel()
        d_mat = _solve_psd(lhs, rhs).reshape(rank, k).T

        q, r = np.linalg.qr(d_mat)
        d_mat, a_mat = q, a_mat @ r.T

        value = objective(data, spec, d_mat @ a_mat.T)
        trace.append(value)
        logger.debug("ALS sweep %d: objective %.12e", sweeps, value)
        if abs(trace[-2] - value) < tol:
            converged = True
            break
    return d_mat @ a_mat.T, trace, converged, sweeps


def _riemannian(data, spec, gamma, eta1, point, alpha, tol=RIEMANNIAN_TOL, max_iter=DESCENT_MAX_ITER):
    """Preconditioned Riemannian gradient descent with retraction and Armijo backtracking."""
    m_tasks = data.n_tasks
    precond = 1.0 / (1.0 + m_tasks * eta1 * gamma)
    value = objective(data, spec, point.dense, alpha)
    trace = [value]
    step = float(m_tasks)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad_b, grad_a = objective_gradient(data, spec, point.dense, alpha)
        rgrad = project_tangent(point, grad_b)
        gnorm = np.sqrt(rgrad.norm() ** 2 + float(grad_a @ grad_a))
        if gnorm < tol:
            converged = True
            break
        direction = project_tangent(point, precond[:, None] * rgrad.dense())
        slope = -float(np.sum(rgrad.dense() * direction.dense())) - float(grad_a @ grad_a)

        t = min(2.0 * step, 1e6)
        while t > 1e-16:
            try:
                candidate = retract(point, direction.scale(-t))
            except RankDegeneracyError:
                t /= 2.0
                continue
            cand_alpha = alpha - t * grad_a
            cand_value = objective(data, spec, candidate.dense, cand_alpha)
            if cand_value <= value + ARMIJO * t * slope:
                break
            t /= 2.0
        else:
            logger.warning("Line search stalled at iteration %d (gradient norm %.3e)", it, gnorm)
            break
        point, alpha, value, step = candidate, cand_alpha, cand_value, t
        trace.append(value)
        logger.debug("Riemannian iteration %d: objective %.12e, gradient %.3e", it, value, gnorm)
    return point, alpha, trace, converged, it


def fit_reduced(data, system, eta1, rank, init="svd_of_pooled", method="als", seed=0, max_iter=None):
    """Rank-constrained multi-task fit, B = D A' with D of size K x R."""
    if not 1 <= rank <= min(data.dof, data.n_tasks):
        raise ValueError(f"rank R={rank} must lie in [1, min(K, M)] = [1, {min(data.dof, data.n_tasks)}]")
    if method not in REDUCED_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {REDUCED_METHODS}")
    if method == "als" and data.loss.kind != "squared":
        raise ValueError("the ALS solver needs the squared loss; use method='riemannian'")

    spec = roughness_penalty_spec(system, eta1, data.n_tasks)
    squared_centered = data.loss.kind == "squared" and data.fits_intercept
    work, x_mean, y_mean = data.centered() if squared_centered else (data, None, None)
    point, alpha = _initial_coefficients(work, system, eta1, rank, init, seed)
    if not work.fits_intercept:
        alpha = np.zeros(data.n_tasks)

    if method == "als":
        b, trace, converged, iters = _als(work, spec, system.gamma, eta1, point, max_iter or ALS_MAX_SWEEPS)
    else:
        point, alpha, trace, converged, iters = _riemannian(
            work, spec, system.gamma, eta1, point, alpha, max_iter=max_iter or DESCENT_MAX_ITER
        )
        b = point.dense

    if squared_centered:
        alpha = y_mean - np.einsum("mk,km->m", x_mean, b)
    if not converged:
        logger.warning("Reduced-rank %s solver stopped after %d iterations without converging", method, iters)
    logger.info("Successfully fitted rank-%d model with %s (%d iterations)", rank, method, iters)
    return FitResult(
        b, alpha, trace, converged, iters, method,
        exact_objective=exact_objective(data, spec, b, alpha),
    )


def _graph_blocks(xtx, omega_diag, eta1, eta2, gamma, sigma_hat, loss_scale=1.0, scale=1.0):
    """Cholesky factors of the diagonal K x K blocks of the (scaled) system matrix."""
    blocks = []
    for m in range(xtx.shape[0]):
        blk = loss_scale * xtx[m] + eta1 * np.diag(gamma) + eta2 * omega_diag[m] * sigma_hat
        blk = blk + eta1 * eta2 * omega_diag[m] * np.diag(gamma)
        blk = scale * blk
        blocks.append(linalg.cho_factor((blk + blk.T) / 2.0 + 1e-14 * np.eye(blk.shape[0])))
    return blocks


def fit_graph(data, system, lap, eta1, eta2, max_iter=None):
    """Graph-regularized multi-task fit with the three-term Laplacian penalty."""
    if eta1 < 0 or eta2 < 0:
        raise ValueError(f"penalty parameters must be nonnegative, got eta1={eta1}, eta2={eta2}")
    omega = np.asarray(getattr(lap, "omega", lap), dtype=float)
    if omega.shape[0] != data.n_tasks:
        raise ValueError(f"Laplacian has {omega.shape[0]} vertices for {data.n_tasks} tasks")

    sigma_hat = pooled_covariance(data)
    spec = graph_penalty_spec(system, omega, sigma_hat, eta1, eta2)
    k, m_tasks = data.dof, data.n_tasks
    gamma = system.gamma
    squared_centered = data.loss.kind == "squared" and data.fits_intercept
    work, x_mean, y_mean = data.centered() if squared_centered else (data, None, None)
    n = work.n_obs
    xtx = np.einsum("mnk,mnl->mkl", work.x, work.x) / (n * m_tasks)
    omega_diag = np.diag(omega)

    if data.loss.kind == "squared":
        xty = np.einsum("mnk,mn->km", work.x, work.y) / (n * m_tasks)
        blocks = _graph_blocks(xtx, omega_diag, eta1, eta2, gamma, sigma_hat)

        def matvec(vec):
            b = vec.reshape((k, m_tasks), order="F")
            out = np.einsum("mkl,lm->km", xtx, b) + penalty_apply(spec, b)
            return out.ravel(order="F")

        def precond(vec):
            r = vec.reshape((k, m_tasks), order="F")
            z = np.column_stack([linalg.cho_solve(blocks[m], r[:, m]) for m in range(m_tasks)])
            return z.ravel(order="F")

        size = k * m_tasks
        op = LinearOperator((size, size), matvec=matvec, dtype=float)
        pre = LinearOperator((size, size), matvec=precond, dtype=float)
        rhs = xty.ravel(order="F")
        trace = [objective(work, spec, np.zeros((k, m_tasks)))]
        counter = {"it": 0}

        def record(xk):
            counter["it"] += 1
            trace.append(objective(work, spec, xk.reshape((k, m_tasks), order="F")))

        limit = max_iter or 10 * size
        sol, info = cg(op, rhs, rtol=CG_RTOL, atol=0.0, maxiter=limit, M=pre, callback=record)
        residual = np.linalg.norm(matvec(sol) - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if info > 0 and residual > 10 * CG_RTOL:
            raise ConvergenceError(f"CG did not converge in {limit} iterations (relative residual {residual:.2e})")
        b = sol.reshape((k, m_tasks), order="F")
        alpha = y_mean - np.einsum("mk,km->m", x_mean, b) if squared_centered else np.zeros(m_tasks)
        logger.info("Successfully solved graph model by CG in %d iterations", counter["it"])
        return FitResult(b, alpha, trace, True, counter["it"], "cg")

    loss_scale = 0.25 if data.loss.kind == "logistic" else 1.0
    blocks = _graph_blocks(xtx, omega_diag, eta1, eta2, gamma, sigma_hat, loss_scale, scale=2.0)
    b, alpha, trace, converged, iters = _preconditioned_descent(
        work, spec, blocks, np.zeros((k, m_tasks)), np.zeros(m_tasks), max_iter or DESCENT_MAX_ITER
    )
    if not converged:
        logger.warning("Graph descent stopped after %d iterations without converging", iters)
    return FitResult(
        b, alpha, trace, converged, iters, "descent",
        exact_objective=exact_objective(work, spec, b, alpha),
    )


def _preconditioned_descent(data, spec, blocks, b, alpha, max_iter, tol=RIEMANNIAN_TOL):
    """Block-Jacobi preconditioned gradient descent with Armijo backtracking."""
    m_tasks = data.n_tasks
    value = objective(data, spec, b, alpha)
    trace = [value]
    step = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad_b, grad_a = objective_gradient(data, spec, b, alpha)
        gnorm = np.sqrt(np.sum(grad_b**2) + np.sum(grad_a**2))
        if gnorm < tol:
            converged = True
            break
        dir_b = -np.column_stack([linalg.cho_solve(blocks[m], grad_b[:, m]) for m in range(m_tasks)])
        dir_a = -m_tasks * grad_a
        slope = float(np.sum(grad_b * dir_b) + grad_a @ dir_a)

        t = min(2.0 * step, 1.0)
        while t > 1e-16:
            cand_b, cand_a = b + t * dir_b, alpha + t * dir_a
            cand_value = objective(data, spec, cand_b, cand_a)
            if cand_value <= value + ARMIJO * t * slope:
                break
            t /= 2.0
        else:
            break
        b, alpha, value, step = cand_b, cand_a, cand_value, t
        trace.append(value)
    return b, alpha, trace, converged, it

"""Embedded geometry of the manifold of K x M matrices with fixed rank R.

Points are kept as a compact SVD (u, d, v) and tangent vectors as
(m_core, u_p, v_p), standing for the ambient matrix

    Delta = u m_core v' + u_p v' + u v_p',   u' u_p = 0,  v' v_p = 0.
"""

import logging
from dataclasses import dataclass

import numpy as np

from errors import RankDegeneracyError
from penalties import q_norm

logger = logging.getLogger(__name__)

SINGULAR_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FixedRankPoint:
    u: np.ndarray
    d: np.ndarray
    v: np.ndarray

    @property
    def rank(self):
        return self.d.size

    @property
    def shape(self):
        return self.u.shape[0], self.v.shape[0]

    @property
    def dense(self):
        return (self.u * self.d) @ self.v.T

    @property
    def pinv(self):
        """Moore-Penrose inverse v diag(1/d) u' (M x K)."""
        return (self.v / self.d) @ self.u.T

    @classmethod
    def from_matrix(cls, b, rank):
        """Best rank-``rank`` approximation of ``b`` by truncated SVD."""
        b = np.asarray(b, dtype=float)
        if not 1 <= rank <= min(b.shape):
            raise ValueError(f"rank {rank} out of range for a {b.shape[0]}x{b.shape[1]} matrix")
        u, s, vt = np.linalg.svd(b, full_matrices=False)
        if s[rank - 1] <= SINGULAR_TOL:
            raise RankDegeneracyError(f"singular value {rank} is {s[rank - 1]:.3e}; the matrix has lost rank")
        return cls(u=u[:, :rank], d=s[:rank], v=vt[:rank].T)


@dataclass(frozen=True, eq=False)
class TangentVector:
    m_core: np.ndarray
    u_p: np.ndarray
    v_p: np.ndarray
    base: FixedRankPoint

    def dense(self):
        p = self.base
        return p.u @ self.m_core @ p.v.T + self.u_p @ p.v.T + p.u @ self.v_p.T

    def scale(self, c):
        return TangentVector(c * self.m_core, c * self.u_p, c * self.v_p, self.base)

    def norm(self):
        return float(np.sqrt(np.sum(self.m_core**2) + np.sum(self.u_p**2) + np.sum(self.v_p**2)))


def _dense(x):
    return x.dense() if isinstance(x, TangentVector) else np.asarray(x, dtype=float)


def project_tangent(point, x):
    """Orthogonal projection of an ambient K x M matrix onto the tangent space at ``point``."""
    x = _dense(x)
    if x.shape != point.shape:
        raise ValueError(f"expected a {point.shape} matrix, got {x.shape}")
    u, v = point.u, point.v
    xv = x @ v
    core = u.T @ xv
    u_p = xv - u @ core
    v_p = x.T @ u - v @ core.T
    return TangentVector(m_core=core, u_p=u_p, v_p=v_p, base=point)


def normal_project(point, x):
    x = _dense(x)
    return x - project_tangent(point, x).dense()


def retract(point, delta):
    """Rank-R truncation of B + Delta, computed from a 2R x 2R core."""
    if not isinstance(delta, TangentVector):
        delta = project_tangent(point, delta)
    r = point.rank
    qu, ru = np.linalg.qr(delta.u_p)
    qv, rv = np.linalg.qr(delta.v_p)
    core = np.block([[np.diag(point.d) + delta.m_core, rv.T], [ru, np.zeros((r, r))]])
    ut, st, vtt = np.linalg.svd(core)
    if st[r - 1] <= SINGULAR_TOL:
        raise RankDegeneracyError(f"retraction drops rank: singular value {r} is {st[r - 1]:.3e}")
    u = np.hstack([point.u, qu]) @ ut[:, :r]
    v = np.hstack([point.v, qv]) @ vtt[:r].T
    return FixedRankPoint(u=u, d=st[:r], v=v)


def second_fundamental_form(point, delta1, delta2):
    """II(D1, D2) = P_normal(D1 B+ D2 + D2 B+ D1)."""
    d1, d2 = _dense(delta1), _dense(delta2)
    pinv = point.pinv
    return normal_project(point, d1 @ pinv @ d2 + d2 @ pinv @ d1)


def weingarten(point, normal, delta):
    """Shape operator W_N(D) = P_tangent(N D' B+' + B+' D' N), adjoint to II."""
    n, dl = _dense(normal), _dense(delta)
    pinv_t = point.pinv.T
    return project_tangent(point, n @ dl.T @ pinv_t + pinv_t @ dl.T @ n).dense()


def geodesic_integrate(point, delta, t_end=1.0, n_steps=100, return_speeds=False):
    """RK4 integration of the geodesic equation gamma'' = II(gamma', gamma').

    The velocity is re-projected onto the tangent space after every step.
    With ``return_speeds`` the Frobenius speed at each step is returned too.
    """
    r = point.rank
    y = point.dense
    vel = project_tangent(point, delta).dense()
    speeds = [float(np.linalg.norm(vel))]
    if t_end == 0:
        return (point, np.array(speeds)) if return_speeds else point

    h = t_end / n_steps

    def accel(y_, v_):
        p = FixedRankPoint.from_matrix(y_, r)
        vt = project_tangent(p, v_).dense()
        return second_fundamental_form(p, vt, vt)

    for _ in range(n_steps):
        k1y, k1v = vel, accel(y, vel)
        k2y = vel + h / 2 * k1v
        k2v = accel(y + h / 2 * k1y, k2y)
        k3y = vel + h / 2 * k2v
        k3v = accel(y + h / 2 * k2y, k3y)
        k4y = vel + h * k3v
        k4v = accel(y + h * k3y, k4y)
        y = y + h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
        vel = vel + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)

        current = FixedRankPoint.from_matrix(y, r)
        y = current.dense
        vel = project_tangent(current, vel).dense()
        speeds.append(float(np.linalg.norm(vel)))

    end = FixedRankPoint.from_matrix(y, r)
    return (end, np.array(speeds)) if return_speeds else end


def random_point(shape, rank, rng, spread=(1.0, 2.0)):
    k, m = shape
    u, _ = np.linalg.qr(rng.standard_normal((k, rank)))
    v, _ = np.linalg.qr(rng.standard_normal((m, rank)))
    d = np.sort(rng.uniform(*spread, size=rank))[::-1]
    return FixedRankPoint(u=u, d=d, v=v)


def random_tangent(point, rng, kind="full"):
    """Gaussian parameters (m_core, u_p, v_p) with orthogonality enforced by projection.

    ``kind="core"`` draws only the core block.
    """
    k, m = point.shape
    r = point.rank
    core = rng.standard_normal((r, r))
    if kind == "core":
        return TangentVector(core, np.zeros((k, r)), np.zeros((m, r)), point)
    u_p = rng.standard_normal((k, r))
    v_p = rng.standard_normal((m, r))
    u_p -= point.u @ (point.u.T @ u_p)
    v_p -= point.v @ (point.v.T @ v_p)
    return TangentVector(core, u_p, v_p, point)


def tangent_basis_rank(point):
    """Numerical rank of the span of all parameter-unit tangent directions."""
    k, m = point.shape
    r = point.rank
    vectors = []
    for block, shape in (("m_core", (r, r)), ("u_p", (k, r)), ("v_p", (m, r))):
        for idx in range(int(np.prod(shape))):
            params = {"m_core": np.zeros((r, r)), "u_p": np.zeros((k, r)), "v_p": np.zeros((m, r))}
            params[block].flat[idx] = 1.0
            if block == "u_p":
                params["u_p"] -= point.u @ (point.u.T @ params["u_p"])
            if block == "v_p":
                params["v_p"] -= point.v @ (point.v.T @ params["v_p"])
            vectors.append(TangentVector(base=point, **params).dense().ravel())
    return int(np.linalg.matrix_rank(np.array(vectors), tol=1e-10))


def curvature_ratio(point, spec, delta):
    """Q(II(D, D)) / Q(D)^2 for one tangent direction."""
    delta = _dense(delta)
    size = q_norm(spec, delta)
    if size == 0:
        return 0.0
    return q_norm(spec, second_fundamental_form(point, delta, delta)) / size**2


def curvature_bound_probe(point, spec, n_samples, rng=None, kind="full"):
    """Largest curvature ratio over random tangent directions."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(0) if rng is None else rng
    best = 0.0
    for _ in range(n_samples):
        best = max(best, curvature_ratio(point, spec, random_tangent(point, rng, kind=kind)))
    logger.debug("Curvature probe over %d directions: %.4e", n_samples, best)
    return best

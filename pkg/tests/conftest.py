import numpy as np
import pytest

from estimators import LossKind, TaskDataset
from processes import make_kernel
from simdiag import diagonalize
from spline_basis import make_basis


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def cubic_basis():
    return make_basis(20)


@pytest.fixture(scope="session")
def brownian_system():
    return diagonalize(make_basis(20), make_kernel("brownian"), 2)


@pytest.fixture(scope="session")
def demeaned_system():
    return diagonalize(make_basis(20), make_kernel("brownian_demeaned"), 2)


@pytest.fixture(scope="session")
def small_system():
    return diagonalize(make_basis(8), make_kernel("brownian"), 2)


def random_dataset(rng, n_tasks=4, n_obs=60, dof=8, kind="squared", intercept_mode="none", noise=0.3):
    """Gaussian designs with a smooth-ish coefficient matrix and responses of the given loss."""
    x = rng.standard_normal((n_tasks, n_obs, dof))
    b = rng.standard_normal((dof, n_tasks)) / np.arange(1, dof + 1)[:, None]
    u = np.einsum("mnk,km->mn", x, b)
    if kind == "logistic":
        y = rng.binomial(1, 1.0 / (1.0 + np.exp(-u))).astype(float)
    else:
        y = u + noise * rng.standard_normal(u.shape)
    loss = LossKind(kind=kind, smooth_eps=0.05 if kind == "quantile" else None)
    return TaskDataset(x=x, y=y, intercept_mode=intercept_mode, loss=loss), b

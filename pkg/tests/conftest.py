import numpy as np
import pytest

from src.params import LdsParams
from src.simulator import SimConfig, generate_params, simulate_series


def random_params(rng: np.random.Generator, p: int, d: int, radius: float = 0.8) -> LdsParams:
    A = rng.standard_normal((d, d))
    A *= radius / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
    return LdsParams(
        A=A,
        C=rng.standard_normal((p, d)),
        R_diag=rng.uniform(0.5, 1.5, p),
        pi0=rng.standard_normal(d),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_system():
    """p=20, d=2, T=80 simulated system with modest noise."""
    truth = generate_params(SimConfig(p=20, d=2, T=80, r_scale=0.1, seed=3))
    X, Y = simulate_series(truth, 80, 3)
    return truth, X, Y


@pytest.fixture(scope="module")
def lowdim_system():
    """p=300, d=10, T=100 simulated system."""
    truth = generate_params(SimConfig(p=300, d=10, T=100, seed=11))
    X, Y = simulate_series(truth, 100, 11)
    return truth, X, Y


def joint_gaussian(params: LdsParams, T: int):
    """Mean and covariance of the stacked (x_1..x_T, y_1..y_T)."""
    A, C, R = params.A, params.C, params.R_diag
    d, p = params.d, params.p
    powers = [np.linalg.matrix_power(A, k) for k in range(T + 1)]
    mean_x = np.concatenate([powers[t] @ params.pi0 for t in range(1, T + 1)])

    cov_x = np.zeros((d * T, d * T))
    for t in range(1, T + 1):
        for u in range(1, T + 1):
            block = sum(powers[t - s] @ powers[u - s].T for s in range(1, min(t, u) + 1))
            cov_x[(t - 1) * d : t * d, (u - 1) * d : u * d] = block
    big_C = np.kron(np.eye(T), C)
    cov_xy = cov_x @ big_C.T
    cov_y = big_C @ cov_x @ big_C.T + np.kron(np.eye(T), np.diag(R))
    return mean_x, big_C @ mean_x, cov_x, cov_xy, cov_y


def condition(params: LdsParams, Y: np.ndarray, upto: int | None = None):
    """Posterior mean/cov of x_1..x_T given y_1..y_upto."""
    d, p = params.d, params.p
    T = Y.shape[1]
    upto = T if upto is None else upto
    mean_x, mean_y, cov_x, cov_xy, cov_y = joint_gaussian(params, T)
    keep = slice(0, upto * p)
    gain = np.linalg.solve(cov_y[keep, keep], cov_xy[:, keep].T).T
    resid = Y[:, :upto].T.reshape(-1) - mean_y[keep]
    post_mean = mean_x + gain @ resid
    post_cov = cov_x - gain @ cov_xy[:, keep].T
    return post_mean.reshape(T, d).T, post_cov


import numpy as np

from src.errors import DataError
from src.params import LdsParams


def k_step_predict(A: np.ndarray, C: np.ndarray, x_T: np.ndarray, k: int) -> np.ndarray:
    """Noise-free rollout x_{T+i} = A x_{T+i-1}, y_{T+i} = C x_{T+i}; returns p x k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    states = np.empty((A.shape[0], k))
    x = np.asarray(x_T, dtype=float)
    for i in range(k):
        x = A @ x
        states[:, i] = x
    return C @ states


def state_covariances(A: np.ndarray, V_T: np.ndarray, k: int) -> list[np.ndarray]:
    """Sigma_i = A Sigma_{i-1} A^T + I from Sigma_0 = V_T, for i = 1..k."""
    covs = []
    sigma = np.asarray(V_T, dtype=float)
    eye = np.eye(A.shape[0])
    for _ in range(k):
        sigma = A @ sigma @ A.T + eye
        sigma = 0.5 * (sigma + sigma.T)
        covs.append(sigma)
    return covs


def predictive_variance(
    params: LdsParams,
    V_T: np.ndarray,
    k: int,
    voxel_subset,
) -> list[np.ndarray]:
    """Observation covariance C_S Sigma_i C_S^T + R_S over a row subset, i = 1..k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    subset = np.asarray(voxel_subset, dtype=int)
    if subset.size == 0:
        raise DataError("voxel subset must be non-empty")
    if subset.min() < 0 or subset.max() >= params.p:
        raise DataError(f"voxel subset indices must lie in 0..{params.p - 1}")
    C_S = params.C[subset]
    R_S = np.diag(params.R_diag[subset])
    return [C_S @ sigma @ C_S.T + R_S for sigma in state_covariances(params.A, V_T, k)]


def confidence_band(mean: np.ndarray, covariances: list[np.ndarray], z: float = 0.84) -> tuple[np.ndarray, np.ndarray]:
    """mean +/- z * (subset-average standard deviation) per horizon; mean is |S| x k."""
    halfwidth = np.array([z * np.mean(np.sqrt(np.diag(cov))) for cov in covariances])
    return mean - halfwidth[None, :], mean + halfwidth[None, :]

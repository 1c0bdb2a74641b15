from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SufficientStats:
    """Sums over t = 1..T that the M-step and the objective need.

    S_yy_diag: diag of sum y_t y_t^T (p,)
    S_yx: sum y_t x_hat_t^T (p, d)
    S_xx: sum P_hat_t (d, d)
    S_xx_lag: sum P_hat_{t-1} (d, d)
    S_cross: sum P_hat_{t,t-1} (d, d)
    """

    S_yy_diag: np.ndarray
    S_yx: np.ndarray
    S_xx: np.ndarray
    S_xx_lag: np.ndarray
    S_cross: np.ndarray
    T: int


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def accumulate_stats(moments, Y) -> SufficientStats:
    """Sufficient statistics from smoothed moments; no p x p matrix is formed."""
    Y = np.asarray(getattr(Y, "Y", Y), dtype=float)
    x_hat = moments.x_hat[:, 1:]
    return SufficientStats(
        S_yy_diag=np.einsum("it,it->i", Y, Y),
        S_yx=Y @ x_hat.T,
        S_xx=_sym(moments.P_hat[1:].sum(axis=0)),
        S_xx_lag=_sym(moments.P_hat[:-1].sum(axis=0)),
        S_cross=moments.P_cross.sum(axis=0),
        T=Y.shape[1],
    )

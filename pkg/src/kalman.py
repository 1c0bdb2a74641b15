"""E-step: Kalman filter and fixed-interval smoother for the reduced-rank LDS.

The observation covariance enters only through its diagonal.  Every inverse
of C V C^T + R goes through the Woodbury identity, so per time step the work
is O(p d + d^3) and no p x p array is ever allocated.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from src.errors import DataError, NumericalError
from src.params import LdsParams, ObservationSeries, as_observations, validate_params


# Cholesky pivots below this ratio count as singular for the Woodbury path.
_PIVOT_RATIO = 1e-6
_JITTER = 1e-10


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class GainApplier:
    """K z = V C^T (C V C^T + R)^{-1} z, applied as M C^T R^{-1} z.

    M = (V^{-1} + C^T R^{-1} C)^{-1} is also the filtered covariance.
    """

    M: np.ndarray
    C: np.ndarray
    R_inv: np.ndarray

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        weighted = z * self.R_inv if z.ndim == 1 else z * self.R_inv[:, None]
        return self.M @ (self.C.T @ weighted)

    def matrix(self) -> np.ndarray:
        """Dense d x p gain."""
        return self.M @ (self.C.T * self.R_inv)


def observation_gram(C: np.ndarray, R_diag: np.ndarray) -> np.ndarray:
    """C^T R^{-1} C, computed once per E-step."""
    return _sym(C.T @ (C / R_diag[:, None]))


def woodbury_gain(
    C: np.ndarray,
    R_diag: np.ndarray,
    V_pred: np.ndarray,
    gram: np.ndarray | None = None,
) -> GainApplier:
    if np.any(R_diag <= 0):
        raise DataError("R_diag must be strictly positive for the Kalman gain")
    d = V_pred.shape[0]
    eye = np.eye(d)
    G = observation_gram(C, R_diag) if gram is None else gram

    M = None
    try:
        factor = cho_factor(V_pred)
        pivots = np.abs(np.diag(factor[0]))
        if pivots.min() > _PIVOT_RATIO * pivots.max():
            V_inv = cho_solve(factor, eye)
            M = cho_solve(cho_factor(_sym(V_inv + G)), eye)
    except LinAlgError:
        M = None
    if M is None:
        # (I + V G)^{-1} V never inverts V; I + V G is nonsingular for PSD V, G.
        M = np.linalg.solve(eye + V_pred @ G, V_pred)
    return GainApplier(M=_sym(M), C=C, R_inv=1.0 / R_diag)


@dataclass(frozen=True)
class FilterState:
    """Forward pass; column/slice t refers to time t = 0..T (t = 0 is x_0 = pi0)."""

    x_pred: np.ndarray
    x_filt: np.ndarray
    V_pred: np.ndarray
    V_filt: np.ndarray
    KC_last: np.ndarray
    log_likelihood: float

    @property
    def T(self) -> int:
        return self.x_filt.shape[1] - 1


@dataclass(frozen=True)
class SmoothedMoments:
    """E-step output.

    x_hat: (d, T+1), column t = E[x_t | Y]
    V_hat: (T+1, d, d) smoothed covariances
    P_hat: (T+1, d, d), P_hat[t] = E[x_t x_t^T | Y]
    P_cross: (T, d, d), P_cross[t-1] = E[x_t x_{t-1}^T | Y] for t = 1..T
    """

    x_hat: np.ndarray
    V_hat: np.ndarray
    P_hat: np.ndarray
    P_cross: np.ndarray
    log_likelihood: float
    jitter_steps: tuple[int, ...] = ()

    @property
    def T(self) -> int:
        return self.x_hat.shape[1] - 1

    @property
    def d(self) -> int:
        return self.x_hat.shape[0]

    def permuted(self, order: np.ndarray) -> "SmoothedMoments":
        ix = np.ix_(np.arange(self.V_hat.shape[0]), order, order)
        cx = np.ix_(np.arange(self.P_cross.shape[0]), order, order)
        return SmoothedMoments(
            x_hat=self.x_hat[order],
            V_hat=self.V_hat[ix],
            P_hat=self.P_hat[ix],
            P_cross=self.P_cross[cx],
            log_likelihood=self.log_likelihood,
            jitter_steps=self.jitter_steps,
        )


def _check_inputs(params: LdsParams, Y: ObservationSeries) -> None:
    violations = validate_params(params, Y.p, params.d)
    if violations:
        raise DataError("invalid parameters for filtering: " + "; ".join(violations))
    if Y.T < 1:
        raise DataError("filtering needs at least one observation")


def forward_filter(params: LdsParams, Y: ObservationSeries) -> FilterState:
    Y = as_observations(Y)
    _check_inputs(params, Y)
    A, C, R = params.A, params.C, params.R_diag
    d, T = params.d, Y.T
    eye = np.eye(d)

    x_pred = np.zeros((d, T + 1))
    x_filt = np.zeros((d, T + 1))
    V_pred = np.zeros((T + 1, d, d))
    V_filt = np.zeros((T + 1, d, d))
    x_pred[:, 0] = x_filt[:, 0] = params.pi0

    R_inv = 1.0 / R
    G = observation_gram(C, R)
    logdet_R = float(np.sum(np.log(R)))
    loglik = 0.0
    gain = None

    for t in range(1, T + 1):
        x_pred[:, t] = A @ x_filt[:, t - 1]
        V_pred[t] = _sym(A @ V_filt[t - 1] @ A.T) + eye
        try:
            gain = woodbury_gain(C, R, V_pred[t], gram=G)
            _, logdet_inner = np.linalg.slogdet(eye + V_pred[t] @ G)
        except LinAlgError as exc:
            raise NumericalError(f"singular d x d solve in the Kalman update at t={t}", {"t": t}) from exc

        innov = Y.Y[:, t - 1] - C @ x_pred[:, t]
        w = C.T @ (innov * R_inv)
        x_filt[:, t] = x_pred[:, t] + gain.M @ w
        V_filt[t] = gain.M

        quad = float(innov @ (innov * R_inv) - w @ gain.M @ w)
        loglik -= 0.5 * (quad + logdet_R + logdet_inner)

    if not (np.all(np.isfinite(x_filt)) and np.isfinite(loglik)):
        raise NumericalError("non-finite values in the forward filter", {"log_likelihood": loglik})

    return FilterState(
        x_pred=x_pred,
        x_filt=x_filt,
        V_pred=V_pred,
        V_filt=V_filt,
        KC_last=gain.M @ G,
        log_likelihood=loglik,
    )


def _factor_pred(V: np.ndarray, t: int, jitter_steps: list[int]):
    try:
        return cho_factor(V)
    except LinAlgError:
        pass
    d = V.shape[0]
    jitter = _JITTER * (np.trace(V) / d if np.trace(V) > 0 else 1.0)
    logging.warning("Singular predicted covariance at t=%d, adding jitter %.3g", t, jitter)
    jitter_steps.append(t)
    try:
        return cho_factor(V + jitter * np.eye(d))
    except LinAlgError as exc:
        raise NumericalError(f"predicted covariance singular at t={t} even after jitter", {"t": t}) from exc


def backward_smooth(params: LdsParams, fs: FilterState) -> SmoothedMoments:
    A = params.A
    d, T = params.d, fs.T
    eye = np.eye(d)

    x_s = np.zeros((d, T + 1))
    V_s = np.zeros((T + 1, d, d))
    J = np.zeros((T, d, d))
    x_s[:, T] = fs.x_filt[:, T]
    V_s[T] = fs.V_filt[T]
    jitter_steps: list[int] = []

    for t in range(T, 0, -1):
        factor = _factor_pred(fs.V_pred[t], t, jitter_steps)
        # J_{t-1} = V_{t-1}^{t-1} A^T (V_t^{t-1})^{-1}
        J[t - 1] = cho_solve(factor, A @ fs.V_filt[t - 1]).T
        x_s[:, t - 1] = fs.x_filt[:, t - 1] + J[t - 1] @ (x_s[:, t] - fs.x_pred[:, t])
        V_s[t - 1] = _sym(fs.V_filt[t - 1] + J[t - 1] @ (V_s[t] - fs.V_pred[t]) @ J[t - 1].T)

    # cross[t] = Cov(x_t, x_{t-1} | Y)
    cross = np.zeros((T + 1, d, d))
    cross[T] = (eye - fs.KC_last) @ A @ fs.V_filt[T - 1]
    for t in range(T - 1, 0, -1):
        cross[t] = fs.V_filt[t] @ J[t - 1].T + J[t] @ (cross[t + 1] - A @ fs.V_filt[t]) @ J[t - 1].T

    P_hat = V_s + np.einsum("it,jt->tij", x_s, x_s)
    P_cross = cross[1:] + np.einsum("it,jt->tij", x_s[:, 1:], x_s[:, :-1])
    return SmoothedMoments(
        x_hat=x_s,
        V_hat=V_s,
        P_hat=P_hat,
        P_cross=P_cross,
        log_likelihood=fs.log_likelihood,
        jitter_steps=tuple(sorted(jitter_steps)),
    )


def e_step(params: LdsParams, Y: ObservationSeries) -> SmoothedMoments:
    return backward_smooth(params, forward_filter(params, Y))

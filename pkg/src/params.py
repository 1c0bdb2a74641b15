"""Parameter and data types of the reduced-rank LDS and its objective.

Model: x_t = A x_{t-1} + w_t, w_t ~ N(0, I), x_0 = pi0 (no initial variance);
y_t = C x_t + v_t, v_t ~ N(0, diag(R_diag)).  Q = I and V_0 = 0 are implied
and never stored, and R is only ever held as its diagonal.
"""

import math
import numbers
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from src.errors import ConfigError, DataError, DimensionError
from src.stats import SufficientStats, accumulate_stats

if TYPE_CHECKING:
    from src.kalman import SmoothedMoments

C_PENALTIES = {"whitened", "frobenius"}


def _frozen_array(value, name: str, ndim: int) -> np.ndarray:
    arr = np.array(value, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LdsParams:
    A: np.ndarray
    C: np.ndarray
    R_diag: np.ndarray
    pi0: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "A", _frozen_array(self.A, "A", 2))
        object.__setattr__(self, "C", _frozen_array(self.C, "C", 2))
        object.__setattr__(self, "R_diag", _frozen_array(self.R_diag, "R_diag", 1))
        object.__setattr__(self, "pi0", _frozen_array(self.pi0, "pi0", 1))

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def d(self) -> int:
        return self.C.shape[1]

    def replace(self, **changes) -> "LdsParams":
        values = {"A": self.A, "C": self.C, "R_diag": self.R_diag, "pi0": self.pi0}
        values.update(changes)
        return LdsParams(**values)


@dataclass(frozen=True)
class Hyperparams:
    lambda_A: float = 0.0
    lambda_C: float = 0.0
    d: int = 1
    max_em_iters: int = 30
    max_inner_iters: int = 30
    em_tol: float = 1e-6
    fista_tol: float = 1e-8
    c_penalty: str = "whitened"
    r_uses_old_c: bool = False

    def __post_init__(self) -> None:
        for name in ("lambda_A", "lambda_C"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")
        for name in ("d", "max_em_iters", "max_inner_iters"):
            value = getattr(self, name)
            integral = isinstance(value, numbers.Real) and not isinstance(value, bool) and float(value).is_integer()
            if not integral or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not self.em_tol > 0:
            raise ConfigError("em_tol must be > 0")
        if self.fista_tol < 0:
            raise ConfigError("fista_tol must be >= 0")
        if self.c_penalty not in C_PENALTIES:
            raise ConfigError(f"c_penalty must be one of {sorted(C_PENALTIES)}, got '{self.c_penalty}'")

    def check_data(self, p: int, T: int) -> None:
        if self.d > min(p, T):
            raise ConfigError(f"latent dimension d={self.d} exceeds min(p, T)={min(p, T)}")


@dataclass(frozen=True)
class ObservationSeries:
    """p x T observations, column t-1 holds y_t."""

    Y: np.ndarray

    def __post_init__(self) -> None:
        Y = _frozen_array(self.Y, "Y", 2)
        if Y.size == 0:
            raise DataError("observation matrix is empty")
        if not np.all(np.isfinite(Y)):
            raise DataError("observation matrix contains missing or non-finite values")
        object.__setattr__(self, "Y", Y)

    @property
    def p(self) -> int:
        return self.Y.shape[0]

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    def split(self, n_train: int) -> tuple["ObservationSeries", "ObservationSeries"]:
        if not 0 < n_train < self.T:
            raise DataError(f"split point {n_train} must lie strictly inside 1..{self.T}")
        return ObservationSeries(self.Y[:, :n_train]), ObservationSeries(self.Y[:, n_train:])


@dataclass(frozen=True)
class LatentSeries:
    """d x (T+1) latent states, column t holds x_t for t = 0..T."""

    X: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "X", _frozen_array(self.X, "X", 2))

    @property
    def T(self) -> int:
        return self.X.shape[1] - 1


def as_observations(Y) -> ObservationSeries:
    return Y if isinstance(Y, ObservationSeries) else ObservationSeries(Y)


def validate_params(params: LdsParams, p: int, d: int) -> list[str]:
    """Return every constraint violation found; an empty list means ok."""
    violations: list[str] = []
    if params.A.shape != (d, d):
        violations.append(f"A shape {params.A.shape} != ({d}, {d})")
    if params.C.shape[0] != p:
        violations.append(f"C row count {params.C.shape[0]} != p={p}")
    if params.C.shape[1] != d:
        violations.append(f"C column count {params.C.shape[1]} != d={d}")
    if params.R_diag.shape != (p,):
        violations.append(f"R_diag length {params.R_diag.shape[0]} != p={p}")
    if params.pi0.shape != (d,):
        violations.append(f"pi0 length {params.pi0.shape[0]} != d={d}")
    for name in ("A", "C", "R_diag", "pi0"):
        if not np.all(np.isfinite(getattr(params, name))):
            violations.append(f"{name} has non-finite entries")
    if np.any(params.R_diag <= 0):
        violations.append("R_diag not strictly positive")
    return violations


def canonical_order(C: np.ndarray) -> np.ndarray:
    """Column order of C by non-increasing norm; ties keep the original index order."""
    return np.argsort(-np.linalg.norm(C, axis=0), kind="stable")


def permute_params(params: LdsParams, order: np.ndarray) -> LdsParams:
    return LdsParams(
        A=params.A[np.ix_(order, order)],
        C=params.C[:, order],
        R_diag=params.R_diag,
        pi0=params.pi0[order],
    )


def canonicalize(params: LdsParams) -> LdsParams:
    return permute_params(params, canonical_order(params.C))


def _check_dims(params: LdsParams, p: int, d: int) -> None:
    violations = [v for v in validate_params(params, p, d) if "shape" in v or "length" in v or "count" in v]
    if violations:
        raise DimensionError("; ".join(violations))


def log_likelihood(params: LdsParams, X: LatentSeries, Y: ObservationSeries) -> float:
    """Complete-data log-likelihood, Gaussian normalizing constants dropped."""
    Y = as_observations(Y)
    X = X if isinstance(X, LatentSeries) else LatentSeries(X)
    _check_dims(params, Y.p, X.X.shape[0])
    if X.T != Y.T:
        raise DimensionError(f"latent series covers T={X.T} steps, observations T={Y.T}")
    if not np.array_equal(X.X[:, 0], params.pi0):
        return -math.inf

    obs_resid = Y.Y - params.C @ X.X[:, 1:]
    state_resid = X.X[:, 1:] - params.A @ X.X[:, :-1]
    return float(
        -0.5 * np.sum(obs_resid**2 / params.R_diag[:, None])
        - 0.5 * Y.T * np.sum(np.log(params.R_diag))
        - 0.5 * np.sum(state_resid**2)
    )


def c_penalty(C: np.ndarray, R_diag: np.ndarray, lambda_C: float, mode: str = "whitened") -> float:
    """Ridge penalty on C whose stationarity condition update_C solves.

    whitened: (lambda_C / 2) * sum_i ||c_i||^2 / r_i
    frobenius: (lambda_C / 2) * ||C||_F^2
    """
    if lambda_C == 0:
        return 0.0
    row_sq = np.sum(C**2, axis=1)
    if mode == "whitened":
        row_sq = row_sq / R_diag
    return 0.5 * lambda_C * float(np.sum(row_sq))


def objective_from_stats(params: LdsParams, stats: SufficientStats, hp: Hyperparams) -> float:
    """Expected penalized objective given precomputed sufficient statistics."""
    C, A, r = params.C, params.A, params.R_diag
    quad = np.einsum("ij,jk,ik->i", C, stats.S_xx, C)
    obs = 0.5 * np.sum((stats.S_yy_diag - 2.0 * np.sum(C * stats.S_yx, axis=1) + quad) / r)
    obs += 0.5 * stats.T * np.sum(np.log(r))
    state = 0.5 * (
        np.trace(stats.S_xx) - 2.0 * np.sum(A * stats.S_cross) + np.sum((A @ stats.S_xx_lag) * A)
    )
    penalty = hp.lambda_A * float(np.sum(np.abs(A))) + c_penalty(C, r, hp.lambda_C, hp.c_penalty)
    return float(obs + state + penalty)


def penalized_objective(
    params: LdsParams,
    moments: "SmoothedMoments",
    Y: ObservationSeries,
    hp: Hyperparams,
) -> float:
    """E[Phi(theta, Y, X)] under the smoothed moments, plus the penalties.

    Every X-dependent quadratic is expanded through x_hat, P_hat and P_cross,
    so this equals -log_likelihood (plus penalties) for point-mass moments.
    """
    Y = as_observations(Y)
    _check_dims(params, Y.p, moments.x_hat.shape[0])
    if moments.T != Y.T:
        raise DimensionError(f"moments cover T={moments.T} steps, observations T={Y.T}")
    if not np.array_equal(moments.x_hat[:, 0], params.pi0):
        return math.inf
    return objective_from_stats(params, accumulate_stats(moments, Y), hp)

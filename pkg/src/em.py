"""Penalized EM for the reduced-rank LDS.

Loop: initialize (SVD + VAR) -> E-step -> M-step (C, R, pi0, A) -> E-step ...
Each M substep exactly minimizes the expected penalized objective over its
block (A through guarded FISTA), so EM is a majorize-minimize scheme for the
penalized negative marginal log-likelihood recorded in `marginal_trace`.
"""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh, lstsq, svd

from src.errors import DataError, NumericalError
from src.kalman import SmoothedMoments, e_step
from src.params import (
    Hyperparams,
    LdsParams,
    ObservationSeries,
    as_observations,
    c_penalty,
    canonical_order,
    objective_from_stats,
    permute_params,
)
from src.proximal import QuadraticProblem, fista_solve
from src.stats import SufficientStats, accumulate_stats


R_FLOOR_FRACTION = 1e-8


@dataclass(frozen=True)
class SvdBaseline:
    """Pieces of the SVD/VAR initializer, reused as the forecasting baseline.

    X is the d x T latent proxy D V^T; column t-1 stands for x_t.
    """

    C: np.ndarray
    A: np.ndarray
    X: np.ndarray


@dataclass(frozen=True)
class FitReport:
    params: LdsParams
    objective_trace: list[float]
    marginal_trace: list[float]
    iterations_run: int
    converged: bool
    moments: SmoothedMoments
    baseline: SvdBaseline
    elapsed_seconds: float = 0.0
    jitter_steps: int = 0
    history: list[dict] = field(default_factory=list)


def _r_floor(stats: SufficientStats) -> float:
    scale = float(np.max(stats.S_yy_diag)) / stats.T
    return R_FLOOR_FRACTION * scale if scale > 0 else R_FLOOR_FRACTION


def update_R(
    stats: SufficientStats,
    C_new: np.ndarray,
    T: int,
    *,
    expected_residual: bool = False,
) -> np.ndarray:
    """diag{(1/T) sum_t (y_t y_t^T - C x_hat_t y_t^T)}, floored.

    This is the exact minimiser of the whitened-penalty objective given C_new.
    With expected_residual the full expected squared residual
    (S_yy - 2 C.S_yx + C S_xx C^T)/T is used instead; when C_new solves the
    whitened normal equations it is smaller by lambda_C ||c_i||^2 / T, so the
    two forms agree only for lambda_C = 0.
    """
    if T < 1:
        raise DataError("T must be >= 1")
    fit_term = np.sum(C_new * stats.S_yx, axis=1)
    if expected_residual:
        quad = np.einsum("ij,jk,ik->i", C_new, stats.S_xx, C_new)
        R = (stats.S_yy_diag - 2.0 * fit_term + quad) / T
    else:
        R = (stats.S_yy_diag - fit_term) / T
    return np.maximum(R, _r_floor(stats))


def update_pi0(moments: SmoothedMoments) -> np.ndarray:
    return moments.x_hat[:, 0].copy()


def update_C(
    stats: SufficientStats,
    lambda_C: float,
    R_diag: np.ndarray,
    penalty: str = "whitened",
) -> np.ndarray:
    """Row-wise ridge normal equations (S_xx + lambda_C W_i) c_i = (S_yx)_i.

    whitened: W_i = I for every row, one shared Cholesky factor.
    frobenius: W_i = r_i I, solved through one eigendecomposition of S_xx.
    """
    d = stats.S_xx.shape[0]
    if penalty == "whitened":
        try:
            factor = cho_factor(stats.S_xx + lambda_C * np.eye(d))
        except LinAlgError as exc:
            raise NumericalError(
                "S_xx + lambda_C I is singular; use lambda_C > 0",
                {"lambda_C": lambda_C},
            ) from exc
        return cho_solve(factor, stats.S_yx.T).T

    evals, evecs = eigh(stats.S_xx)
    denom = evals[None, :] + lambda_C * R_diag[:, None]
    if np.min(denom) <= 1e-12 * max(1.0, float(np.max(np.abs(evals)))):
        raise NumericalError("S_xx + lambda_C r_i I is singular; use lambda_C > 0", {"lambda_C": lambda_C})
    return ((stats.S_yx @ evecs) / denom) @ evecs.T


def update_A(
    stats: SufficientStats,
    lambda_A: float,
    A_old: np.ndarray,
    max_inner: int,
    tol: float = 1e-8,
) -> np.ndarray:
    """argmin_A 1/2 tr(A S_lag A^T) - tr(A S_cross^T) + lambda_A ||A||_1."""
    if lambda_A < 0:
        raise ValueError("lambda_A must be >= 0")
    if lambda_A == 0:
        try:
            factor = cho_factor(stats.S_xx_lag)
            return cho_solve(factor, stats.S_cross.T).T
        except LinAlgError:
            logging.warning("S_xx_lag is singular; falling back to FISTA for the A update")
    problem = QuadraticProblem(gram=stats.S_xx_lag, linear=stats.S_cross, lam=lambda_A)
    return fista_solve(problem, A_old, max_inner, tol).solution


def svd_baseline(Y: ObservationSeries, d: int) -> SvdBaseline:
    Y = as_observations(Y)
    if d > min(Y.p, Y.T):
        raise DataError(f"d={d} exceeds min(p, T)={min(Y.p, Y.T)}")
    if Y.T < 2:
        raise DataError("the VAR(1) initializer needs at least two time points")
    U, s, Vt = svd(Y.Y, full_matrices=False)
    tol = max(Y.p, Y.T) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if rank < d:
        raise DataError(f"observations have rank {rank} < d={d}; the achievable rank is {rank}")

    X = s[:d, None] * Vt[:d]
    past, future = X[:, :-1], X[:, 1:]
    A = lstsq(past.T, future.T)[0].T
    return SvdBaseline(C=U[:, :d].copy(), A=A, X=X)


def initialize(Y: ObservationSeries, d: int) -> LdsParams:
    """C = U_d, A from VAR(1) on D V^T, R = 1, pi0 = 0."""
    Y = as_observations(Y)
    base = svd_baseline(Y, d)
    return LdsParams(A=base.A, C=base.C, R_diag=np.ones(Y.p), pi0=np.zeros(d))


def m_step(
    params: LdsParams,
    stats: SufficientStats,
    moments: SmoothedMoments,
    hp: Hyperparams,
) -> LdsParams:
    frobenius = hp.c_penalty == "frobenius"
    if hp.r_uses_old_c:
        R = update_R(stats, params.C, stats.T)
        C = update_C(stats, hp.lambda_C, R, hp.c_penalty)
    else:
        C = update_C(stats, hp.lambda_C, params.R_diag, hp.c_penalty)
        R = update_R(stats, C, stats.T, expected_residual=frobenius)
    pi0 = update_pi0(moments)
    A = update_A(stats, hp.lambda_A, params.A, hp.max_inner_iters, hp.fista_tol)
    return LdsParams(A=A, C=C, R_diag=R, pi0=pi0)


def parameter_change(old: LdsParams, new: LdsParams) -> float:
    """Largest relative Frobenius change over the parameter blocks."""
    change = 0.0
    for name in ("A", "C", "R_diag", "pi0"):
        before, after = getattr(old, name), getattr(new, name)
        delta = float(np.linalg.norm(after - before))
        if delta == 0.0:
            continue
        change = max(change, delta / max(float(np.linalg.norm(before)), np.finfo(float).tiny))
    return change


def penalty_value(params: LdsParams, hp: Hyperparams) -> float:
    return hp.lambda_A * float(np.sum(np.abs(params.A))) + c_penalty(
        params.C, params.R_diag, hp.lambda_C, hp.c_penalty
    )


def fit(Y: ObservationSeries, hp: Hyperparams) -> FitReport:
    Y = as_observations(Y)
    hp.check_data(Y.p, Y.T)
    started = time.perf_counter()

    baseline = svd_baseline(Y, hp.d)
    params = LdsParams(A=baseline.A, C=baseline.C, R_diag=np.ones(Y.p), pi0=np.zeros(hp.d))
    objective_trace: list[float] = []
    marginal_trace: list[float] = []
    history: list[dict] = []
    jitter_steps = 0
    converged = False
    iterations = 0

    logging.info("EM start p=%d T=%d d=%d lambda_A=%.3g lambda_C=%.3g", Y.p, Y.T, hp.d, hp.lambda_A, hp.lambda_C)
    moments = e_step(params, Y)
    for iterations in range(1, hp.max_em_iters + 1):
        marginal_trace.append(-moments.log_likelihood + penalty_value(params, hp))
        jitter_steps += len(moments.jitter_steps)
        stats = accumulate_stats(moments, Y)

        new_params = m_step(params, stats, moments, hp)
        objective = objective_from_stats(new_params, stats, hp)
        change = parameter_change(params, new_params)
        if not math.isfinite(objective):
            raise NumericalError(
                f"non-finite objective at EM iteration {iterations}",
                {"iteration": iterations, "params": new_params, "objective_trace": objective_trace},
            )
        objective_trace.append(objective)
        history.append({"iteration": iterations, "objective": objective, "change": change})
        logging.info("EM iter %d objective=%.10g change=%.3g", iterations, objective, change)

        params = new_params
        moments = e_step(params, Y)
        if change < hp.em_tol:
            converged = True
            break

    marginal_trace.append(-moments.log_likelihood + penalty_value(params, hp))
    jitter_steps += len(moments.jitter_steps)

    order = canonical_order(params.C)
    elapsed = time.perf_counter() - started
    logging.info(
        "EM finished after %d iterations (converged=%s) in %.2f s", iterations, converged, elapsed
    )
    return FitReport(
        params=permute_params(params, order),
        objective_trace=objective_trace,
        marginal_trace=marginal_trace,
        iterations_run=iterations,
        converged=converged,
        moments=moments.permuted(order),
        baseline=baseline,
        elapsed_seconds=elapsed,
        jitter_steps=jitter_steps,
        history=history,
    )

"""Permutation- and scale-invariant comparisons of parameter matrices."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from src.errors import DataError, DimensionError, NumericalError


@dataclass(frozen=True)
class AssignmentResult:
    """permutation[j] is the column of A matched to column j of B."""

    permutation: np.ndarray
    total_correlation: float
    distance: float
    degenerate: bool = False


@dataclass(frozen=True)
class PredictionScores:
    mse: float
    correlation: float
    correlation_defined: bool = True


def _centered_columns(M: np.ndarray, label: str) -> tuple[np.ndarray, np.ndarray]:
    centered = M - M.mean(axis=0, keepdims=True)
    norms = np.linalg.norm(centered, axis=0)
    flat = np.flatnonzero(norms <= np.finfo(float).eps * max(1.0, float(np.max(np.abs(M), initial=0.0))))
    if flat.size:
        raise DataError(f"column {int(flat[0])} of {label} has zero variance")
    return centered, norms


def column_correlation_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """|Pearson correlation| between column i of A and column j of B."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2:
        raise DimensionError(f"matrices must share a 2-D shape, got {A.shape} and {B.shape}")
    Ac, a_norm = _centered_columns(A, "A")
    Bc, b_norm = _centered_columns(B, "B")
    corr = np.abs(Ac.T @ Bc) / np.outer(a_norm, b_norm)
    return np.minimum(corr, 1.0)


def hungarian_assign(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Permutation minimizing sum_i cost[i, perm[i]]."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DimensionError(f"cost matrix must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise DataError("cost matrix has non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=int)
    perm[rows] = cols
    return perm, float(cost[rows, cols].sum())


def subspace_distance(A: np.ndarray, B: np.ndarray) -> AssignmentResult:
    """d(A, B) = log(n / max_P trace(P C_{A,B}))."""
    corr = column_correlation_matrix(A, B)
    n = corr.shape[0]
    match, neg_total = hungarian_assign(-corr)
    total = -neg_total
    permutation = np.empty(n, dtype=int)
    permutation[match] = np.arange(n)
    if total <= 0:
        return AssignmentResult(permutation, total, math.inf, degenerate=True)
    return AssignmentResult(permutation, total, max(math.log(n / total), 0.0))


def amari_error(A: np.ndarray, A_hat: np.ndarray) -> float:
    A = np.asarray(A, dtype=float)
    A_hat = np.asarray(A_hat, dtype=float)
    if A.shape != A_hat.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"Amari error needs two square matrices of one shape, got {A.shape} and {A_hat.shape}")
    try:
        P = np.abs(np.linalg.solve(A, A_hat))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("reference matrix is singular") from exc
    if not np.all(np.isfinite(P)):
        raise NumericalError("reference matrix is singular")
    row_max = P.max(axis=1, keepdims=True)
    col_max = P.max(axis=0, keepdims=True)
    if np.any(row_max == 0) or np.any(col_max == 0):
        raise NumericalError("A^{-1} A_hat has an all-zero row or column")
    return float(np.sum(P.sum(axis=1) / row_max[:, 0] - 1.0) + np.sum(P.sum(axis=0) / col_max[0] - 1.0))


def prediction_scores(Y_true: np.ndarray, Y_pred: np.ndarray) -> PredictionScores:
    Y_true = np.asarray(Y_true, dtype=float)
    Y_pred = np.asarray(Y_pred, dtype=float)
    if Y_true.shape != Y_pred.shape:
        raise DimensionError(f"prediction shape {Y_pred.shape} != truth shape {Y_true.shape}")
    mse = float(np.mean((Y_true - Y_pred) ** 2))

    a = Y_true.ravel() - Y_true.mean()
    b = Y_pred.ravel() - Y_pred.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        logging.warning("Correlation undefined for constant input; reporting mse only")
        return PredictionScores(mse=mse, correlation=math.nan, correlation_defined=False)
    return PredictionScores(mse=mse, correlation=float(a @ b / denom))

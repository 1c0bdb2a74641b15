"""Constant-step FISTA for F(x) = g(x) + lambda * ||x||_1 with quadratic g.

g(X) = 1/2 tr(X gram X^T) - tr(X linear^T), so grad g(X) = X gram - linear.
X may be a vector or a matrix whose rows share the same gram; the A-update
passes the d x d matrix directly instead of a block-diagonal design.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvalsh

from src.errors import DataError, NumericalError


_SYM_TOL = 1e-12


def soft_threshold(y, lam: float):
    """S_lam(y) = (|y| - lam)_+ sign(y), entrywise."""
    if lam < 0:
        raise ValueError("soft-threshold level must be >= 0")
    return np.sign(y) * np.maximum(np.abs(y) - lam, 0.0)


def lipschitz_bound(gram: np.ndarray) -> float:
    """Largest eigenvalue of gram, the Lipschitz constant of grad g."""
    gram = np.asarray(gram, dtype=float)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise DataError(f"gram must be square, got shape {gram.shape}")
    scale = max(1.0, float(np.max(np.abs(gram))) if gram.size else 1.0)
    if np.max(np.abs(gram - gram.T), initial=0.0) > _SYM_TOL * scale:
        raise DataError("gram matrix is not symmetric")
    n = gram.shape[0]
    return float(eigvalsh(0.5 * (gram + gram.T), subset_by_index=[n - 1, n - 1])[0])


@dataclass(frozen=True)
class QuadraticProblem:
    gram: np.ndarray
    linear: np.ndarray
    lam: float = 0.0

    def smooth(self, X: np.ndarray) -> float:
        return float(0.5 * np.sum((X @ self.gram) * X) - np.sum(X * self.linear))

    def gradient(self, X: np.ndarray) -> np.ndarray:
        return X @ self.gram - self.linear

    def objective(self, X: np.ndarray) -> float:
        return self.smooth(X) + self.lam * float(np.sum(np.abs(X)))


@dataclass(frozen=True)
class FistaResult:
    solution: np.ndarray
    objective_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def fista_solve(prob: QuadraticProblem, x0: np.ndarray, max_iters: int, tol: float = 1e-8) -> FistaResult:
    """Returns the best point seen (x0 included) and F(x_k) for k = 1..iterations."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    L = lipschitz_bound(prob.gram)
    if not L > 0:
        raise NumericalError(f"Lipschitz constant must be positive, got {L}")
    step = 1.0 / L

    x_prev = np.array(x0, dtype=float)
    y = x_prev.copy()
    t = 1.0
    best, best_value = x_prev.copy(), prob.objective(x_prev)
    trace: list[float] = []
    converged = False

    for _ in range(max_iters):
        grad = prob.gradient(y)
        if not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite gradient in FISTA", {"iteration": len(trace) + 1})
        x = soft_threshold(y - step * grad, step * prob.lam)
        value = prob.objective(x)
        trace.append(value)
        if value < best_value:
            best, best_value = x.copy(), value

        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x + ((t - 1.0) / t_next) * (x - x_prev)
        x_prev, t = x, t_next

        if len(trace) > 1 and abs(trace[-1] - trace[-2]) / max(1.0, abs(trace[-1])) < tol:
            converged = True
            break

    logging.debug("FISTA stopped after %d iterations, F=%.10g", len(trace), best_value)
    return FistaResult(solution=best, objective_trace=trace, iterations=len(trace), converged=converged)

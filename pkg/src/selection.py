"""Choosing the latent dimension and the penalty pair.

Latent dimension: the singular values, sorted so s_1 >= ... >= s_n, are split at
q into a leading and a trailing group.  Each group gets its own mean, both
share one variance, and all three are set to their maximum-likelihood values:

    mu_1 = mean(s_1..s_q),  mu_2 = mean(s_{q+1}..s_n)
    sigma^2 = (sum_{i<=q} (s_i - mu_1)^2 + sum_{i>q} (s_i - mu_2)^2) / n
    l(q) = -(n/2) (log(2 pi sigma^2) + 1)

The selected dimension maximizes l(q) over q = 1..d_max; the first maximizer
wins ties.  sigma^2 is floored at (eps * s_1)^2 so spectra without spread give
a flat profile instead of infinities.

Penalty pair: prefix/suffix split of the series, fit on the prefix, score
the k-step forecast against the suffix.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import svdvals
from tqdm import tqdm

from src.em import fit
from src.errors import DataError, LdsError
from src.forecast import k_step_predict
from src.metrics import prediction_scores
from src.params import Hyperparams, LdsParams, ObservationSeries, as_observations


def singular_values(Y: ObservationSeries) -> np.ndarray:
    return svdvals(as_observations(Y).Y)


def profile_likelihood_d(singular_values, d_max: int | None = None) -> tuple[int, np.ndarray]:
    """Returns (selected q, profile values for q = 1..d_max); skipped splits are NaN."""
    s = np.sort(np.asarray(singular_values, dtype=float))[::-1]
    n = s.size
    if n < 3:
        raise DataError("profile likelihood needs at least 3 singular values")
    if np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise DataError("singular values must be finite and positive")
    d_max = n - 1 if d_max is None else int(d_max)
    if d_max < 1:
        raise DataError("d_max must be >= 1")
    if d_max > n:
        logging.warning("d_max=%d exceeds the %d singular values; using %d", d_max, n, n)
        d_max = n

    floor = (np.finfo(float).eps * s[0]) ** 2
    profile = np.full(d_max, np.nan)
    for q in range(1, d_max + 1):
        head, tail = s[:q], s[q:]
        if tail.size == 0:
            continue
        sigma2 = (np.sum((head - head.mean()) ** 2) + np.sum((tail - tail.mean()) ** 2)) / n
        sigma2 = max(sigma2, floor)
        profile[q - 1] = -0.5 * n * (math.log(2.0 * math.pi * sigma2) + 1.0)
    if np.all(np.isnan(profile)):
        raise DataError("no admissible split of the singular values")
    return int(np.nanargmax(profile)) + 1, profile


@dataclass(frozen=True)
class SweepPoint:
    lambda_A: float
    lambda_C: float
    mse: float = math.nan
    correlation: float = math.nan
    objective: float = math.nan
    iterations: int = 0
    converged: bool = False
    error: str = ""
    params: LdsParams | None = None


@dataclass(frozen=True)
class SweepResult:
    grid: list[tuple[float, float]]
    points: list[SweepPoint]
    best: int | None
    n_train: int = 0
    horizon: int = 0
    scores: list[dict] = field(default_factory=list)


def _select_best(points: list[SweepPoint]) -> int | None:
    candidates = [i for i, pt in enumerate(points) if not pt.error and math.isfinite(pt.correlation)]
    if not candidates:
        return None
    return min(candidates, key=lambda i: (-points[i].correlation, points[i].lambda_C, points[i].lambda_A))


def _evaluate_pair(
    train: ObservationSeries,
    test: np.ndarray,
    hp_base: Hyperparams,
    pair: tuple[float, float],
    horizon: int,
) -> SweepPoint:
    lambda_A, lambda_C = pair
    try:
        hp = replace(hp_base, lambda_A=float(lambda_A), lambda_C=float(lambda_C))
        report = fit(train, hp)
        x_T = report.moments.x_hat[:, -1]
        prediction = k_step_predict(report.params.A, report.params.C, x_T, horizon)
        scores = prediction_scores(test[:, :horizon], prediction)
    except (LdsError, ValueError, np.linalg.LinAlgError) as exc:
        logging.warning("Sweep point lambda_A=%.3g lambda_C=%.3g failed: %s", lambda_A, lambda_C, exc)
        return SweepPoint(lambda_A=lambda_A, lambda_C=lambda_C, error=str(exc))
    return SweepPoint(
        lambda_A=lambda_A,
        lambda_C=lambda_C,
        mse=scores.mse,
        correlation=scores.correlation,
        objective=report.objective_trace[-1] if report.objective_trace else math.nan,
        iterations=report.iterations_run,
        converged=report.converged,
        params=report.params,
    )


def lambda_sweep(
    Y: ObservationSeries,
    hp_base: Hyperparams,
    grid,
    train_fraction: float,
    horizon: int,
    workers: int = 1,
    progress: bool = False,
) -> SweepResult:
    Y = as_observations(Y)
    grid = [(float(a), float(c)) for a, c in grid]
    if not grid:
        raise DataError("the penalty grid is empty")
    if not 0.0 < train_fraction < 1.0:
        raise DataError("train_fraction must lie strictly between 0 and 1")
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    n_train = int(math.floor(train_fraction * Y.T))
    if Y.T - n_train < horizon:
        raise DataError(f"held-out suffix has {Y.T - n_train} points, fewer than horizon={horizon}")
    train, test = Y.split(n_train)

    logging.info("Sweeping %d penalty pairs (train=%d, horizon=%d, workers=%d)", len(grid), n_train, horizon, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_evaluate_pair, train, test.Y, hp_base, pair, horizon) for pair in grid]
        points = [future.result() for future in tqdm(futures, desc="sweep", disable=not progress)]

    best = _select_best(points)
    if best is None:
        logging.warning("No penalty pair produced a valid score")
    scores = [
        {
            "lambda_A": pt.lambda_A,
            "lambda_C": pt.lambda_C,
            "mse": pt.mse,
            "correlation": pt.correlation,
            "objective": pt.objective,
            "iterations": pt.iterations,
            "converged": pt.converged,
            "error": pt.error,
        }
        for pt in points
    ]
    return SweepResult(grid=grid, points=points, best=best, n_train=n_train, horizon=horizon, scores=scores)

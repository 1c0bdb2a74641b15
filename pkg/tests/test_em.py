import logging

import numpy as np
import pytest

from src.em import (
    fit,
    initialize,
    m_step,
    svd_baseline,
    update_A,
    update_C,
    update_R,
)
from src.errors import ConfigError, DataError
from src.kalman import e_step
from src.metrics import subspace_distance
from src.params import Hyperparams, ObservationSeries, objective_from_stats
from src.simulator import SimConfig, generate_params, simulate_series
from src.stats import SufficientStats, accumulate_stats


def test_initialize_uses_leading_singular_vectors(small_system):
    _, _, Y = small_system
    params = initialize(Y, 2)
    U, s, Vt = np.linalg.svd(Y.Y, full_matrices=False)
    np.testing.assert_allclose(np.abs(params.C), np.abs(U[:, :2]), atol=1e-10)
    np.testing.assert_array_equal(params.R_diag, np.ones(Y.p))
    np.testing.assert_array_equal(params.pi0, np.zeros(2))

    X = s[:2, None] * Vt[:2]
    expected_A = np.linalg.lstsq(X[:, :-1].T, X[:, 1:].T, rcond=None)[0].T
    # singular vectors are defined up to sign
    np.testing.assert_allclose(np.abs(params.A), np.abs(expected_A), atol=1e-8)


def test_svd_baseline_rank_deficient():
    Y = np.outer(np.arange(1.0, 6.0), np.arange(1.0, 9.0))
    with pytest.raises(DataError, match="rank 1"):
        svd_baseline(ObservationSeries(Y), 2)
    with pytest.raises(DataError):
        svd_baseline(ObservationSeries(np.ones((4, 1))), 1)


def test_update_R_closed_form(small_system):
    truth, _, Y = small_system
    stats = accumulate_stats(e_step(truth, Y), Y)
    C = update_C(stats, 0.5, truth.R_diag)
    R = update_R(stats, C, stats.T)
    np.testing.assert_allclose(R, (stats.S_yy_diag - np.sum(C * stats.S_yx, axis=1)) / stats.T)
    full = update_R(stats, C, stats.T, expected_residual=True)
    np.testing.assert_allclose(full + 0.5 * np.sum(C**2, axis=1) / stats.T, R, rtol=1e-8)

    C0 = update_C(stats, 0.0, truth.R_diag)
    np.testing.assert_allclose(
        update_R(stats, C0, stats.T, expected_residual=True), update_R(stats, C0, stats.T), rtol=1e-8
    )


def test_update_R_floor():
    stats = SufficientStats(
        S_yy_diag=np.array([1.0, 4.0]),
        S_yx=np.array([[1.0], [0.0]]),
        S_xx=np.eye(1),
        S_xx_lag=np.eye(1),
        S_cross=np.zeros((1, 1)),
        T=2,
    )
    R = update_R(stats, np.array([[1.0], [0.0]]), 2)
    assert R[0] == pytest.approx(1e-8 * 2.0)
    assert R[1] == pytest.approx(2.0)
    with pytest.raises(DataError):
        update_R(stats, np.zeros((2, 1)), 0)


def test_update_C_matches_row_ridge(small_system):
    truth, _, Y = small_system
    stats = accumulate_stats(e_step(truth, Y), Y)
    lam = 3.0
    C = update_C(stats, lam, truth.R_diag, "whitened")
    expected = np.linalg.solve(stats.S_xx + lam * np.eye(2), stats.S_yx.T).T
    np.testing.assert_allclose(C, expected, rtol=1e-10)

    R = np.linspace(0.5, 2.0, Y.p)
    C = update_C(stats, lam, R, "frobenius")
    for i in (0, 7, Y.p - 1):
        row = np.linalg.solve(stats.S_xx + lam * R[i] * np.eye(2), stats.S_yx[i])
        np.testing.assert_allclose(C[i], row, rtol=1e-8)


def test_update_A_unpenalized_is_least_squares(small_system):
    truth, _, Y = small_system
    stats = accumulate_stats(e_step(truth, Y), Y)
    A = update_A(stats, 0.0, truth.A, 30)
    np.testing.assert_allclose(A, np.linalg.solve(stats.S_xx_lag, stats.S_cross.T).T, rtol=1e-10)
    with pytest.raises(ValueError):
        update_A(stats, -1.0, truth.A, 30)


def test_large_lambda_A_gives_zero_transition(small_system):
    truth, _, Y = small_system
    stats = accumulate_stats(e_step(truth, Y), Y)
    huge = 10.0 * float(np.max(np.abs(stats.S_cross)))
    np.testing.assert_array_equal(update_A(stats, huge, np.zeros((2, 2)), 50), np.zeros((2, 2)))


@pytest.mark.parametrize("hp_kwargs", [{}, {"lambda_A": 0.5, "lambda_C": 2.0}, {"c_penalty": "frobenius", "lambda_C": 1.0}])
def test_each_m_substep_decreases_objective(small_system, hp_kwargs):
    _, _, Y = small_system
    hp = Hyperparams(d=2, **hp_kwargs)
    params = initialize(Y, 2)
    moments = e_step(params, Y)
    stats = accumulate_stats(moments, Y)

    before = objective_from_stats(params, stats, hp)
    params = params.replace(C=update_C(stats, hp.lambda_C, params.R_diag, hp.c_penalty))
    after_C = objective_from_stats(params, stats, hp)
    params = params.replace(
        R_diag=update_R(stats, params.C, stats.T, expected_residual=hp.c_penalty == "frobenius")
    )
    after_R = objective_from_stats(params, stats, hp)
    params = params.replace(A=update_A(stats, hp.lambda_A, params.A, hp.max_inner_iters))
    after_A = objective_from_stats(params, stats, hp)

    tol = 1e-9 * abs(before)
    assert after_C <= before + tol
    assert after_R <= after_C + tol
    assert after_A <= after_R + tol

    full = m_step(initialize(Y, 2), stats, moments, hp)
    np.testing.assert_allclose(objective_from_stats(full, stats, hp), after_A, rtol=1e-10)


@pytest.mark.parametrize("lam", [0.0, 1e-3, 1.0])
def test_em_marginal_trace_non_increasing(lowdim_system, lam):
    _, _, Y = lowdim_system
    report = fit(Y, Hyperparams(d=10, lambda_A=lam, lambda_C=lam, max_em_iters=30))
    trace = np.array(report.marginal_trace)
    assert len(trace) == report.iterations_run + 1
    assert len(report.objective_trace) == report.iterations_run
    steps = np.diff(trace)
    assert np.all(steps <= 1e-6 * np.abs(trace[:-1]))


def test_fit_report_is_canonical(small_system):
    _, _, Y = small_system
    report = fit(Y, Hyperparams(d=2, lambda_A=1e-3, lambda_C=1e-3, max_em_iters=10))
    norms = np.linalg.norm(report.params.C, axis=0)
    assert np.all(np.diff(norms) <= 0)
    np.testing.assert_array_equal(report.moments.x_hat[:, 0], report.params.pi0)
    assert report.moments.x_hat.shape == (2, Y.T + 1)
    assert report.elapsed_seconds >= 0
    assert len(report.history) == report.iterations_run


def test_fit_reconstructs_observations(small_system):
    _, _, Y = small_system
    report = fit(Y, Hyperparams(d=2, max_em_iters=20))
    recon = report.params.C @ report.moments.x_hat[:, 1:]
    assert np.linalg.norm(Y.Y - recon) / np.linalg.norm(Y.Y) < 0.35


def test_fit_converges_with_loose_tolerance(small_system):
    _, _, Y = small_system
    report = fit(Y, Hyperparams(d=2, max_em_iters=200, em_tol=1e-2))
    assert report.converged
    assert report.iterations_run < 200


def test_fit_logs_each_iteration(small_system, caplog):
    _, _, Y = small_system
    with caplog.at_level(logging.INFO):
        fit(Y, Hyperparams(d=2, max_em_iters=2))
    iteration_lines = [r for r in caplog.records if r.getMessage().startswith("EM iter")]
    assert len(iteration_lines) == 2
    assert all(r.name == "root" for r in iteration_lines)


def test_fit_rejects_too_large_dimension(small_system):
    _, _, Y = small_system
    with pytest.raises(ConfigError):
        fit(ObservationSeries(Y.Y[:, :3]), Hyperparams(d=4))


def test_fit_is_deterministic(small_system):
    _, _, Y = small_system
    hp = Hyperparams(d=2, lambda_A=0.1, lambda_C=0.1, max_em_iters=5)
    first, second = fit(Y, hp), fit(Y, hp)
    np.testing.assert_array_equal(first.params.A, second.params.A)
    np.testing.assert_array_equal(first.params.C, second.params.C)
    assert first.marginal_trace == second.marginal_trace


@pytest.mark.slow
def test_vanishing_penalty_matches_unpenalized_fit(lowdim_system):
    _, _, Y = lowdim_system
    base = fit(Y, Hyperparams(d=10, max_em_iters=30))
    tiny = fit(
        Y,
        Hyperparams(d=10, lambda_A=1e-9, lambda_C=1e-9, max_em_iters=30, max_inner_iters=3000, fista_tol=0.0),
    )
    assert subspace_distance(base.params.C, tiny.params.C).distance < 1e-3
    assert subspace_distance(base.params.A, tiny.params.A).distance < 1e-2


@pytest.mark.slow
def test_highdim_fit_completes():
    truth = generate_params(SimConfig(p=10_000, d=30, T=100, seed=4))
    _, Y = simulate_series(truth, 100, 4)
    report = fit(Y, Hyperparams(d=30, lambda_A=1e-5, lambda_C=1e-5, max_em_iters=30))
    assert report.iterations_run >= 1
    assert report.elapsed_seconds < 30 * 60
    assert report.params.C.shape == (10_000, 30)


def test_initialize_recovers_ar1_coefficient():
    rng = np.random.default_rng(17)
    T = 10_000
    x = np.zeros(T)
    for t in range(1, T):
        x[t] = 0.9 * x[t - 1] + rng.standard_normal()
    Y = np.outer([1.0, 2.0, -1.0], x)
    params = initialize(ObservationSeries(Y), 1)
    assert abs(params.A[0, 0] - 0.9) < 0.05


def test_initialize_invariant_to_repeating_the_series(small_system):
    _, _, Y = small_system
    C = initialize(Y, 2).C
    C_twice = initialize(ObservationSeries(np.hstack([Y.Y, Y.Y])), 2).C
    signs = np.sign(np.sum(C * C_twice, axis=0))
    np.testing.assert_allclose(C_twice * signs, C, atol=1e-8)


def test_penalized_A_is_at_least_as_sparse(lowdim_system):
    truth, _, Y = lowdim_system
    stats = accumulate_stats(e_step(truth, Y), Y)
    d = truth.d

    def zeros(A):
        return int(np.sum(np.abs(A) <= 1e-10))

    free = zeros(update_A(stats, 0.0, truth.A, 200))
    top = float(np.max(np.abs(stats.S_cross)))
    for frac in (0.01, 0.1, 0.5):
        assert zeros(update_A(stats, frac * top, truth.A, 500)) >= free
    assert zeros(update_A(stats, 2.0 * top, truth.A, 500)) == d * d

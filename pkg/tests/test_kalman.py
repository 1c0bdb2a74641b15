import numpy as np
import pytest

from src.errors import DataError
from src.kalman import backward_smooth, e_step, forward_filter, observation_gram, woodbury_gain
from src.params import LdsParams, ObservationSeries
from tests.conftest import condition, joint_gaussian, random_params


def exact_loglik(params: LdsParams, Y: np.ndarray) -> float:
    _, mean_y, _, _, cov_y = joint_gaussian(params, Y.shape[1])
    resid = Y.T.reshape(-1) - mean_y
    _, logdet = np.linalg.slogdet(cov_y)
    return float(-0.5 * (resid @ np.linalg.solve(cov_y, resid) + logdet))


def random_instance(rng, p, d, T):
    params = random_params(rng, p, d)
    Y = rng.standard_normal((p, T)) + params.C @ rng.standard_normal((d, T))
    return params, Y


@pytest.mark.parametrize("trial", range(50))
def test_smoother_matches_joint_gaussian(trial):
    rng = np.random.default_rng(1000 + trial)
    p, d, T = int(rng.integers(1, 11)), int(rng.integers(1, 4)), int(rng.integers(1, 7))
    params, Y = random_instance(rng, p, d, T)
    moments = e_step(params, ObservationSeries(Y))
    post_mean, post_cov = condition(params, Y)

    np.testing.assert_allclose(moments.x_hat[:, 1:], post_mean, atol=1e-9)
    np.testing.assert_array_equal(moments.x_hat[:, 0], params.pi0)
    for t in range(1, T + 1):
        block = post_cov[(t - 1) * d : t * d, (t - 1) * d : t * d]
        np.testing.assert_allclose(moments.V_hat[t], block, atol=1e-9)
        np.testing.assert_allclose(
            moments.P_hat[t] - np.outer(moments.x_hat[:, t], moments.x_hat[:, t]), block, atol=1e-9
        )
    for t in range(2, T + 1):
        cross = post_cov[(t - 1) * d : t * d, (t - 2) * d : (t - 1) * d]
        lagged = moments.P_cross[t - 1] - np.outer(moments.x_hat[:, t], moments.x_hat[:, t - 1])
        np.testing.assert_allclose(lagged, cross, atol=1e-9)
    # x_0 is deterministic, so its cross term is a pure outer product
    np.testing.assert_allclose(moments.P_cross[0], np.outer(moments.x_hat[:, 1], params.pi0), atol=1e-12)


def test_filter_matches_conditioning_on_prefix(rng):
    params, Y = random_instance(rng, 2, 1, 5)
    fs = forward_filter(params, ObservationSeries(Y))
    for t in range(1, 6):
        post_mean, post_cov = condition(params, Y, upto=t)
        np.testing.assert_allclose(fs.x_filt[:, t], post_mean[:, t - 1], atol=1e-10)
        np.testing.assert_allclose(fs.V_filt[t], post_cov[t - 1 : t, t - 1 : t], atol=1e-10)


def test_filter_log_likelihood_matches_dense(rng):
    params, Y = random_instance(rng, 4, 2, 6)
    fs = forward_filter(params, ObservationSeries(Y))
    np.testing.assert_allclose(fs.log_likelihood, exact_loglik(params, Y), rtol=1e-10)


def test_scalar_gain():
    for r in (2.0, 1.0, 1e-12):
        params = LdsParams(A=np.eye(1), C=np.eye(1), R_diag=np.array([r]), pi0=np.zeros(1))
        fs = forward_filter(params, ObservationSeries(np.array([[1.0]])))
        gain = woodbury_gain(params.C, params.R_diag, fs.V_pred[1])
        np.testing.assert_allclose(gain.matrix(), [[1.0 / (1.0 + r)]], rtol=1e-10)
        assert 0.0 <= gain.matrix()[0, 0] <= 1.0


def test_zero_observation_matrix_gives_prior_rollout():
    A = np.array([[0.9, 0.1], [0.0, 0.5]])
    pi0 = np.array([1.0, -2.0])
    params = LdsParams(A=A, C=np.zeros((3, 2)), R_diag=np.ones(3), pi0=pi0)
    Y = ObservationSeries(np.arange(12.0).reshape(3, 4))
    fs = forward_filter(params, Y)
    moments = backward_smooth(params, fs)

    prior_cov = np.zeros((2, 2))
    state = pi0
    for t in range(1, 5):
        state = A @ state
        prior_cov = A @ prior_cov @ A.T + np.eye(2)
        np.testing.assert_allclose(fs.x_filt[:, t], state, atol=1e-12)
        np.testing.assert_allclose(moments.x_hat[:, t], state, atol=1e-12)
        np.testing.assert_allclose(moments.V_hat[t], prior_cov, atol=1e-12)


def test_single_step_smoothing_equals_filtering(rng):
    params, Y = random_instance(rng, 5, 2, 1)
    fs = forward_filter(params, ObservationSeries(Y))
    moments = backward_smooth(params, fs)
    np.testing.assert_array_equal(moments.x_hat[:, 1], fs.x_filt[:, 1])
    np.testing.assert_array_equal(moments.V_hat[1], fs.V_filt[1])


def test_covariance_ordering(rng):
    params, Y = random_instance(rng, 8, 3, 6)
    fs = forward_filter(params, ObservationSeries(Y))
    moments = backward_smooth(params, fs)
    for t in range(1, 7):
        assert np.linalg.eigvalsh(fs.V_filt[t] - moments.V_hat[t]).min() >= -1e-10
        assert np.linalg.eigvalsh(fs.V_pred[t] - fs.V_filt[t]).min() >= -1e-10
        assert np.linalg.eigvalsh(moments.V_hat[t]).min() >= -1e-10


def test_woodbury_gain_matches_dense_inverse():
    rng = np.random.default_rng(7)
    p, d = 50, 3
    for _ in range(20):
        C = rng.standard_normal((p, d))
        R = rng.uniform(0.1, 2.0, p)
        B = rng.standard_normal((d, d))
        V = B @ B.T + 0.1 * np.eye(d)
        dense = V @ C.T @ np.linalg.inv(C @ V @ C.T + np.diag(R))
        gain = woodbury_gain(C, R, V)
        np.testing.assert_allclose(gain.matrix(), dense, rtol=1e-8, atol=1e-12)
        z = rng.standard_normal(p)
        np.testing.assert_allclose(gain(z), dense @ z, rtol=1e-8, atol=1e-12)
        Z = rng.standard_normal((p, 4))
        np.testing.assert_allclose(gain(Z), dense @ Z, rtol=1e-8, atol=1e-12)


def test_woodbury_gain_singular_prior():
    rng = np.random.default_rng(8)
    C = rng.standard_normal((6, 2))
    R = np.ones(6)
    gain = woodbury_gain(C, R, np.zeros((2, 2)))
    np.testing.assert_array_equal(gain(rng.standard_normal(6)), np.zeros(2))

    v = np.array([[1.0], [2.0]])
    V = v @ v.T
    dense = V @ C.T @ np.linalg.inv(C @ V @ C.T + np.diag(R))
    np.testing.assert_allclose(woodbury_gain(C, R, V).matrix(), dense, atol=1e-10)


def test_woodbury_gain_basis_vector():
    C = np.array([[1.0], [0.0], [0.0]])
    gain = woodbury_gain(C, np.ones(3), np.eye(1))
    np.testing.assert_allclose(gain(np.array([1.0, 0.0, 0.0])), [0.5])
    np.testing.assert_allclose(observation_gram(C, np.ones(3)), [[1.0]])


def test_woodbury_gain_rejects_nonpositive_noise():
    with pytest.raises(DataError):
        woodbury_gain(np.ones((2, 1)), np.array([1.0, 0.0]), np.eye(1))


def test_filter_rejects_invalid_params(rng):
    params = random_params(rng, 4, 2)
    with pytest.raises(DataError):
        forward_filter(params, ObservationSeries(np.zeros((5, 3))))

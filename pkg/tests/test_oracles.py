import numpy as np
import pytest

from guidedsmooth.oracles import (
    G_reference,
    backward_flow,
    batch_means_se,
    dense_gaussian_smoother,
    euler_transition,
    gaussian_conditioning,
    information_smoother,
    scalar_lyapunov,
)
from guidedsmooth.verify import OU_B, OU_BETA, OU_SIGMA


def test_information_smoother_agrees_with_dense_solver():
    rng = np.random.default_rng(0)
    t = np.linspace(0.0, 1.0, 13)
    obs = {3: ([[1.0, 0.0]], [[0.1]], [0.4]), 8: (np.eye(2), 0.2 * np.eye(2), [0.1, -0.3]),
           12: ([[0.5, 1.0]], [[0.3]], [rng.normal()])}
    m1, c1 = information_smoother(OU_B, OU_BETA, OU_SIGMA, t, obs, epsilon=1e-2)
    m2, c2 = dense_gaussian_smoother(OU_B, OU_BETA, OU_SIGMA, t, obs, epsilon=1e-2)
    assert np.allclose(m1, m2, atol=1e-10)
    assert np.allclose(c1, c2, atol=1e-10)


def test_single_step_posterior_by_hand():
    # flat prior at x0, one Euler step, exact observation of the end point
    A, c, Q = euler_transition([[-1.0]], [0.5], [[1.0]], 0.1)
    m, C = dense_gaussian_smoother([[-1.0]], [0.5], [[1.0]], [0.0, 0.1],
                                   {1: ([[1.0]], [[1e-12]], [2.0])})
    assert np.isclose(m[0, 0], (2.0 - c[0]) / A[0, 0], atol=1e-6)
    assert np.isclose(C[0, 0, 0], Q[0, 0] / A[0, 0] ** 2, rtol=1e-6)


def test_gaussian_conditioning_matches_covariance_form():
    mean, cov = np.array([1.0, -1.0]), np.array([[2.0, 0.3], [0.3, 1.0]])
    L, S, v = np.array([[1.0, 1.0]]), np.array([[0.5]]), np.array([0.7])
    K = cov @ L.T @ np.linalg.inv(L @ cov @ L.T + S)
    m, C = gaussian_conditioning(mean, cov, L, S, v)
    assert np.allclose(m, mean + K @ (v - L @ mean))
    assert np.allclose(C, cov - K @ L @ cov)


def test_scalar_lyapunov_solves_its_ode():
    t = np.linspace(0.0, 1.0, 11)
    sol = backward_flow(lambda s, y: 2 * -0.4 * y - 0.3, [0.2], 1.0, t)
    assert np.allclose(sol[:, 0], scalar_lyapunov(-0.4, 0.3, 0.2, 1.0, t), atol=1e-9)
    assert np.allclose(scalar_lyapunov(0.0, 0.3, 0.2, 1.0, t), 0.2 + 0.3 * (1.0 - t))


def test_G_reference_vanishes_for_matched_processes():
    H, nu, x = np.eye(2), np.array([1.0, 2.0]), np.array([0.0, 0.5])
    b, a = np.array([0.3, -0.1]), 0.4 * np.eye(2)
    assert G_reference(b, b, a, a, H, nu, x) == 0.0
    r = nu - x
    assert np.isclose(G_reference(b + 1.0, b, a, a, H, nu, x), r.sum())


def test_batch_means_se_for_iid_and_short_series():
    x = np.random.default_rng(1).normal(size=100_000)
    assert abs(batch_means_se(x) - 1 / np.sqrt(x.size)) < 0.25 / np.sqrt(x.size)
    with pytest.raises(ValueError):
        batch_means_se(np.zeros(20))

"""Independent reference computations used by the tests and ``verify``.

Nothing here calls the backward filter or the guided simulator; every
routine is written from the underlying Gaussian algebra so it can serve as a
check on them.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, linalg

__all__ = [
    "euler_transition",
    "information_smoother",
    "dense_gaussian_smoother",
    "gaussian_conditioning",
    "scalar_lyapunov",
    "G_reference",
    "backward_flow",
    "batch_means_se",
]


def euler_transition(B, beta, sigma, h):
    """``x' = A x + c + w``, ``w ~ N(0, Q)``: one Euler step of ``dX = (beta + B X) dt + sigma dW``."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    return np.eye(B.shape[0]) + h * B, h * np.asarray(beta, dtype=float), h * sigma @ sigma.T


def _chol_inv(A):
    c = linalg.cho_factor(A, lower=True)
    return linalg.cho_solve(c, np.eye(A.shape[0]))


def information_smoother(B, beta, sigma, grid_t, obs, epsilon=0.0):
    """Two-filter smoother in information form for the Euler chain on ``grid_t``.

    The start point has a flat prior. ``obs`` maps a knot index to
    ``(L, Sigma, v)``. With ``epsilon > 0`` the last knot additionally carries
    the information ``epsilon I`` centred at zero.

    Returns
    -------
    mean : ndarray, shape (K + 1, d)
    cov : ndarray, shape (K + 1, d, d)
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d = B.shape[0]
    t = np.asarray(grid_t, dtype=float)
    K = t.size - 1
    trans = [euler_transition(B, beta, sigma, t[k + 1] - t[k]) for k in range(K)]

    def obs_info(k):
        if k not in obs:
            return np.zeros((d, d)), np.zeros(d)
        L, S, v = (np.atleast_2d(obs[k][0]), np.atleast_2d(obs[k][1]), np.atleast_1d(obs[k][2]))
        Si = _chol_inv(S)
        return L.T @ Si @ L, L.T @ Si @ v

    # Forward: information of x_k given observations at knots < k (predicted)
    # and <= k (filtered).
    Yf = np.zeros((K + 1, d, d))
    yf = np.zeros((K + 1, d))
    Yp, yp = np.zeros((d, d)), np.zeros(d)
    for k in range(K + 1):
        J, j = obs_info(k)
        Yf[k], yf[k] = Yp + J, yp + j
        if k == K:
            break
        A, c, Q = trans[k]
        Qi = _chol_inv(Q)
        M = Yf[k] + A.T @ Qi @ A
        Mi = _chol_inv(M)
        Yp = Qi - Qi @ A @ Mi @ A.T @ Qi
        yp = Qi @ A @ Mi @ yf[k] + Yp @ c

    # Backward: information about x_k carried by observations at knots > k.
    Yb = np.zeros((K + 1, d, d))
    yb = np.zeros((K + 1, d))
    Yb[K] = epsilon * np.eye(d)
    for k in range(K - 1, -1, -1):
        J, j = obs_info(k + 1)
        Yn, yn = Yb[k + 1] + J, yb[k + 1] + j
        A, c, Q = trans[k]
        W = np.linalg.solve(np.eye(d) + Yn @ Q, np.hstack([Yn, (yn - Yn @ c)[:, None]]))
        Yb[k] = A.T @ W[:, :d] @ A
        yb[k] = A.T @ W[:, d]

    mean = np.empty((K + 1, d))
    cov = np.empty((K + 1, d, d))
    for k in range(K + 1):
        P = _chol_inv(Yf[k] + Yb[k])
        cov[k] = 0.5 * (P + P.T)
        mean[k] = P @ (yf[k] + yb[k])
    return mean, cov


def dense_gaussian_smoother(B, beta, sigma, grid_t, obs, epsilon=0.0):
    """Same posterior as :func:`information_smoother` from the full joint precision.

    Cost is cubic in ``(K + 1) d``; intended for small grids.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d = B.shape[0]
    t = np.asarray(grid_t, dtype=float)
    K = t.size - 1
    n = (K + 1) * d
    P = np.zeros((n, n))
    q = np.zeros(n)
    for k in range(K):
        A, c, Q = euler_transition(B, beta, sigma, t[k + 1] - t[k])
        Qi = _chol_inv(Q)
        # residual x_{k+1} - A x_k - c = D z - c with D = [-A, I]
        D = np.hstack([-A, np.eye(d)])
        sl = slice(k * d, (k + 2) * d)
        P[sl, sl] += D.T @ Qi @ D
        q[sl] += D.T @ Qi @ c
    for k, (L, S, v) in obs.items():
        L = np.atleast_2d(L)
        Si = _chol_inv(np.atleast_2d(S))
        sl = slice(k * d, (k + 1) * d)
        P[sl, sl] += L.T @ Si @ L
        q[sl] += L.T @ Si @ np.atleast_1d(v)
    P[K * d :, K * d :] += epsilon * np.eye(d)
    C = _chol_inv(P)
    mean = (C @ q).reshape(K + 1, d)
    cov = np.array([C[k * d : (k + 1) * d, k * d : (k + 1) * d] for k in range(K + 1)])
    return mean, cov


def gaussian_conditioning(mean, cov, L, Sigma, v):
    """Posterior of ``x ~ N(mean, cov)`` given ``v = L x + N(0, Sigma)``, in information form."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    Si = _chol_inv(np.atleast_2d(Sigma))
    prec = _chol_inv(np.asarray(cov, dtype=float)) + L.T @ Si @ L
    post_cov = _chol_inv(prec)
    post_mean = post_cov @ (np.linalg.solve(cov, mean) + L.T @ Si @ np.atleast_1d(v))
    return post_mean, 0.5 * (post_cov + post_cov.T)


def scalar_lyapunov(B, a, Hd_end, T, t):
    """Closed-form ``Hd(t)`` for ``dHd/dt = 2 B Hd - a`` with ``Hd(T) = Hd_end`` (scalars)."""
    t = np.asarray(t, dtype=float)
    if B == 0.0:
        return Hd_end + a * (T - t)
    c = a / (2.0 * B)
    return np.exp(2.0 * B * (t - T)) * (Hd_end - c) + c


def G_reference(b, bt, a, at, H, nu, x):
    """``G = (b - b~)' r - 1/2 tr[(a - a~)(H - r r')]`` with ``r = H (nu - x)``."""
    r = H @ (np.asarray(nu, dtype=float) - np.asarray(x, dtype=float))
    D = np.asarray(a, dtype=float) - np.asarray(at, dtype=float)
    return float(np.dot(np.asarray(b) - np.asarray(bt), r) - 0.5 * np.trace(D @ (H - np.outer(r, r))))


def backward_flow(drift, x_end, t_end, t_eval, rtol=1e-11, atol=1e-11):
    """Solve ``dx/dt = drift(t, x)`` backwards from ``x(t_end) = x_end`` with an adaptive solver."""
    t_eval = np.asarray(t_eval, dtype=float)
    sol = integrate.solve_ivp(
        lambda t, x: np.asarray(drift(t, x), dtype=float),
        (t_end, float(t_eval.min())),
        np.asarray(x_end, dtype=float),
        method="DOP853",
        t_eval=t_eval[::-1],
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y.T[::-1]


def batch_means_se(x, nbatches=50):
    """Monte-Carlo standard error of the mean of a stationary series by batch means.

    ``x`` has the series along axis 0; the remaining axes are handled
    elementwise.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0] // nbatches * nbatches
    if n < 2 * nbatches:
        raise ValueError("series too short for the requested number of batches")
    means = x[:n].reshape(nbatches, n // nbatches, *x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(nbatches)

"""Euler-Maruyama simulation of a diffusion and noisy observation of it."""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ConfigError, IntegrationError
from .model import DiffusionModel, Observation, ObservationSchedule
from .numerics import RngStream

__all__ = ["simulate_path", "observe", "lorenz_experiment", "pendulum_experiment"]

LORENZ_X0 = (1.508870, -1.531271, 25.46091)
PENDULUM_X0 = (1.0, 0.5)


def simulate_path(model: DiffusionModel, x0, t_end: float, mesh: float, rng: RngStream,
                  t_start: float = 0.0, force_python=False):
    """Euler-Maruyama path on the uniform mesh ``t_start, t_start + mesh, ...``.

    The number of steps is ``round((t_end - t_start) / mesh)``. Returns
    ``(t, X)``. Raises :class:`IntegrationError` with the failure time if the
    path leaves the finite range.
    """
    n = int(round((t_end - t_start) / mesh))
    if n < 1:
        raise ConfigError("simulation interval shorter than one mesh step")
    t = t_start + mesh * np.arange(n + 1)
    t[-1] = t_end
    dt = np.diff(t)
    d = model.d
    noise = rng.generator.standard_normal((n, model.dprime)) * np.sqrt(dt)[:, None]
    zeros_H = np.zeros((n, d, d))
    zeros_F = np.zeros((n, d))
    out = np.empty((n + 1, d))
    # A guided step with zero guiding term is a plain Euler step.
    _, fail = kernels.guided_euler(
        model, t, dt, zeros_H, zeros_F, zeros_F, zeros_H, zeros_H, noise,
        np.ascontiguousarray(x0, dtype=float), out, force_python=force_python,
    )
    if fail >= 0:
        raise IntegrationError("simulated path diverged", time=t[fail])
    return t, out


def observe(t, X, obs_times, L, Sigma, rng: RngStream, epsilon=0.0) -> ObservationSchedule:
    """Noisy observations ``L X(t_i) + N(0, Sigma)`` at knots of ``t`` nearest to ``obs_times``."""
    t = np.asarray(t, dtype=float)
    L = np.atleast_2d(np.asarray(L, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    chol = np.linalg.cholesky(Sigma)
    obs = []
    for ti in np.asarray(obs_times, dtype=float):
        k = int(np.argmin(np.abs(t - ti)))
        if abs(t[k] - ti) > 1e-9 * max(1.0, abs(ti)):
            raise ConfigError(f"observation time {ti} is not on the simulation mesh")
        v = L @ X[k] + chol @ rng.normal(L.shape[0])
        obs.append(Observation(float(ti), L, Sigma, v))
    return ObservationSchedule(obs, epsilon=epsilon)


def lorenz_experiment(seed=0, mesh=8e-5, Sigma=1.0, epsilon=1 / 2000, sigma0=3.0):
    """Lorenz data set: full noisy observations at 0, 0.04, ..., 4.

    Returns ``(model, t, X, schedule)``.
    """
    from .model import lorenz_model

    model = lorenz_model(sigma0=sigma0)
    rng = RngStream(seed, 0)
    t, X = simulate_path(model, LORENZ_X0, 4.0, mesh, rng)
    sched = observe(t, X, np.linspace(0.0, 4.0, 101), np.eye(3), Sigma * np.eye(3),
                    RngStream(seed, 1), epsilon)
    return model, t, X, sched


def pendulum_experiment(seed=0, mesh=8e-5, obs_var=1.0, epsilon=1 / 2000, theta=1.0, gamma=1.0):
    """Pendulum data set: noisy angle observations at 0, 0.04, ..., 4.

    Returns ``(model, t, X, schedule)``.
    """
    from .model import pendulum_model

    model = pendulum_model(theta, gamma)
    rng = RngStream(seed, 0)
    t, X = simulate_path(model, PENDULUM_X0, 4.0, mesh, rng)
    sched = observe(t, X, np.linspace(0.0, 4.0, 101), np.array([[1.0, 0.0]]),
                    np.array([[obs_var]]), RngStream(seed, 1), epsilon)
    return model, t, X, sched

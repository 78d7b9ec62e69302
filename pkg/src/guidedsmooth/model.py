"""Target diffusions, linear auxiliary processes, observations and time grids."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, SpdError
from .numerics import cholesky

__all__ = [
    "DiffusionModel",
    "LinearAuxiliary",
    "Observation",
    "ObservationSchedule",
    "TimeGrid",
    "TimeChange",
    "build_timechange",
    "lorenz_model",
    "pendulum_model",
    "ou_model",
    "finite_difference_jacobian",
]

# Drift identifiers understood by the compiled kernels (see kernels.py).
KERNEL_LINEAR = 0
KERNEL_LORENZ = 1
KERNEL_PENDULUM = 2


def finite_difference_jacobian(f, t, x):
    """Central-difference Jacobian of ``f(t, .)`` at ``x``, step ``1e-6 (1 + |x_j|)``."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(t, x), dtype=float)
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        step = 1e-6 * (1.0 + abs(x[j]))
        e = np.zeros_like(x)
        e[j] = step
        J[:, j] = (np.asarray(f(t, x + e)) - np.asarray(f(t, x - e))) / (2 * step)
    return J


@dataclass(frozen=True, eq=False)
class DiffusionModel:
    """Diffusion ``dX = b(t, X) dt + sigma(t, X) dW`` with ``X`` in R^d, ``W`` in R^d'.

    ``kernel`` optionally names a drift the compiled core can evaluate
    natively, as ``(kernel_id, params)``; together with a constant
    ``constant_dispersion`` it enables the fast simulation path.
    """

    d: int
    dprime: int
    drift: Callable[[float, np.ndarray], np.ndarray]
    dispersion: Callable[[float, np.ndarray], np.ndarray]
    drift_jacobian: Callable[[float, np.ndarray], np.ndarray] | None = None
    constant_dispersion: np.ndarray | None = None
    kernel: tuple[int, np.ndarray] | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def jacobian(self, t, x) -> np.ndarray:
        if self.drift_jacobian is not None:
            return np.asarray(self.drift_jacobian(t, x), dtype=float)
        return finite_difference_jacobian(self.drift, t, x)

    def diffusion_matrix(self, t, x) -> np.ndarray:
        s = np.asarray(self.dispersion(t, x), dtype=float)
        return s @ s.T

    @property
    def compiled(self) -> bool:
        return self.kernel is not None and self.constant_dispersion is not None


def _const(value):
    value = np.array(value, dtype=float)
    value.setflags(write=False)
    return lambda t, x=None: value


def lorenz_model(theta=(10.0, 28.0, 8.0 / 3.0), sigma0: float = 3.0) -> DiffusionModel:
    """Stochastic Lorenz system with isotropic noise ``sigma0 * I``."""
    if sigma0 <= 0:
        raise ConfigError("sigma0 must be positive")
    th1, th2, th3 = (float(v) for v in theta)

    def drift(t, x):
        return np.array(
            [th1 * (x[1] - x[0]), th2 * x[0] - x[1] - x[0] * x[2], x[0] * x[1] - th3 * x[2]]
        )

    def jac(t, x):
        return np.array(
            [
                [-th1, th1, 0.0],
                [th2 - x[2], -1.0, -x[0]],
                [x[1], x[0], -th3],
            ]
        )

    sigma = sigma0 * np.eye(3)
    return DiffusionModel(
        d=3,
        dprime=3,
        drift=drift,
        dispersion=_const(sigma),
        drift_jacobian=jac,
        constant_dispersion=sigma,
        kernel=(KERNEL_LORENZ, np.array([th1, th2, th3])),
        name="lorenz",
        params={"theta": [th1, th2, th3], "sigma0": float(sigma0)},
    )


def pendulum_model(theta: float = 1.0, gamma: float = 1.0) -> DiffusionModel:
    """Noisy pendulum; white-noise forcing acts on the velocity only."""
    if gamma <= 0:
        raise ConfigError("gamma must be positive")
    theta = float(theta)
    th2 = theta * theta

    def drift(t, x):
        return np.array([x[1], -th2 * np.sin(x[0])])

    def jac(t, x):
        return np.array([[0.0, 1.0], [-th2 * np.cos(x[0]), 0.0]])

    sigma = np.array([[0.0], [float(gamma)]])
    return DiffusionModel(
        d=2,
        dprime=1,
        drift=drift,
        dispersion=_const(sigma),
        drift_jacobian=jac,
        constant_dispersion=sigma,
        kernel=(KERNEL_PENDULUM, np.array([theta])),
        name="pendulum",
        params={"theta": theta, "gamma": float(gamma)},
    )


def ou_model(Bmat, beta, sigma) -> DiffusionModel:
    """Linear diffusion ``dX = (beta + B X) dt + sigma dW``."""
    B = np.atleast_2d(np.array(Bmat, dtype=float))
    beta = np.atleast_1d(np.array(beta, dtype=float))
    sigma = np.atleast_2d(np.array(sigma, dtype=float))
    d = B.shape[0]
    if B.shape != (d, d) or beta.shape != (d,) or sigma.shape[0] != d:
        raise ConfigError("inconsistent OU dimensions")
    for arr in (B, beta, sigma):
        arr.setflags(write=False)
    return DiffusionModel(
        d=d,
        dprime=sigma.shape[1],
        drift=lambda t, x: beta + B @ x,
        dispersion=_const(sigma),
        drift_jacobian=lambda t, x: B,
        constant_dispersion=sigma,
        kernel=(KERNEL_LINEAR, np.concatenate([B.ravel(), beta])),
        name="ou",
        params={"B": B.tolist(), "beta": beta.tolist(), "sigma": sigma.tolist()},
    )


class LinearAuxiliary:
    """Coefficients ``beta~(t), B~(t), sigma~(t)`` of the linear auxiliary diffusion.

    Either closed-form callables of ``t`` or per-step tables on a
    :class:`TimeGrid`. Tables hold, for every grid step ``k``, the value at
    the start of the step (right limit at ``t_k``) and at its end (left limit
    at ``t_{k+1}``); values inside a step are linearly interpolated. This
    allows jumps at observation times.
    """

    def __init__(self, d, dprime, beta=None, B=None, sigma=None, tables=None, grid=None):
        self.d = int(d)
        self.dprime = int(dprime)
        self._fns = None
        self._tables = None
        self.grid = grid
        if tables is not None:
            if grid is None:
                raise ConfigError("tabulated auxiliary needs its grid")
            K = grid.nsteps
            tb = {}
            for key, shape in (
                ("beta", (K, 2, self.d)),
                ("B", (K, 2, self.d, self.d)),
                ("sigma", (K, 2, self.d, self.dprime)),
            ):
                arr = np.array(tables[key], dtype=float)
                if arr.shape != shape:
                    raise ConfigError(f"auxiliary table {key} has shape {arr.shape}, expected {shape}")
                tb[key] = arr
            tb["a"] = tb["sigma"] @ np.swapaxes(tb["sigma"], -1, -2)
            self._tables = tb
        else:
            self._fns = (beta, B, sigma)

    # -- constructors -------------------------------------------------------
    @classmethod
    def constant(cls, beta, B, sigma) -> "LinearAuxiliary":
        beta = np.atleast_1d(np.array(beta, dtype=float))
        B = np.atleast_2d(np.array(B, dtype=float))
        sigma = np.atleast_2d(np.array(sigma, dtype=float))
        aux = cls(
            beta.size, sigma.shape[1], beta=_const(beta), B=_const(B), sigma=_const(sigma)
        )
        aux._constant = (beta, B, sigma)
        return aux

    @classmethod
    def from_callables(cls, d, dprime, beta, B, sigma) -> "LinearAuxiliary":
        return cls(d, dprime, beta=beta, B=B, sigma=sigma)

    @classmethod
    def from_model(cls, model: DiffusionModel) -> "LinearAuxiliary":
        """Auxiliary identical to a linear model (see :func:`ou_model`)."""
        if model.kernel is None or model.kernel[0] != KERNEL_LINEAR:
            raise ConfigError("only linear models convert to an auxiliary process")
        p = model.kernel[1]
        d = model.d
        return cls.constant(p[d * d :], p[: d * d].reshape(d, d), model.constant_dispersion)

    def to_model(self) -> DiffusionModel:
        if not self.is_constant:
            raise ConfigError("only constant-coefficient auxiliaries convert to a model")
        beta, B, sigma = self._constant
        return ou_model(B, beta, sigma)

    # -- access -------------------------------------------------------------
    @property
    def is_tabulated(self) -> bool:
        return self._tables is not None

    @property
    def is_constant(self) -> bool:
        return hasattr(self, "_constant")

    def at(self, t):
        """``(beta, B, a, sigma)`` at time ``t`` for callable auxiliaries."""
        if self._fns is None:
            raise ConfigError("tabulated auxiliary must be evaluated by grid step")
        beta_f, B_f, sigma_f = self._fns
        sigma = np.atleast_2d(np.asarray(sigma_f(t), dtype=float))
        return (
            np.atleast_1d(np.asarray(beta_f(t), dtype=float)),
            np.atleast_2d(np.asarray(B_f(t), dtype=float)),
            sigma @ sigma.T,
            sigma,
        )

    def stage(self, grid: "TimeGrid", k: int, theta: float):
        """``(beta, B, a)`` at fraction ``theta`` of grid step ``k``."""
        if self._tables is None:
            beta, B, a, _ = self.at(grid.time_at(k, theta))
            return beta, B, a
        tb = self._tables
        w0, w1 = 1.0 - theta, theta
        return (
            w0 * tb["beta"][k, 0] + w1 * tb["beta"][k, 1],
            w0 * tb["B"][k, 0] + w1 * tb["B"][k, 1],
            w0 * tb["a"][k, 0] + w1 * tb["a"][k, 1],
        )

    def tables(self, grid: "TimeGrid") -> dict:
        """Per-step tables on ``grid`` (evaluated if the auxiliary is callable)."""
        if self._tables is not None:
            if grid is not self.grid and not grid.same_as(self.grid):
                raise ConfigError("auxiliary was tabulated on a different grid")
            return self._tables
        K = grid.nsteps
        out = {
            "beta": np.empty((K, 2, self.d)),
            "B": np.empty((K, 2, self.d, self.d)),
            "sigma": np.empty((K, 2, self.d, self.dprime)),
        }
        for k in range(K):
            for side, t in ((0, grid.t[k]), (1, grid.t[k + 1])):
                beta, B, _, sigma = self.at(t)
                out["beta"][k, side] = beta
                out["B"][k, side] = B
                out["sigma"][k, side] = sigma
        out["a"] = out["sigma"] @ np.swapaxes(out["sigma"], -1, -2)
        return out

    def tabulated(self, grid: "TimeGrid") -> "LinearAuxiliary":
        tb = self.tables(grid)
        return LinearAuxiliary(
            self.d, self.dprime, tables={k: tb[k] for k in ("beta", "B", "sigma")}, grid=grid
        )

    def check_psd(self, grid: "TimeGrid", tol: float = 1e-10) -> None:
        a = self.tables(grid)["a"]
        if np.min(np.linalg.eigvalsh(a)) < -tol * max(1.0, np.abs(a).max()):
            raise ConfigError("auxiliary diffusion matrix is not positive semi-definite")


@dataclass(frozen=True)
class Observation:
    """``v = L x(t) + eta``, ``eta ~ N(0, Sigma)``."""

    t: float
    L: np.ndarray
    Sigma: np.ndarray
    v: np.ndarray

    @property
    def m(self) -> int:
        return self.L.shape[0]


class ObservationSchedule:
    """Ordered observations plus the terminal regularisation ``epsilon``.

    Parameters
    ----------
    observations : sequence of Observation or (t, L, Sigma, v) tuples
    epsilon : float
        Precision ``epsilon * I`` of the artificial full observation of value
        zero placed just after the last observation time.
    t_start : float, optional
        Start of the smoothing interval; defaults to the first observation
        time. Must not exceed it.
    """

    def __init__(self, observations: Sequence, epsilon: float = 0.0, t_start=None):
        obs = []
        for i, o in enumerate(observations):
            if not isinstance(o, Observation):
                o = Observation(*o)
            L = np.atleast_2d(np.array(o.L, dtype=float))
            Sigma = np.atleast_2d(np.array(o.Sigma, dtype=float))
            v = np.atleast_1d(np.array(o.v, dtype=float))
            m = L.shape[0]
            if Sigma.shape != (m, m) or v.shape != (m,):
                raise ConfigError(f"observation {i}: inconsistent L/Sigma/v dimensions")
            if not np.all(np.isfinite(v)) or not np.isfinite(o.t):
                raise ConfigError(f"observation {i}: non-finite value")
            if not np.allclose(Sigma, Sigma.T, rtol=1e-12, atol=0):
                raise ConfigError(f"observation {i}: Sigma is not symmetric")
            try:
                cholesky(Sigma, name="Sigma", index=i)
            except SpdError as exc:
                raise ConfigError(f"observation {i}: Sigma is not positive definite ({exc})") from None
            obs.append(Observation(float(o.t), L, Sigma, v))
        if not obs:
            raise ConfigError("at least one observation is required")
        d = obs[0].L.shape[1]
        for i, o in enumerate(obs):
            if o.L.shape[1] != d:
                raise ConfigError(f"observation {i}: L has {o.L.shape[1]} columns, expected {d}")
        times = np.array([o.t for o in obs])
        if np.any(np.diff(times) <= 0):
            raise ConfigError("observation times must be strictly increasing")
        epsilon = float(epsilon)
        if not epsilon >= 0:
            raise ConfigError("epsilon must be non-negative")
        last = obs[-1]
        if epsilon == 0 and np.linalg.matrix_rank(last.L) < d:
            raise ConfigError(
                "last observation does not determine the full state; epsilon > 0 is required"
            )
        if t_start is None:
            t_start = times[0]
        if t_start > times[0]:
            raise ConfigError("t_start must not exceed the first observation time")
        self.observations = tuple(obs)
        self.epsilon = epsilon
        self.t_start = float(t_start)
        self.d = d

    def __len__(self):
        return len(self.observations)

    def __getitem__(self, i) -> Observation:
        return self.observations[i]

    def __iter__(self):
        return iter(self.observations)

    @property
    def times(self) -> np.ndarray:
        return np.array([o.t for o in self.observations])

    @property
    def t_end(self) -> float:
        return self.observations[-1].t

    @property
    def segment_bounds(self) -> np.ndarray:
        """Knots delimiting the integration segments: ``t_start`` and all observation times."""
        times = self.times
        if self.t_start < times[0]:
            times = np.concatenate([[self.t_start], times])
        return times

    @classmethod
    def constant(cls, times, values, L, Sigma, epsilon=0.0, t_start=None):
        """Schedule with the same ``L`` and ``Sigma`` at every time."""
        L = np.atleast_2d(np.array(L, dtype=float))
        Sigma = np.atleast_2d(np.array(Sigma, dtype=float))
        values = np.asarray(values, dtype=float).reshape(len(times), -1)
        return cls(
            [Observation(t, L, Sigma, v) for t, v in zip(times, values)],
            epsilon=epsilon,
            t_start=t_start,
        )


class TimeChange:
    """Piecewise quadratic time change, one piece per segment ``[u_j, u_{j+1}]``.

    On a segment of length ``S`` starting at ``u``:
    ``tau(s) = u + (s - u) (2 - (s - u) / S)``, so ``tau`` fixes both segment
    ends, ``tau'`` decreases linearly from 2 to 0 and ``tau'' = -2 / S``.
    """

    def __init__(self, bounds):
        self.bounds = np.asarray(bounds, dtype=float)
        if self.bounds.size < 2 or np.any(np.diff(self.bounds) <= 0):
            raise ConfigError("time change needs at least one non-empty segment")

    def _locate(self, s):
        s = np.asarray(s, dtype=float)
        j = np.clip(np.searchsorted(self.bounds, s, side="right") - 1, 0, self.bounds.size - 2)
        u = self.bounds[j]
        S = self.bounds[j + 1] - u
        return s - u, u, S

    def tau(self, s):
        r, u, S = self._locate(s)
        return u + r * (2.0 - r / S)

    def tau_dot(self, s):
        r, u, S = self._locate(s)
        return 2.0 - 2.0 * r / S

    def tau_ddot(self, s):
        _, _, S = self._locate(s)
        return -2.0 / S

    def inverse(self, t):
        """Inverse map ``tau^{-1}``."""
        r, u, S = self._locate(t)
        return u + S * (1.0 - np.sqrt(np.clip(1.0 - r / S, 0.0, None)))


def build_timechange(schedule: ObservationSchedule) -> TimeChange:
    return TimeChange(schedule.segment_bounds)


class TimeGrid:
    """Simulation grid with every observation time as a knot.

    Each segment between consecutive bounds (``t_start`` and the observation
    times) carries ``m`` steps. In time-change mode the knots are images
    ``tau(s_k)`` of a uniform ``s`` grid and the per-step arrays describe the
    affine ``tau'`` on each step.

    Attributes
    ----------
    t : ndarray, shape (K + 1,)
        Knot times.
    ds : ndarray, shape (K,)
        Step lengths in the integration variable (``s`` or ``t``).
    tdot0, tdot1 : ndarray, shape (K,)
        ``tau'`` at the start and end of each step (ones in plain mode).
    tddot : ndarray, shape (K,)
        ``tau''`` on each step (zeros in plain mode).
    obs_index : ndarray of int
        Knot index of every observation.
    """

    def __init__(self, t, ds, tdot0, tdot1, tddot, obs_index, m, timechange=None, s=None):
        self.t = np.asarray(t, dtype=float)
        self.ds = np.asarray(ds, dtype=float)
        self.tdot0 = np.asarray(tdot0, dtype=float)
        self.tdot1 = np.asarray(tdot1, dtype=float)
        self.tddot = np.asarray(tddot, dtype=float)
        self.obs_index = np.asarray(obs_index, dtype=np.intp)
        self.m = int(m)
        self.timechange = timechange
        self.s = self.t if s is None else np.asarray(s, dtype=float)
        if np.any(np.diff(self.t) <= 0):
            raise ConfigError("grid knots must be strictly increasing")
        if np.any(self.tdot0 <= 0):
            raise ConfigError("time change must be strictly increasing inside every step")
        for arr in (self.t, self.ds, self.tdot0, self.tdot1, self.tddot, self.obs_index, self.s):
            arr.setflags(write=False)

    @classmethod
    def uniform(cls, schedule: ObservationSchedule, m: int) -> "TimeGrid":
        """``m`` equal steps on every segment."""
        if m < 1:
            raise ConfigError("m must be at least 1")
        bounds = schedule.segment_bounds
        pieces = [np.linspace(a, b, m + 1)[:-1] for a, b in zip(bounds[:-1], bounds[1:])]
        t = np.concatenate(pieces + [bounds[-1:]])
        # Pin the knots to the exact observation times.
        t[:: m] = bounds
        K = t.size - 1
        obs_index = cls._obs_index(schedule, bounds, m)
        ones = np.ones(K)
        return cls(t, np.diff(t), ones, ones, np.zeros(K), obs_index, m)

    @classmethod
    def timechanged(cls, schedule: ObservationSchedule, m: int) -> "TimeGrid":
        """Images under :func:`build_timechange` of ``m`` uniform steps per segment."""
        if m < 2:
            raise ConfigError("time-change mode needs m >= 2")
        tc = build_timechange(schedule)
        bounds = tc.bounds
        s_pieces, t_pieces, ds, d0, d1, dd = [], [], [], [], [], []
        for a, b in zip(bounds[:-1], bounds[1:]):
            S = b - a
            s = np.linspace(a, b, m + 1)
            r = s - a
            tk = a + r * (2.0 - r / S)
            tk[0], tk[-1] = a, b
            tdot = 2.0 - 2.0 * r / S
            tdot[-1] = 0.0
            s_pieces.append(s[:-1])
            t_pieces.append(tk[:-1])
            ds.append(np.diff(s))
            d0.append(tdot[:-1])
            d1.append(tdot[1:])
            dd.append(np.full(m, -2.0 / S))
        s = np.concatenate(s_pieces + [bounds[-1:]])
        t = np.concatenate(t_pieces + [bounds[-1:]])
        obs_index = cls._obs_index(schedule, bounds, m)
        return cls(
            t,
            np.concatenate(ds),
            np.concatenate(d0),
            np.concatenate(d1),
            np.concatenate(dd),
            obs_index,
            m,
            timechange=tc,
            s=s,
        )

    @staticmethod
    def _obs_index(schedule, bounds, m):
        offset = 1 if schedule.t_start < schedule.times[0] else 0
        return (np.arange(len(schedule)) + offset) * m

    @property
    def nsteps(self) -> int:
        return self.t.size - 1

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def is_timechanged(self) -> bool:
        return self.timechange is not None

    def time_at(self, k: int, theta: float) -> float:
        """Physical time at fraction ``theta`` of step ``k`` in the integration variable."""
        u = theta * self.ds[k]
        return self.t[k] + self.tdot0[k] * u + 0.5 * self.tddot[k] * u * u

    def tdot_at(self, k: int, theta: float) -> float:
        return self.tdot0[k] + theta * (self.tdot1[k] - self.tdot0[k])

    def same_as(self, other) -> bool:
        return (
            other is not None
            and self.t.shape == other.t.shape
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.ds, other.ds)
        )

    def nearest_knot(self, t: float) -> int:
        return int(np.argmin(np.abs(self.t - t)))

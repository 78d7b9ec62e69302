"""Constant-dimension backward filter for the guiding term.

Solves, backwards in time, the linear ODEs

    dHd/dt = B Hd + Hd B' - a,      dnu/dt = B nu + beta

for the auxiliary coefficients ``(beta, B, a)`` and applies a Gaussian
conjugate update at every observation time. ``H = Hd^{-1}`` and the guiding
residual is ``r(t, x) = H(t) (nu(t) - x)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IntegrationError, JumpUpdateError, SpdError
from .model import LinearAuxiliary, ObservationSchedule, TimeGrid
from .numerics import RALSTON2, RkTableau, rk_step, spd_inv, spd_solve, symmetrize, woodbury_downdate

__all__ = [
    "BackwardFilter",
    "FilterAudit",
    "JumpRecord",
    "terminal_values",
    "init_terminal",
    "ode_segment",
    "observation_jump",
    "run_backward",
]


@dataclass(frozen=True)
class JumpRecord:
    """Filter values on both sides of one observation time.

    ``Hd_plus`` is ``None`` when the prior just after the time is flat
    (last observation with ``epsilon = 0``); ``H_plus`` is always defined.
    """

    index: int
    t: float
    Hd_plus: np.ndarray | None
    H_plus: np.ndarray
    nu_plus: np.ndarray
    Hd: np.ndarray
    nu: np.ndarray


@dataclass(frozen=True)
class FilterAudit:
    records: tuple

    def __len__(self):
        return len(self.records)


class BackwardFilter:
    """Backward filter values on a :class:`TimeGrid`.

    Knot arrays (``nu``, ``Hdagger``, ``H``, ``F = H nu``) hold the values
    *after* the observation update at observation knots. Step arrays
    (``nu_step``, ``H_step``, ``F_step``) hold the values governing step
    ``k``, i.e. right limits at ``t_k``; they differ from the knot arrays
    only where a step starts at an observation time.
    """

    def __init__(self, grid, nu, Hdagger, H, nu_step, H_step, tableau):
        self.grid = grid
        self.nu = nu
        self.Hdagger = Hdagger
        self.H = H
        self.F = np.einsum("kij,kj->ki", H, nu)
        self.nu_step = nu_step
        self.H_step = H_step
        self.F_step = np.einsum("kij,kj->ki", H_step, nu_step)
        self.tableau = tableau
        for arr in (self.nu, self.Hdagger, self.H, self.F, self.nu_step, self.H_step, self.F_step):
            arr.setflags(write=False)

    @property
    def d(self) -> int:
        return self.nu.shape[1]

    def residual(self, k: int, x) -> np.ndarray:
        """``r(t_k, x) = H(t_k) (nu(t_k) - x)`` with knot (post-update) values."""
        return self.F[k] - self.H[k] @ np.asarray(x, dtype=float)

    def x0_distribution(self):
        """Mean and covariance of the start-point proposal ``N(nu(0), Hd(0))``."""
        return self.nu[0], self.Hdagger[0]

    def to_csv(self, path) -> None:
        """One row per knot: ``t, nu_1..nu_d, Hd`` in column-major order."""
        d = self.d
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            header = ["t"] + [f"nu{i + 1}" for i in range(d)]
            header += [f"Hd{i + 1}{j + 1}" for j in range(d) for i in range(d)]
            w.writerow(header)
            for k, t in enumerate(self.grid.t):
                row = [t, *self.nu[k], *self.Hdagger[k].ravel(order="F")]
                w.writerow([repr(float(v)) for v in row])


def terminal_values(L, Sigma, v, epsilon=0.0):
    """``Hd = (L' Sigma^-1 L + eps I)^-1`` and ``nu = Hd L' Sigma^-1 v``."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    SiL = spd_solve(Sigma, L, name="Sigma_n")
    info = symmetrize(L.T @ SiL) + epsilon * np.eye(L.shape[1])
    try:
        Hd = spd_inv(info, name="L' Sigma^-1 L + eps I")
    except SpdError:
        raise ConfigError(
            "terminal information matrix is singular; choose epsilon > 0"
        ) from None
    return Hd, Hd @ (SiL.T @ v)


def init_terminal(schedule: ObservationSchedule):
    last = schedule[-1]
    return terminal_values(last.L, last.Sigma, last.v, schedule.epsilon)


def observation_jump(Hd_plus, nu_plus, L, Sigma, v, index=None):
    """Condition ``N(nu_plus, Hd_plus)`` on ``v = L x + N(0, Sigma)``.

    Returns the updated ``(Hd, nu)``. ``Hd_plus`` must be invertible.
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    Hd = woodbury_downdate(Hd_plus, L, Sigma, index=index)
    try:
        prior_info = spd_solve(Hd_plus, nu_plus, name="Hd(t+)", index=index)
    except SpdError:
        raise JumpUpdateError(
            "Hd(t+) is singular; use epsilon > 0 or change the auxiliary process",
            index=index,
        ) from None
    nu = Hd @ (L.T @ spd_solve(Sigma, v, name="Sigma", index=index) + prior_info)
    return Hd, nu


def _pack(Hd, nu):
    return np.concatenate([Hd.ravel(), nu])


def ode_segment(Hd_end, nu_end, aux: LinearAuxiliary, grid: TimeGrid, k0: int, k1: int,
                tableau: RkTableau = RALSTON2):
    """Integrate the filter ODEs backward from knot ``k1`` to knot ``k0``.

    Returns arrays ``Hd`` of shape ``(k1 - k0 + 1, d, d)`` and ``nu`` of shape
    ``(k1 - k0 + 1, d)`` at knots ``k0..k1``; the last entry equals the end
    values. In time-change mode the right-hand sides are multiplied by
    ``tau'`` and integrated in the uniform variable.
    """
    d = nu_end.size
    n = k1 - k0
    Hds = np.empty((n + 1, d, d))
    nus = np.empty((n + 1, d))
    Hds[n] = Hd_end
    nus[n] = nu_end
    y = _pack(np.asarray(Hd_end, dtype=float), np.asarray(nu_end, dtype=float))
    for k in range(k1 - 1, k0 - 1, -1):
        scale = grid.ds[k]

        def rhs(theta, y, k=k, scale=scale):
            beta, B, a = aux.stage(grid, k, theta)
            Hd = y[: d * d].reshape(d, d)
            nu = y[d * d :]
            BHd = B @ Hd
            c = scale * grid.tdot_at(k, theta)
            return np.concatenate([(c * (BHd + BHd.T - a)).ravel(), c * (B @ nu + beta)])

        try:
            # Integrate in the step fraction theta from 1 down to 0.
            y = rk_step(rhs, 1.0, y, -1.0, tableau)
        except IntegrationError:
            raise IntegrationError("backward filter diverged", time=grid.t[k]) from None
        Hd = symmetrize(y[: d * d].reshape(d, d))
        y[: d * d] = Hd.ravel()
        Hds[k - k0] = Hd
        nus[k - k0] = y[d * d :]
    return Hds, nus


def _batched_inverse(Hd, offset=0):
    try:
        Lc = np.linalg.cholesky(Hd)
    except np.linalg.LinAlgError:
        for k in range(Hd.shape[0]):
            spd_inv(Hd[k], name="Hd", index=k + offset)
        raise
    eye = np.broadcast_to(np.eye(Hd.shape[-1]), Hd.shape)
    Li = np.linalg.solve(Lc, eye)
    return symmetrize(np.swapaxes(Li, -1, -2) @ Li)


def run_backward(schedule: ObservationSchedule, aux: LinearAuxiliary, grid: TimeGrid,
                 tableau: RkTableau = RALSTON2):
    """Backward filter on the whole grid.

    Returns
    -------
    (BackwardFilter, FilterAudit)
    """
    if schedule.d != aux.d:
        raise ConfigError("auxiliary and observation dimensions differ")
    n_obs = len(schedule)
    if grid.obs_index.size != n_obs or not np.allclose(grid.t[grid.obs_index], schedule.times):
        raise ConfigError("grid does not match the observation schedule")
    d = schedule.d
    K = grid.nsteps
    nu = np.empty((K + 1, d))
    Hd = np.empty((K + 1, d, d))
    pre_jump = {}
    records = []

    last = schedule[-1]
    Hd_n, nu_n = init_terminal(schedule)
    eps = schedule.epsilon
    records.append(
        JumpRecord(
            n_obs - 1, last.t, None if eps == 0 else np.eye(d) / eps, eps * np.eye(d),
            np.zeros(d), Hd_n, nu_n,
        )
    )
    kN = int(grid.obs_index[-1])
    Hd[kN], nu[kN] = Hd_n, nu_n

    obs_at = {int(k): i for i, k in enumerate(grid.obs_index)}
    bounds = list(range(0, K + 1, grid.m))
    for k0, k1 in zip(bounds[-2::-1], bounds[:0:-1]):
        Hds, nus = ode_segment(Hd[k1], nu[k1], aux, grid, k0, k1, tableau)
        Hd[k0:k1] = Hds[:-1]
        nu[k0:k1] = nus[:-1]
        i = obs_at.get(k0)
        if i is not None:
            o = schedule[i]
            pre_jump[k0] = (Hd[k0].copy(), nu[k0].copy())
            Hd_new, nu_new = observation_jump(Hd[k0], nu[k0], o.L, o.Sigma, o.v, index=i)
            records.append(
                JumpRecord(i, o.t, Hd[k0].copy(), spd_inv(Hd[k0]), nu[k0].copy(), Hd_new, nu_new)
            )
            Hd[k0], nu[k0] = Hd_new, nu_new

    H = _batched_inverse(Hd)
    nu_step = nu[:-1].copy()
    Hd_step_fix = {k: v for k, v in pre_jump.items() if k < K}
    H_step = H[:-1].copy()
    for k, (Hd_p, nu_p) in Hd_step_fix.items():
        nu_step[k] = nu_p
        H_step[k] = spd_inv(Hd_p, name="Hd(t+)", index=obs_at[k])
    bf = BackwardFilter(grid, nu, Hd, H, nu_step, H_step, tableau)
    records.sort(key=lambda r: r.index)
    return bf, FilterAudit(tuple(records))

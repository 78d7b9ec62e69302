"""Growing-dimension reference filter, for verification only.

Integrates the stacked quantities ``Lt`` (observation maps pulled back to
time ``t``), ``Mdag`` (their integrated covariance plus observation noise)
and ``mu`` (pulled-back auxiliary drift offsets):

    dLt/dt = -Lt B,   dMdag/dt = -Lt a Lt',   dmu/dt = -Lt beta,

and assembles ``H = Lt' M Lt`` and ``r = Lt' M (xobs - mu - Lt x)`` with
``M = Mdag^{-1}``. The stacked dimension grows by ``m_i`` at every
observation time, so this is far slower than :mod:`.backward` and is used to
cross-check it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IntegrationError, SpdError
from .model import LinearAuxiliary, ObservationSchedule, TimeGrid
from .numerics import RALSTON2, RkTableau, rk_step, spd_solve, symmetrize

__all__ = ["StackedFilterState", "run_reference", "assemble_H_r"]


@dataclass(frozen=True)
class StackedFilterState:
    """Per-knot stacked quantities; entry ``k`` holds values at ``t_k`` (post-update)."""

    grid: TimeGrid
    Lt: tuple
    Mdag: tuple
    mu: tuple
    xobs: tuple

    def dim(self, k: int) -> int:
        return self.Lt[k].shape[0]


def _segment(Lt, Mdag, mu, aux, grid, k0, k1, tableau):
    M, d = Lt.shape
    out = [None] * (k1 - k0 + 1)
    out[-1] = (Lt, Mdag, mu)
    y = np.concatenate([Lt.ravel(), Mdag.ravel(), mu])
    nL, nM = M * d, M * M
    for k in range(k1 - 1, k0 - 1, -1):
        scale = grid.ds[k]

        def rhs(theta, y, k=k, scale=scale):
            beta, B, a = aux.stage(grid, k, theta)
            L = y[:nL].reshape(M, d)
            c = scale * grid.tdot_at(k, theta)
            return np.concatenate(
                [(-c * (L @ B)).ravel(), (-c * (L @ a @ L.T)).ravel(), -c * (L @ beta)]
            )

        try:
            y = rk_step(rhs, 1.0, y, -1.0, tableau)
        except IntegrationError:
            raise IntegrationError("reference filter diverged", time=grid.t[k]) from None
        Md = symmetrize(y[nL : nL + nM].reshape(M, M))
        y[nL : nL + nM] = Md.ravel()
        out[k - k0] = (y[:nL].reshape(M, d).copy(), Md, y[nL + nM :].copy())
    return out


def run_reference(schedule: ObservationSchedule, aux: LinearAuxiliary, grid: TimeGrid,
                  tableau: RkTableau = RALSTON2) -> StackedFilterState:
    """Stacked backward recursion on ``grid``.

    With ``epsilon > 0`` an artificial observation ``0 = x + N(0, I / epsilon)``
    just after the last time is included first.
    """
    d = schedule.d
    K = grid.nsteps
    Lt = [None] * (K + 1)
    Md = [None] * (K + 1)
    mu = [None] * (K + 1)
    xo = [None] * (K + 1)

    def stack(i, L_plus, Md_plus, mu_plus, xo_plus):
        o = schedule[i]
        m = o.m
        Mn = Md_plus.shape[0]
        Mdag = np.zeros((m + Mn, m + Mn))
        Mdag[:m, :m] = o.Sigma
        Mdag[m:, m:] = Md_plus
        return (
            np.vstack([o.L, L_plus]),
            Mdag,
            np.concatenate([np.zeros(m), mu_plus]),
            np.concatenate([o.v, xo_plus]),
        )

    if schedule.epsilon > 0:
        start = (np.eye(d), np.eye(d) / schedule.epsilon, np.zeros(d), np.zeros(d))
    else:
        start = (np.zeros((0, d)), np.zeros((0, 0)), np.zeros(0), np.zeros(0))
    kN = K
    Lt[kN], Md[kN], mu[kN], xo[kN] = stack(len(schedule) - 1, *start)

    obs_at = {int(k): i for i, k in enumerate(grid.obs_index)}
    bounds = list(range(0, K + 1, grid.m))
    for k0, k1 in zip(bounds[-2::-1], bounds[:0:-1]):
        seg = _segment(Lt[k1], Md[k1], mu[k1], aux, grid, k0, k1, tableau)
        for j, (L_, M_, m_) in enumerate(seg[:-1]):
            Lt[k0 + j], Md[k0 + j], mu[k0 + j], xo[k0 + j] = L_, M_, m_, xo[k1]
        i = obs_at.get(k0)
        if i is not None:
            Lt[k0], Md[k0], mu[k0], xo[k0] = stack(i, Lt[k0], Md[k0], mu[k0], xo[k0])
    return StackedFilterState(grid, tuple(Lt), tuple(Md), tuple(mu), tuple(xo))


def assemble_H_r(state: StackedFilterState, k: int, x):
    """``H(t_k)`` and ``r(t_k, x)`` from the stacked quantities at knot ``k``."""
    L = state.Lt[k]
    try:
        ML = spd_solve(state.Mdag[k], L, name="Mdag", index=k)
        Mres = spd_solve(
            state.Mdag[k], state.xobs[k] - state.mu[k] - L @ np.asarray(x, dtype=float),
            name="Mdag", index=k,
        )
    except SpdError as exc:
        raise SpdError(f"stacked covariance is not positive definite: {exc}") from None
    return symmetrize(L.T @ ML), L.T @ Mres

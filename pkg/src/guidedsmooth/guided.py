"""Forward simulation of guided proposals and their log-likelihood weight.

The guided proposal adds the pulling term ``a(t, x) r(t, x)`` to the drift of
the target, with ``r(t, x) = H(t) (nu(t) - x)`` from a :class:`BackwardFilter`.
Paths are produced by an Euler scheme; the log weight
``log Psi = int G(t, X_t) dt`` is accumulated by left-endpoint sums on the
same grid, with

    G(t, x) = (b - b~)' r - 1/2 tr[(a - a~)(H - r r')].

Two schemes are available. ``"euler"`` steps ``X`` in physical time on any
grid, including the time-changed grids that crowd knots before each
observation. ``"scaled"`` steps ``U = (nu - X) / tau'`` in the uniform
variable of a time-changed grid. The scaled scheme is accurate only when
every observation pins down the full state with negligible noise. In any
direction where ``H`` stays bounded (unobserved coordinates, or observation
noise that is not small next to the diffusion over the last steps of a
segment) ``U`` grows like ``1 / tau'`` near the segment end, and the
left-point Euler factor shrinks ``nu - X`` there by a fixed fraction that
does not vanish as the grid is refined. This affects the mean path as well
as its spread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .backward import BackwardFilter
from .errors import ConfigError, ProposalError
from .model import DiffusionModel, LinearAuxiliary, TimeChange, TimeGrid, build_timechange

SCHEMES = ("euler", "scaled")

__all__ = [
    "SCHEMES",
    "GuidedPath",
    "GuidedSimulator",
    "TimeChange",
    "build_timechange",
    "guided_forward",
    "guided_forward_timechanged",
    "log_G_increment",
]


@dataclass(frozen=True)
class GuidedPath:
    """A simulated guided proposal.

    Attributes
    ----------
    grid : TimeGrid
    states : ndarray, shape (K + 1, d)
        Path at the grid knots (physical times ``grid.t``).
    noise : ndarray, shape (K, d')
        Driving Wiener increments; step ``k`` has variance ``grid.ds[k]``.
    x0 : ndarray, shape (d,)
    log_psi : float
    """

    grid: TimeGrid
    states: np.ndarray
    noise: np.ndarray
    x0: np.ndarray
    log_psi: float


class GuidedSimulator:
    """Guided proposal sampler bound to one filter, model and auxiliary process.

    Parameters
    ----------
    filter : BackwardFilter
    model : DiffusionModel
    aux : LinearAuxiliary
        The auxiliary process the filter was computed from.
    scheme : {"euler", "scaled"}
        ``"scaled"`` requires a time-changed grid.
    force_python : bool
        Bypass the compiled kernels.
    """

    def __init__(self, filter: BackwardFilter, model: DiffusionModel, aux: LinearAuxiliary,
                 scheme="euler", force_python=False):
        grid = filter.grid
        if model.d != filter.d or aux.d != filter.d:
            raise ConfigError("model, auxiliary and filter dimensions differ")
        if scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        timechanged = scheme == "scaled"
        if timechanged and not grid.is_timechanged:
            raise ConfigError("the scaled scheme needs a time-changed grid")
        self.filter = filter
        self.model = model
        self.aux = aux
        self.grid = grid
        self.scheme = scheme
        self.timechanged = timechanged
        self.force_python = force_python
        tb = aux.tables(grid)
        c = np.ascontiguousarray
        self._beta = c(tb["beta"][:, 0])
        self._B = c(tb["B"][:, 0])
        self._a = c(tb["a"][:, 0])
        self._H = c(filter.H_step)
        self._F = c(filter.F_step)
        self._t = c(grid.t)
        if self.timechanged:
            self._ds = c(grid.ds)
            # tau' per step; the last step of a segment is taken in physical time.
            self._rate = c(np.where(self._seg_end_mask(grid), grid.h / grid.ds, grid.tdot0))
            self._seg_end = self._seg_end_mask(grid).astype(np.uint8)
            self._nu = c(filter.nu_step)
            self._nu_next = c(filter.nu[1:])
            self.noise_sd = np.sqrt(grid.ds)
        else:
            self._dt = c(grid.h)
            self.noise_sd = np.sqrt(grid.h)

    @staticmethod
    def _seg_end_mask(grid):
        return (np.arange(grid.nsteps) + 1) % grid.m == 0

    @property
    def backend(self) -> str:
        return kernels.backend_for(self.model, self.force_python)

    @property
    def noise_shape(self):
        return (self.grid.nsteps, self.model.dprime)

    def draw_noise(self, rng) -> np.ndarray:
        """Fresh Wiener increments with the variances this scheme expects."""
        gen = getattr(rng, "generator", rng)
        return gen.standard_normal(self.noise_shape) * self.noise_sd[:, None]

    def run(self, x0, noise) -> GuidedPath:
        """Simulate from ``x0`` driven by ``noise``; raises :class:`ProposalError`."""
        x0 = np.ascontiguousarray(x0, dtype=float)
        noise = np.ascontiguousarray(noise, dtype=float)
        if noise.shape != self.noise_shape:
            raise ConfigError(f"noise has shape {noise.shape}, expected {self.noise_shape}")
        out = np.empty((self.grid.nsteps + 1, self.model.d))
        if self.timechanged:
            g = self.grid
            log_psi, fail = kernels.guided_euler_timechanged(
                self.model, self._t, self._ds, self._rate, g.tdot1, g.tddot, self._seg_end,
                self._H, self._F, self._nu, self._nu_next, self._beta, self._B, self._a,
                noise, x0, out, force_python=self.force_python,
            )
        else:
            log_psi, fail = kernels.guided_euler(
                self.model, self._t, self._dt, self._H, self._F, self._beta, self._B, self._a,
                noise, x0, out, force_python=self.force_python,
            )
        if fail >= 0:
            raise ProposalError("guided proposal diverged", step=fail, time=self.grid.t[fail])
        out.setflags(write=False)
        return GuidedPath(self.grid, out, noise, x0, float(log_psi))

    def G(self, k: int, x) -> float:
        """Integrand ``G(t_k, x)`` with the values governing step ``k``."""
        x = np.asarray(x, dtype=float)
        t = self.grid.t[k]
        b = np.asarray(self.model.drift(t, x), dtype=float)
        a = self.model.diffusion_matrix(t, x)
        H = self._H[k]
        r = self._F[k] - H @ x
        bt = self._beta[k] + self._B[k] @ x
        D = a - self._a[k]
        return float((b - bt) @ r - 0.5 * (np.sum(D * H) - r @ D @ r))

    def log_psi_quadrature(self, states) -> float:
        """Left-endpoint Riemann sum of ``G`` along ``states`` on this grid."""
        w = self.grid.ds * self._rate if self.timechanged else self.grid.h
        return math.fsum(self.G(k, states[k]) * w[k] for k in range(self.grid.nsteps))


def log_G_increment(t, x, filter: BackwardFilter, model: DiffusionModel,
                    aux: LinearAuxiliary, k: int | None = None) -> float:
    """``G(t, x)`` using the filter values that govern the step starting at ``t``.

    ``t`` must be a grid knot before the final time (or pass ``k`` directly).
    """
    grid = filter.grid
    if k is None:
        k = grid.nearest_knot(t)
        if not math.isclose(grid.t[k], t, rel_tol=0, abs_tol=1e-12) or k >= grid.nsteps:
            raise ConfigError(f"t={t} is not a step start of the grid")
    tb = aux.tables(grid)
    x = np.asarray(x, dtype=float)
    b = np.asarray(model.drift(t, x), dtype=float)
    a = model.diffusion_matrix(t, x)
    H = filter.H_step[k]
    r = filter.F_step[k] - H @ x
    bt = tb["beta"][k, 0] + tb["B"][k, 0] @ x
    D = a - tb["a"][k, 0]
    return float((b - bt) @ r - 0.5 * (np.sum(D * H) - r @ D @ r))


def guided_forward(x0, noise, filter: BackwardFilter, model: DiffusionModel,
                   aux: LinearAuxiliary, force_python=False) -> GuidedPath:
    """Euler simulation of the guided proposal on ``filter.grid``.

    ``noise[k]`` is the Wiener increment over step ``k`` (variance ``h_k``).
    """
    sim = GuidedSimulator(filter, model, aux, scheme="euler", force_python=force_python)
    return sim.run(x0, noise)


def guided_forward_timechanged(x0, noise, filter_tau: BackwardFilter, model: DiffusionModel,
                               aux: LinearAuxiliary, tc: TimeChange | None = None,
                               force_python=False) -> GuidedPath:
    """Scaled-process simulation on a grid built by :meth:`TimeGrid.timechanged`.

    ``noise[k]`` is a Wiener increment in the uniform variable (variance
    ``grid.ds[k]``). The returned states are reported at the image knots.
    See the module notes on when this scheme is accurate.
    """
    grid = filter_tau.grid
    if tc is not None and not np.allclose(tc.bounds, grid.timechange.bounds):
        raise ConfigError("time change does not match the filter grid")
    sim = GuidedSimulator(filter_tau, model, aux, scheme="scaled", force_python=force_python)
    return sim.run(x0, noise)

"""Metropolis-Hastings smoother with preconditioned Crank-Nicolson proposals.

The chain state is the start point ``x0`` and the driving Wiener increments
of a guided proposal. Each iteration perturbs both with a random persistence
``lambda`` in ``[0, 1)``, simulates the proposal and accepts with probability
``min(1, Psi(new) / Psi(current))``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .backward import BackwardFilter, init_terminal, observation_jump, ode_segment, run_backward
from .errors import ConfigError, GuidedSmoothError, NumericalError, ProposalError
from .guided import SCHEMES, GuidedPath, GuidedSimulator
from .model import DiffusionModel, LinearAuxiliary, ObservationSchedule, TimeGrid
from .numerics import TABLEAUS, RngStream, cholesky, rk_step

__all__ = [
    "SmootherConfig",
    "ChainState",
    "SmoothingResult",
    "pcn_propose",
    "mh_step",
    "run_smoother",
    "aux_method_A",
    "aux_method_B",
    "aux_method_C_refresh",
]

log = logging.getLogger(__name__)

DEFAULT_ALPHA = {"A": 5.0, "B": 5.0, "C": 0.5}
# "beta(alpha,1)": density proportional to lambda^(alpha - 1), so large alpha
# favours lambda near 1 (small moves). "beta(1,alpha)" is the mirror image.
LAMBDA_LAWS = ("beta(alpha,1)", "beta(1,alpha)")


@dataclass(frozen=True)
class SmootherConfig:
    """Settings of one smoothing run.

    ``alpha=None`` selects 5 for methods A and B and 0.5 for method C.
    ``lambda_law`` picks the Beta law of the persistence: ``"beta(alpha,1)"``
    (default; large ``alpha`` gives small moves) or ``"beta(1,alpha)"``.
    ``lambda_fixed`` overrides both with a constant. ``time_change`` crowds
    the grid knots towards each observation time; ``scheme`` selects the
    proposal discretisation (see :mod:`.guided`).
    ``adapt_every=None`` selects 1000 for method C and 0 (no adaptation)
    otherwise. ``save_every=0`` disables path saving; ``trace_times`` are
    snapped to the nearest grid knot.
    """

    N: int = 10_000
    alpha: float | None = None
    epsilon: float | None = None
    m: int = 50
    adapt_every: int | None = None
    aux_method: str = "C"
    aux_init: str = "A"
    time_change: bool = False
    scheme: str = "euler"
    burnin: int = 10_000
    thin: int = 1
    save_every: int = 0
    trace_times: tuple = ()
    seed: int = 0
    stream: int = 0
    tableau: str = "ralston2"
    lambda_law: str = "beta(alpha,1)"
    lambda_fixed: float | None = None
    force_accept_first_adapt: bool = True
    force_python: bool = False

    def __post_init__(self):
        if self.N < 0:
            raise ConfigError("N must be non-negative")
        if self.aux_method not in DEFAULT_ALPHA or self.aux_init not in ("A", "B"):
            raise ConfigError("aux_method must be A, B or C; aux_init must be A or B")
        if self.alpha is not None and not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if self.thin < 1 or self.burnin < 0 or self.save_every < 0:
            raise ConfigError("thin >= 1, burnin >= 0 and save_every >= 0 required")
        if self.lambda_fixed is not None and not 0.0 <= self.lambda_fixed < 1.0:
            raise ConfigError("lambda_fixed must lie in [0, 1)")
        if self.lambda_law not in LAMBDA_LAWS:
            raise ConfigError(f"lambda_law must be one of {sorted(LAMBDA_LAWS)}")
        if self.scheme not in SCHEMES or (self.scheme == "scaled" and not self.time_change):
            raise ConfigError("scheme must be 'euler', or 'scaled' together with time_change")
        if self.tableau not in TABLEAUS:
            raise ConfigError(f"unknown tableau {self.tableau!r}")

    @property
    def alpha_value(self) -> float:
        return DEFAULT_ALPHA[self.aux_method] if self.alpha is None else float(self.alpha)

    def draw_lambda(self, rng: RngStream) -> float:
        """Persistence ``lambda`` in ``[0, 1)`` from the configured law."""
        if self.lambda_fixed is not None:
            return float(self.lambda_fixed)
        a = self.alpha_value
        lam = float(rng.beta(a, 1.0) if self.lambda_law == "beta(alpha,1)" else rng.beta(1.0, a))
        return min(lam, float(np.nextafter(1.0, 0.0)))

    @property
    def adapt_value(self) -> int:
        if self.adapt_every is None:
            return 1000 if self.aux_method == "C" else 0
        return int(self.adapt_every)


@dataclass
class ChainState:
    path: GuidedPath
    log_psi: float
    rng: RngStream
    iteration: int = 0
    accepted: int = 0
    force_accept: bool = False

    @property
    def x0(self):
        return self.path.x0

    @property
    def noise(self):
        return self.path.noise


@dataclass
class SmoothingResult:
    """Output of :func:`run_smoother`.

    ``mean`` and ``sd`` are per-knot marginal moments over the post burn-in
    iterations (every ``thin``-th). Bands ``mean +/- 1.96 sd`` are a Normal
    approximation of marginal 95% credible intervals.
    """

    times: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    nsamples: int
    saved_iterations: np.ndarray
    paths: np.ndarray
    lambdas: np.ndarray
    log_psi: np.ndarray
    accepted: np.ndarray
    trace_times: np.ndarray
    trace: np.ndarray
    adaptation: list
    aux: LinearAuxiliary
    filter: BackwardFilter
    backend: str
    metadata: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean()) if self.accepted.size else float("nan")

    def bands(self, z: float = 1.96):
        return self.mean - z * self.sd, self.mean + z * self.sd


def _x0_chol(filter: BackwardFilter):
    return cholesky(filter.Hdagger[0], name="Hd(0)", index=0)


def pcn_propose(state: ChainState, lam: float, filter: BackwardFilter, sim: GuidedSimulator,
                fresh=None):
    """Crank-Nicolson perturbation of ``(x0, noise)``.

    ``x0' = nu(0) + sqrt(lam) (x0 - nu(0)) + sqrt(1 - lam) xi``,
    ``xi ~ N(0, Hd(0))``, and ``noise' = sqrt(lam) noise + sqrt(1 - lam) W``
    with fresh increments ``W``. ``fresh=(xi, W)`` overrides the draws.
    """
    if not 0.0 <= lam < 1.0:
        raise ConfigError("lambda must lie in [0, 1)")
    nu0 = filter.nu[0]
    if fresh is None:
        chol = getattr(sim, "_x0_chol", None)
        if chol is None:
            chol = sim._x0_chol = _x0_chol(filter)
        xi = chol @ state.rng.normal(nu0.size)
        W = sim.draw_noise(state.rng)
    else:
        xi, W = fresh
    a, b = math.sqrt(lam), math.sqrt(1.0 - lam)
    return nu0 + a * (state.x0 - nu0) + b * xi, a * state.noise + b * W


def mh_step(state: ChainState, sim: GuidedSimulator, config: SmootherConfig, lam=None):
    """One Metropolis-Hastings iteration; returns ``(state, lam, accepted)``.

    A proposal whose simulation fails counts as ``Psi = 0`` and is rejected.
    """
    if lam is None:
        lam = config.draw_lambda(state.rng)
    x0_new, noise_new = pcn_propose(state, lam, sim.filter, sim)
    try:
        prop = sim.run(x0_new, noise_new)
        log_ratio = prop.log_psi - state.log_psi
    except ProposalError as exc:
        log.debug("proposal rejected: %s", exc)
        prop, log_ratio = None, -math.inf
    state.iteration += 1
    accept = prop is not None and (
        state.force_accept or math.log(state.rng.uniform()) < log_ratio
    )
    if prop is not None:
        state.force_accept = False
    if accept:
        state.path = prop
        state.log_psi = prop.log_psi
        state.accepted += 1
    return state, lam, accept


def aux_method_A(model: DiffusionModel, anchor=None, t=0.0) -> LinearAuxiliary:
    """``B~ = 0``, ``beta~ = 0`` and ``sigma~`` fixed at ``sigma(t, anchor)``."""
    d = model.d
    if model.constant_dispersion is not None:
        sigma = model.constant_dispersion
    else:
        if anchor is None:
            raise ConfigError("state-dependent dispersion needs an anchor point")
        sigma = model.dispersion(t, np.asarray(anchor, dtype=float))
    return LinearAuxiliary.constant(np.zeros(d), np.zeros((d, d)), sigma)


def aux_method_B(model: DiffusionModel, schedule: ObservationSchedule, grid: TimeGrid,
                 tableau="ralston2") -> LinearAuxiliary:
    """``B~ = 0`` and ``beta~ = b`` along backward deterministic flows.

    On every segment the flow ``dx/dt = b(t, x)`` is solved backwards from the
    filter mean ``nu`` at the segment end; ``beta~`` tabulates ``b`` along it
    and ``sigma~ = sigma(t, nu)`` at the same anchor. The filter mean is
    updated segment by segment, so the returned tables are consistent with
    :func:`run_backward`. If a flow diverges, that segment falls back to
    ``beta~ = 0``. The flow states are attached as ``aux.flow``; row ``k``
    is the state at the start of step ``k`` (NaN on fallback segments).
    """
    tab = TABLEAUS[tableau] if isinstance(tableau, str) else tableau
    d, dp, K = model.d, model.dprime, grid.nsteps
    beta = np.zeros((K, 2, d))
    B = np.zeros((K, 2, d, d))
    sigma = np.zeros((K, 2, d, dp))
    flow = np.full((K + 1, d), np.nan)
    aux = LinearAuxiliary(d, dp, tables={"beta": beta, "B": B, "sigma": sigma}, grid=grid)
    tb = aux._tables

    Hd, nu = init_terminal(schedule)
    obs_at = {int(k): i for i, k in enumerate(grid.obs_index)}
    bounds = list(range(0, K + 1, grid.m))
    for k0, k1 in zip(bounds[-2::-1], bounds[:0:-1]):
        t1 = grid.t[k1]
        sig = np.asarray(model.dispersion(t1, nu), dtype=float)
        xs = np.empty((k1 - k0 + 1, d))
        xs[-1] = nu
        ok = True
        try:
            x = nu.copy()
            for k in range(k1 - 1, k0 - 1, -1):
                def rhs(theta, y, k=k):
                    return grid.ds[k] * grid.tdot_at(k, theta) * np.asarray(
                        model.drift(grid.time_at(k, theta), y), dtype=float)
                x = rk_step(rhs, 1.0, x, -1.0, tab)
                xs[k - k0] = x
        except NumericalError:
            ok = False
        if ok:
            bs = np.array([model.drift(grid.t[k0 + j], xs[j]) for j in range(k1 - k0 + 1)])
            ok = bool(np.all(np.isfinite(bs)))
        if not ok:
            log.warning("method B flow diverged on [%g, %g]; using beta~ = 0 there",
                        grid.t[k0], t1)
            bs = np.zeros((k1 - k0 + 1, d))
        else:
            flow[k0:k1] = xs[:-1]
            if k1 == K:
                flow[K] = xs[-1]
        tb["beta"][k0:k1, 0] = bs[:-1]
        tb["beta"][k0:k1, 1] = bs[1:]
        tb["sigma"][k0:k1] = sig
        tb["a"][k0:k1] = sig @ sig.T
        Hds, nus = ode_segment(Hd, nu, aux, grid, k0, k1, tab)
        Hd, nu = Hds[0], nus[0]
        i = obs_at.get(k0)
        if i is not None:
            o = schedule[i]
            Hd, nu = observation_jump(Hd, nu, o.L, o.Sigma, o.v, index=i)
    aux.flow = flow
    return aux


def aux_method_C_refresh(xbar, model: DiffusionModel, grid: TimeGrid,
                         current: LinearAuxiliary) -> LinearAuxiliary:
    """Linearise the drift around the mean path ``xbar`` (shape ``(K + 1, d)``).

    ``B~(t) = J_b(t, xbar)``, ``beta~(t) = b(t, xbar) - J_b(t, xbar) xbar``;
    ``sigma~`` is copied from ``current``.
    """
    xbar = np.asarray(xbar, dtype=float)
    K = grid.nsteps
    if xbar.shape != (K + 1, model.d):
        raise ConfigError("mean path does not match the grid")
    J = np.empty((K + 1, model.d, model.d))
    beta = np.empty((K + 1, model.d))
    for k, t in enumerate(grid.t):
        J[k] = model.jacobian(t, xbar[k])
        beta[k] = np.asarray(model.drift(t, xbar[k]), dtype=float) - J[k] @ xbar[k]
    if not (np.all(np.isfinite(J)) and np.all(np.isfinite(beta))):
        raise NumericalError("non-finite drift linearisation")
    tables = {
        "beta": np.stack([beta[:-1], beta[1:]], axis=1),
        "B": np.stack([J[:-1], J[1:]], axis=1),
        "sigma": current.tables(grid)["sigma"],
    }
    return LinearAuxiliary(model.d, model.dprime, tables=tables, grid=grid)


def _aux_change(old: LinearAuxiliary, new: LinearAuxiliary, grid) -> float:
    a, b = old.tables(grid), new.tables(grid)
    return float(max(np.abs(a["beta"] - b["beta"]).max(), np.abs(a["B"] - b["B"]).max()))


class _Moments:
    """Running per-knot mean and variance (Welford)."""

    def __init__(self, shape):
        self.n = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def add(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    @property
    def sd(self):
        if self.n < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self.m2 / (self.n - 1))


def _initial_state(sim: GuidedSimulator, rng: RngStream, tries: int = 100) -> ChainState:
    nu0 = sim.filter.nu[0]
    chol = _x0_chol(sim.filter)
    for _ in range(tries):
        x0 = nu0 + chol @ rng.normal(nu0.size)
        try:
            path = sim.run(x0, sim.draw_noise(rng))
        except ProposalError:
            continue
        return ChainState(path=path, log_psi=path.log_psi, rng=rng)
    raise NumericalError("could not simulate an initial guided proposal")


def run_smoother(model: DiffusionModel, schedule: ObservationSchedule,
                 aux0: LinearAuxiliary | None, config: SmootherConfig,
                 progress=None) -> SmoothingResult:
    """Sample the smoothing distribution of ``model`` given ``schedule``.

    Parameters
    ----------
    aux0 : LinearAuxiliary or None
        Starting auxiliary process. ``None`` builds it with method A or B
        (``config.aux_method``, or ``config.aux_init`` for method C).
    progress : callable, optional
        Called as ``progress(iteration, state)`` every 1000 iterations.
    """
    if config.epsilon is not None and config.epsilon != schedule.epsilon:
        schedule = ObservationSchedule(schedule.observations, config.epsilon, schedule.t_start)
    if model.d != schedule.d:
        raise ConfigError("model and observation dimensions differ")
    tableau = TABLEAUS[config.tableau]
    grid = (TimeGrid.timechanged if config.time_change else TimeGrid.uniform)(schedule, config.m)
    method = config.aux_method
    if aux0 is None:
        init = method if method in ("A", "B") else config.aux_init
        if init == "A":
            aux0 = aux_method_A(model, anchor=schedule[0].L.T @ schedule[0].v, t=grid.t[0])
        else:
            aux0 = aux_method_B(model, schedule, grid, tableau)
    aux = aux0
    aux.check_psd(grid)
    filt, _ = run_backward(schedule, aux, grid, tableau)
    sim = GuidedSimulator(filt, model, aux, config.scheme, config.force_python)
    rng = RngStream(config.seed, config.stream)
    state = _initial_state(sim, rng)

    N = config.N
    K = grid.nsteps
    adapt = config.adapt_value if method == "C" else 0
    lambdas = np.full(N, np.nan)
    log_psis = np.empty(N + 1)
    log_psis[0] = state.log_psi
    accepted = np.zeros(N, dtype=bool)
    trace_idx = np.array([grid.nearest_knot(t) for t in config.trace_times], dtype=np.intp)
    trace = np.empty((N + 1, trace_idx.size, model.d))
    trace[0] = state.path.states[trace_idx]
    moments = _Moments((K + 1, model.d))
    saved_it, saved = [], []
    burnin = config.burnin
    if burnin >= N and N > 0:
        log.warning("burn-in (%d) >= N (%d); statistics use the final state only", burnin, N)
    if N == 0:
        moments.add(state.path.states)
    if config.save_every:
        saved_it.append(0)
        saved.append(state.path.states)
    window_sum = np.zeros((K + 1, model.d))
    window_n = 0
    n_adapt = 0
    history = []

    for it in range(1, N + 1):
        state, lam, acc = mh_step(state, sim, config)
        lambdas[it - 1] = lam
        accepted[it - 1] = acc
        log_psis[it] = state.log_psi
        x = state.path.states
        trace[it] = x[trace_idx]
        if it > burnin and (it - burnin) % config.thin == 0:
            moments.add(x)
        if config.save_every and it % config.save_every == 0:
            saved_it.append(it)
            saved.append(x)
        if adapt:
            window_sum += x
            window_n += 1
            if it % adapt == 0 and it < N:
                xbar = window_sum / window_n
                window_sum[:] = 0.0
                window_n = 0
                try:
                    new_aux = aux_method_C_refresh(xbar, model, grid, aux)
                    new_filt, _ = run_backward(schedule, new_aux, grid, tableau)
                    new_sim = GuidedSimulator(new_filt, model, new_aux, config.scheme,
                                              config.force_python)
                    path = new_sim.run(state.x0, state.noise)
                except GuidedSmoothError as exc:
                    log.warning("adaptation at iteration %d rolled back: %s", it, exc)
                    history.append({"iteration": it, "change": float("nan"), "status": "rollback"})
                    continue
                history.append({"iteration": it, "change": _aux_change(aux, new_aux, grid),
                                "status": "ok"})
                aux, filt, sim = new_aux, new_filt, new_sim
                state.path = path
                state.log_psi = path.log_psi
                n_adapt += 1
                if n_adapt == 1 and config.force_accept_first_adapt:
                    state.force_accept = True
        if progress is not None and it % 1000 == 0:
            progress(it, state)

    if moments.n == 0:
        moments.add(state.path.states)
    return SmoothingResult(
        times=grid.t.copy(),
        mean=moments.mean,
        sd=moments.sd,
        nsamples=moments.n,
        saved_iterations=np.array(saved_it, dtype=np.int64),
        paths=np.array(saved) if saved else np.empty((0, K + 1, model.d)),
        lambdas=lambdas,
        log_psi=log_psis,
        accepted=accepted,
        trace_times=grid.t[trace_idx],
        trace=trace,
        adaptation=history,
        aux=aux,
        filter=filt,
        backend=sim.backend,
        metadata={
            "bands": "normal approximation: mean +/- 1.96 sd per knot",
            "alpha": config.alpha_value,
            "epsilon": schedule.epsilon,
            "grid_steps": K,
        },
    )

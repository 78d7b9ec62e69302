"""Verification checks against independent oracles.

Every check returns :class:`Check` records (name, tolerance, measured value,
verdict). ``run_level`` bundles them into suites for the command-line
``verify`` command: ``fast`` (deterministic checks and a short pCN run,
seconds), ``full`` (adds the Monte-Carlo oracle comparisons, under a
minute) and ``paper`` (the Lorenz and pendulum experiments, about ten
minutes). The acceptance tests call the same functions with their pinned
settings.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .backward import run_backward
from .guided import GuidedSimulator
from .mcmc import ChainState, SmootherConfig, pcn_propose, run_smoother
from .model import LinearAuxiliary, Observation, ObservationSchedule, TimeGrid, ou_model
from .numerics import RALSTON2, RALSTON4, RngStream
from .oracles import (
    G_reference,
    gaussian_conditioning,
    information_smoother,
    scalar_lyapunov,
)
from .reference import assemble_H_r, run_reference

__all__ = [
    "Check",
    "ou_problem",
    "random_linear_problem",
    "check_matched_linear",
    "check_cross_filter",
    "check_ode_order",
    "check_zero_noise",
    "check_mode_equivalence",
    "check_G_reimplementation",
    "check_pcn",
    "check_lorenz",
    "check_pendulum",
    "run_level",
    "LEVELS",
]


@dataclass
class Check:
    name: str
    tolerance: str
    value: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict}  {self.name}: value={self.value:.6g} tolerance {self.tolerance} {self.detail}".rstrip()

    def as_dict(self):
        out = asdict(self)
        out["value"] = float(self.value)
        out["passed"] = bool(self.passed)
        return out


# -- test problems -------------------------------------------------------------

OU_B = np.array([[-1.0, 0.5], [-0.5, -0.8]])
OU_BETA = np.array([0.3, -0.2])
OU_SIGMA = np.array([[0.7, 0.0], [0.2, 0.5]])


def ou_problem(Sigma=0.1, epsilon=1e-3, seed=0):
    """Two-dimensional OU model with 10 noisy observations of the first coordinate.

    Observations at ``0.1, 0.2, ..., 1.0``; the start point at time 0 is
    free. Returns ``(model, schedule)``.
    """
    model = ou_model(OU_B, OU_BETA, OU_SIGMA)
    rng = np.random.default_rng(seed)
    times = 0.1 * np.arange(1, 11)
    values = rng.normal(size=(10, 1))
    sched = ObservationSchedule.constant(
        times, values, np.array([[1.0, 0.0]]), Sigma * np.eye(1), epsilon=epsilon, t_start=0.0
    )
    return model, sched


def _random_spd(rng, n, scale=1.0):
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T / n + 0.5 * np.eye(n))


def random_linear_problem(rng: np.random.Generator):
    """Random schedule and linear auxiliary: ``d <= 4``, at most 3 observations."""
    d = int(rng.integers(1, 5))
    n = int(rng.integers(1, 4))
    dp = int(rng.integers(1, d + 1))
    times = np.cumsum(rng.uniform(0.2, 0.6, size=n))
    obs = []
    for t in times:
        m = int(rng.integers(1, d + 1))
        obs.append(Observation(float(t), rng.normal(size=(m, d)), _random_spd(rng, m, 0.5),
                               rng.normal(size=m)))
    sched = ObservationSchedule(obs, epsilon=float(rng.uniform(0.05, 0.5)), t_start=0.0)
    aux = LinearAuxiliary.constant(
        rng.normal(size=d), 0.5 * rng.normal(size=(d, d)), 0.7 * rng.normal(size=(d, dp))
    )
    return sched, aux


# -- deterministic checks --------------------------------------------------------


def check_cross_filter(nproblems=20, seed=0, m=200, tol=1e-8, conj_tol=1e-10):
    """Constant-dimension filter against the stacked reference filter, plus jump conjugacy."""
    rng = np.random.default_rng(seed)
    errH = errr = errj = 0.0
    njumps = 0
    t0 = time.perf_counter()
    for _ in range(nproblems):
        sched, aux = random_linear_problem(rng)
        grid = TimeGrid.uniform(sched, m)
        bf, audit = run_backward(sched, aux, grid, RALSTON4)
        ref = run_reference(sched, aux, grid, RALSTON4)
        for k in range(grid.nsteps + 1):
            x = rng.normal(size=sched.d)
            H, r = assemble_H_r(ref, k, x)
            errH = max(errH, np.abs(H - bf.H[k]).max())
            errr = max(errr, np.abs(r - bf.residual(k, x)).max())
        for rec in audit.records:
            o = sched[rec.index]
            if rec.Hd_plus is None:
                continue
            mean, cov = gaussian_conditioning(rec.nu_plus, rec.Hd_plus, o.L, o.Sigma, o.v)
            errj = max(errj, np.abs(mean - rec.nu).max(), np.abs(cov - rec.Hd).max())
            njumps += 1
    dt = time.perf_counter() - t0
    detail = f"({nproblems} problems, {dt:.1f}s)"
    return [
        Check("cross-filter H", f"<= {tol:g}", errH, errH <= tol, detail),
        Check("cross-filter r", f"<= {tol:g}", errr, errr <= tol, detail),
        Check("jump conjugacy", f"<= {conj_tol:g}", errj, errj <= conj_tol, f"({njumps} updates)"),
    ]


def _scalar_errors(steps, B=-0.7, a=0.5, Sigma=0.3, T=1.0):
    out = []
    sched = ObservationSchedule([Observation(T, [[1.0]], [[Sigma]], [0.0])], t_start=0.0)
    aux = LinearAuxiliary.constant([0.0], [[B]], [[math.sqrt(a)]])
    for h in steps:
        grid = TimeGrid.uniform(sched, int(round(T / h)))
        bf, _ = run_backward(sched, aux, grid, RALSTON2)
        exact = scalar_lyapunov(B, a, Sigma, T, grid.t)
        out.append(float(np.abs(bf.Hdagger[:, 0, 0] - exact).max()))
    return out


def check_ode_order(steps=(1e-2, 5e-3, 2.5e-3), min_slope=1.9):
    """Empirical convergence order of the filter ODE on the scalar closed-form case."""
    errs = _scalar_errors(steps)
    slopes = [math.log(errs[i] / errs[i + 1]) / math.log(steps[i] / steps[i + 1])
              for i in range(len(steps) - 1)]
    return [Check("ODE order", f">= {min_slope}", min(slopes), min(slopes) >= min_slope,
                  f"(errors {', '.join(f'{e:.3g}' for e in errs)})")]


def check_zero_noise(powers=(2, 4, 6), final_tol=1e-4):
    """``nu(S) -> v`` and ``Hd(S) -> 0`` as full observations become exact."""
    rng = np.random.default_rng(3)
    d = 2
    v = rng.normal(size=d)
    aux = LinearAuxiliary.constant(OU_BETA, OU_B, OU_SIGMA)
    dn, hn = [], []
    for p in powers:
        obs = [Observation(0.5, np.eye(d), 10.0 ** (-p) * np.eye(d), v),
               Observation(1.0, np.eye(d), np.eye(d), np.ones(d))]
        sched = ObservationSchedule(obs, t_start=0.0)
        bf, _ = run_backward(sched, aux, TimeGrid.uniform(sched, 50))
        k = int(bf.grid.obs_index[0])
        dn.append(float(np.abs(bf.nu[k] - v).max()))
        hn.append(float(np.abs(bf.Hdagger[k]).max()))
    mono = all(dn[i + 1] < dn[i] for i in range(len(dn) - 1)) and all(
        hn[i + 1] < hn[i] for i in range(len(hn) - 1))
    worst = max(dn[-1], hn[-1])
    return [Check("zero-noise limit", f"monotone and final <= {final_tol:g}", worst,
                  mono and worst <= final_tol,
                  f"(|nu-v| {', '.join(f'{x:.2g}' for x in dn)}; |Hd| {', '.join(f'{x:.2g}' for x in hn)})")]


def check_G_reimplementation(seed=0, tol=1e-9):
    """Kernel log-weight against a left-endpoint sum of an independently coded ``G``."""
    from .mcmc import aux_method_B
    from .simulate import observe, simulate_path
    from .model import lorenz_model

    model = lorenz_model()
    t, X = simulate_path(model, (1.0, 1.0, 20.0), 0.4, 1e-3, RngStream(seed, 0))
    sched = observe(t, X, [0.0, 0.2, 0.4], np.eye(3), np.eye(3), RngStream(seed, 1), 1e-3)
    grid = TimeGrid.uniform(sched, 20)
    aux = aux_method_B(model, sched, grid)
    bf, _ = run_backward(sched, aux, grid)
    worst = 0.0
    for force_python in (False, True):
        sim = GuidedSimulator(bf, model, aux, force_python=force_python)
        rng = RngStream(seed, 2)
        path = sim.run(bf.nu[0], sim.draw_noise(rng))
        tb = aux.tables(grid)
        ref = math.fsum(
            G_reference(model.drift(grid.t[k], path.states[k]),
                        tb["beta"][k, 0] + tb["B"][k, 0] @ path.states[k],
                        model.diffusion_matrix(grid.t[k], path.states[k]), tb["a"][k, 0],
                        bf.H_step[k], bf.nu_step[k], path.states[k]) * grid.h[k]
            for k in range(grid.nsteps)
        )
        worst = max(worst, abs(path.log_psi - ref) / max(1.0, abs(ref)))
    return [Check("G re-implementation", f"<= {tol:g} (relative)", worst, worst <= tol)]


# -- Monte-Carlo checks ------------------------------------------------------------


def _posterior_stats(res, idx):
    """Means, sds and their standard errors at knots ``idx`` from i.i.d. draws."""
    n = res.nsamples
    mean, sd = res.mean[idx], res.sd[idx]
    return mean, sd, sd / math.sqrt(n), sd / math.sqrt(2.0 * (n - 1))


def check_matched_linear(N=20_000, m=100, seed=0, z=3.0, psi_tol=1e-10):
    """Matched auxiliary on an OU model: exact acceptance and agreement with the Gaussian smoother."""
    model, sched = ou_problem()
    aux = LinearAuxiliary.from_model(model)
    cfg = SmootherConfig(N=N, m=m, burnin=0, aux_method="A", lambda_fixed=0.0, seed=seed)
    t0 = time.perf_counter()
    res = run_smoother(model, sched, aux, cfg)
    dt = time.perf_counter() - t0
    grid = res.filter.grid
    idx = grid.obs_index
    obs = {int(k): (o.L, o.Sigma, o.v) for k, o in zip(idx, sched)}
    mo, co = information_smoother(OU_B, OU_BETA, OU_SIGMA, grid.t, obs, sched.epsilon)
    osd = np.sqrt(np.diagonal(co, axis1=1, axis2=2))
    mean, sd, se_m, se_s = _posterior_stats(res, idx)
    zm = float(np.abs((mean - mo[idx]) / se_m).max())
    zs = float(np.abs((sd - osd[idx]) / se_s).max())
    dpsi = float(np.abs(np.diff(res.log_psi)).max()) if N else 0.0
    det = f"(N={N}, {dt:.1f}s)"
    return [
        Check("matched-linear acceptance", "== 1", res.acceptance_rate,
              res.acceptance_rate == 1.0, det),
        Check("matched-linear |dlogPsi|", f"<= {psi_tol:g}", dpsi, dpsi <= psi_tol),
        Check("matched-linear mean vs smoother", f"<= {z} SE", zm, zm <= z),
        Check("matched-linear sd vs smoother", f"<= {z} SE", zs, zs <= z),
    ]


def check_mode_equivalence(N=20_000, m=100, Sigma=1e-3, seed=0, z=3.0):
    """Plain and time-changed grids give the same posterior means at observation knots."""
    model, sched = ou_problem(Sigma=Sigma)
    aux = LinearAuxiliary.from_model(model)
    stats = []
    t0 = time.perf_counter()
    for tc in (False, True):
        cfg = SmootherConfig(N=N, m=m, burnin=0, aux_method="A", lambda_fixed=0.0,
                             time_change=tc, seed=seed, stream=int(tc))
        res = run_smoother(model, sched, aux, cfg)
        stats.append(_posterior_stats(res, res.filter.grid.obs_index))
    dt = time.perf_counter() - t0
    (m0, _, s0, _), (m1, _, s1, _) = stats
    zz = float(np.abs((m0 - m1) / np.sqrt(s0**2 + s1**2)).max())
    return [Check("time-change mode equivalence", f"<= {z} combined SE", zz, zz <= z,
                  f"(N={N} per mode, {dt:.1f}s)")]


def check_pcn(nprop=100_000, lams=(0.25, 0.5, 0.9), corr_tol=0.02, cov_tol=0.05, seed=0):
    """Joint-Gaussian structure of the start-point Crank-Nicolson move."""
    model, sched = ou_problem()
    aux = LinearAuxiliary.from_model(model)
    grid = TimeGrid.uniform(sched, 5)
    bf, _ = run_backward(sched, aux, grid)
    sim = GuidedSimulator(bf, model, aux)
    rng = RngStream(seed, 7)
    oracle = np.random.default_rng(seed + 1)
    nu0, C = bf.nu[0], bf.Hdagger[0]
    path = sim.run(nu0, sim.draw_noise(rng))
    state = ChainState(path=path, log_psi=path.log_psi, rng=rng)
    worst_corr = worst_cov = 0.0
    for lam in lams:
        x = oracle.multivariate_normal(nu0, C, size=nprop)
        y = np.empty_like(x)
        for i in range(nprop):
            state.path = replace(path, x0=x[i])
            y[i], _ = pcn_propose(state, lam, bf, sim)
        corr = np.array([np.corrcoef(x[:, j], y[:, j])[0, 1] for j in range(x.shape[1])])
        worst_corr = max(worst_corr, float(np.abs(corr - math.sqrt(lam)).max()))
        Cy = np.cov(y, rowvar=False)
        scale = np.sqrt(np.outer(np.diag(C), np.diag(C)))
        worst_cov = max(worst_cov, float(np.abs((Cy - C) / scale).max()))
    return [
        Check("pCN corr(x0, x0') = sqrt(lambda)", f"<= {corr_tol}", worst_corr,
              worst_corr <= corr_tol, f"(lambda in {tuple(lams)}, {nprop} proposals)"),
        Check("pCN proposal covariance", f"<= {cov_tol} (relative)", worst_cov,
              worst_cov <= cov_tol),
    ]


def _true_at(t_fine, X, times):
    idx = np.searchsorted(t_fine, times - 1e-9)
    return X[np.clip(idx, 0, len(t_fine) - 1)]


def check_lorenz(N=100_000, m=50, data_seed=0, seed=1, methods=("A", "B", "C"),
                 c_range=(0.74, 1.0), ab_range=(0.10, 0.45), rmse_tol=1.0):
    """Scaled-down Lorenz experiment: acceptance rates and posterior-mean accuracy."""
    from .simulate import lorenz_experiment

    model, t, X, sched = lorenz_experiment(seed=data_seed)
    checks = []
    for meth in methods:
        cfg = SmootherConfig(N=N, m=m, burnin=min(10_000, N // 2), aux_method=meth, seed=seed)
        t0 = time.perf_counter()
        res = run_smoother(model, sched, None, cfg)
        dt = time.perf_counter() - t0
        lo, hi = c_range if meth == "C" else ab_range
        rate = res.acceptance_rate
        checks.append(Check(f"Lorenz method {meth} acceptance", f"in [{lo}, {hi}]", rate,
                            lo <= rate <= hi, f"(N={N}, {dt:.0f}s)"))
        if meth == "C":
            rmse = float(np.sqrt(np.mean((res.mean - _true_at(t, X, res.times)) ** 2)))
            checks.append(Check("Lorenz method C posterior-mean RMSE", f"< {rmse_tol}", rmse,
                                rmse < rmse_tol))
    return checks


def check_pendulum(N=100_000, m=50, data_seed=0, seed=1, min_rate=0.85, min_cover=0.85):
    """Pendulum with noisy angle observations, method C from a hypo-elliptic start."""
    from .simulate import pendulum_experiment

    model, t, X, sched = pendulum_experiment(seed=data_seed)
    aux0 = LinearAuxiliary.constant([0.0, 0.0], [[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]])
    cfg = SmootherConfig(N=N, m=m, burnin=min(10_000, N // 2), aux_method="C", alpha=0.5,
                         seed=seed)
    t0 = time.perf_counter()
    res = run_smoother(model, sched, aux0, cfg)
    dt = time.perf_counter() - t0
    lo, hi = res.bands()
    truth = _true_at(t, X, res.times)[:, 0]
    cover = float(np.mean((truth >= lo[:, 0]) & (truth <= hi[:, 0])))
    return [
        Check("pendulum acceptance", f">= {min_rate}", res.acceptance_rate,
              res.acceptance_rate >= min_rate, f"(N={N}, {dt:.0f}s)"),
        Check("pendulum band coverage (angle)", f">= {min_cover}", cover, cover >= min_cover),
    ]


# -- suites ------------------------------------------------------------------------


def _fast():
    return (check_cross_filter(nproblems=5, m=100) + check_ode_order() + check_zero_noise()
            + check_G_reimplementation() + check_pcn(nprop=5_000, corr_tol=0.05, cov_tol=0.1))


def _full():
    return (check_cross_filter() + check_ode_order() + check_zero_noise()
            + check_G_reimplementation() + check_pcn() + check_matched_linear()
            + check_mode_equivalence())


def _experiments():
    return check_lorenz() + check_pendulum()


LEVELS = {"fast": _fast, "full": _full, "paper": _experiments}


def run_level(level: str):
    if level not in LEVELS:
        raise ValueError(f"unknown verification level {level!r}")
    return LEVELS[level]()

import copy
import math
from dataclasses import replace

import numpy as np
import pytest

import guidedsmooth.mcmc as mcmc
from guidedsmooth.backward import run_backward
from guidedsmooth.errors import ConfigError, NumericalError
from guidedsmooth.guided import GuidedSimulator
from guidedsmooth.mcmc import (
    ChainState,
    SmootherConfig,
    aux_method_A,
    aux_method_B,
    aux_method_C_refresh,
    mh_step,
    pcn_propose,
    run_smoother,
)
from guidedsmooth.model import TimeGrid, lorenz_model
from guidedsmooth.numerics import RngStream
from guidedsmooth.oracles import backward_flow
from guidedsmooth.simulate import lorenz_experiment
from guidedsmooth.verify import ou_problem


@pytest.fixture(scope="module")
def ou():
    model, sched = ou_problem()
    return model, sched


@pytest.fixture
def chain(ou):
    model, sched = ou
    aux = aux_method_A(model)
    bf, _ = run_backward(sched, aux, TimeGrid.uniform(sched, 20))
    sim = GuidedSimulator(bf, model, aux)
    rng = RngStream(0, 0)
    path = sim.run(bf.nu[0], sim.draw_noise(rng))
    return sim, ChainState(path=path, log_psi=path.log_psi, rng=rng)


def test_config_validation_and_defaults():
    assert SmootherConfig(aux_method="A").alpha_value == 5.0
    assert SmootherConfig(aux_method="C").alpha_value == 0.5
    assert SmootherConfig(aux_method="C").adapt_value == 1000
    assert SmootherConfig(aux_method="B").adapt_value == 0
    for bad in ({"N": -1}, {"aux_method": "D"}, {"alpha": 0.0}, {"thin": 0},
                {"lambda_fixed": 1.0}, {"lambda_law": "uniform"}, {"scheme": "scaled"},
                {"tableau": "rk45"}):
        with pytest.raises(ConfigError):
            SmootherConfig(**bad)


@pytest.mark.parametrize("law,mean", [("beta(alpha,1)", 5 / 6), ("beta(1,alpha)", 1 / 6)])
def test_lambda_laws(law, mean):
    cfg = SmootherConfig(aux_method="A", lambda_law=law)
    rng = RngStream(0, 0)
    lam = np.array([cfg.draw_lambda(rng) for _ in range(20_000)])
    assert np.all((lam >= 0) & (lam < 1))
    assert abs(lam.mean() - mean) < 0.01
    assert SmootherConfig(lambda_fixed=0.3).draw_lambda(rng) == 0.3


def test_pcn_with_lambda_zero_is_independent_of_current_state(chain):
    sim, state = chain
    xi, W = np.ones(2), np.zeros(sim.noise_shape)
    x0, noise = pcn_propose(state, 0.0, sim.filter, sim, fresh=(xi, W))
    assert np.allclose(x0, sim.filter.nu[0] + xi) and not noise.any()
    with pytest.raises(ConfigError):
        pcn_propose(state, 1.0, sim.filter, sim)


def test_stored_log_psi_matches_recomputation(chain):
    sim, state = chain
    cfg = SmootherConfig(aux_method="A")
    for _ in range(200):
        state, lam, acc = mh_step(state, sim, cfg)
        assert abs(state.log_psi - sim.run(state.x0, state.noise).log_psi) <= 1e-10
        assert state.accepted <= state.iteration
    assert 0 < state.accepted < 200


def test_acceptance_ratio_does_not_depend_on_lambda(chain, monkeypatch):
    sim, state = chain
    target = (sim.filter.nu[0] + 0.1, 0.5 * state.noise)
    monkeypatch.setattr(mcmc, "pcn_propose", lambda *a, **k: target)
    decisions = []
    for lam in (0.05, 0.5, 0.95):
        s = copy.deepcopy(state)
        s, _, acc = mh_step(s, sim, SmootherConfig(aux_method="A"), lam=lam)
        decisions.append((acc, s.log_psi))
    assert decisions[0] == decisions[1] == decisions[2]


def test_failed_proposal_is_rejected(chain, monkeypatch):
    sim, state = chain
    monkeypatch.setattr(mcmc, "pcn_propose",
                        lambda *a, **k: (np.array([1e300, 1e300]), state.noise * 1e300))
    before = state.path
    state.force_accept = True
    with np.errstate(all="ignore"):
        state, _, acc = mh_step(state, sim, SmootherConfig(aux_method="A"), lam=0.5)
    assert not acc and state.path is before and state.iteration == 1
    assert state.force_accept  # still pending for the next valid proposal


def test_force_accept_takes_a_worse_proposal(chain, monkeypatch):
    sim, state = chain
    rng = RngStream(9, 0)
    draws = [sim.run(sim.filter.nu[0] + 10 * rng.normal(2), sim.draw_noise(rng))
             for _ in range(50)]
    worse = min(draws, key=lambda p: p.log_psi)
    assert worse.log_psi < state.log_psi - 30
    monkeypatch.setattr(mcmc, "pcn_propose", lambda *a, **k: (worse.x0, worse.noise))
    state.force_accept = True
    state, _, acc = mh_step(state, sim, SmootherConfig(aux_method="A"), lam=0.5)
    assert acc and not state.force_accept and state.log_psi == worse.log_psi


def test_run_with_zero_iterations(ou):
    model, sched = ou
    res = run_smoother(model, sched, None, SmootherConfig(N=0, aux_method="A",
                                                          trace_times=(0.5,), save_every=5))
    assert res.nsamples == 1 and res.log_psi.shape == (1,) and res.accepted.size == 0
    assert math.isnan(res.acceptance_rate)
    assert res.trace.shape == (1, 1, 2) and res.paths.shape[0] == 1
    assert np.array_equal(res.sd, np.zeros_like(res.sd))


def test_reproducible_and_stream_dependent(ou):
    model, sched = ou
    cfg = SmootherConfig(N=300, m=10, burnin=50, aux_method="C", adapt_every=100, seed=4)
    a = run_smoother(model, sched, None, cfg)
    b = run_smoother(model, sched, None, cfg)
    c = run_smoother(model, sched, None, replace(cfg, stream=1))
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.log_psi, b.log_psi)
    assert not np.array_equal(a.log_psi, c.log_psi)


def test_outputs_shapes_and_saving(ou):
    model, sched = ou
    cfg = SmootherConfig(N=100, m=10, burnin=20, thin=4, aux_method="A", save_every=25,
                         trace_times=(0.0, 0.523, 1.0))
    res = run_smoother(model, sched, None, cfg)
    assert res.nsamples == 20
    assert list(res.saved_iterations) == [0, 25, 50, 75, 100]
    assert res.trace.shape == (101, 3, 2)
    assert np.allclose(res.trace_times, [0.0, 0.52, 1.0])
    assert np.array_equal(res.trace[-1], res.paths[-1][[0, 52, 100]])
    lo, hi = res.bands()
    assert np.all(lo <= res.mean) and np.all(res.mean <= hi)


def test_linear_model_adaptation_is_exact_and_stops_changing(ou):
    model, sched = ou
    cfg = SmootherConfig(N=1000, m=10, burnin=0, aux_method="C", adapt_every=200)
    res = run_smoother(model, sched, None, cfg)
    ch = [h["change"] for h in res.adaptation]
    assert len(ch) == 4 and all(h["status"] == "ok" for h in res.adaptation)
    assert ch[0] > 0.1 and max(ch[1:]) <= 1e-12
    tb = res.aux.tables(res.filter.grid)
    assert np.allclose(tb["B"], model.kernel[1][:4].reshape(2, 2), atol=1e-12)
    # matched auxiliary after the first refresh: every later proposal is accepted
    assert res.accepted[400:].all()


def test_adaptation_failure_rolls_back(ou, monkeypatch):
    model, sched = ou

    def boom(*a, **k):
        raise NumericalError("non-finite drift linearisation")

    monkeypatch.setattr(mcmc, "aux_method_C_refresh", boom)
    res = run_smoother(model, sched, None,
                       SmootherConfig(N=300, m=10, burnin=0, aux_method="C", adapt_every=100))
    assert [h["status"] for h in res.adaptation] == ["rollback", "rollback"]


def test_method_C_refresh_properties():
    model, sched = ou_problem()
    grid = TimeGrid.uniform(sched, 5)
    cur = aux_method_A(model)
    xbar = np.random.default_rng(0).normal(size=(grid.nsteps + 1, 2))
    aux = aux_method_C_refresh(xbar, model, grid, cur)
    tb = aux.tables(grid)
    B = model.kernel[1][:4].reshape(2, 2)
    assert np.allclose(tb["B"], B) and np.allclose(tb["beta"], model.kernel[1][4:])
    assert np.array_equal(tb["sigma"], cur.tables(grid)["sigma"])

    lor = lorenz_model()
    x = np.array([1.0, 1.0, 1.0])
    th = (10.0, 28.0, 8.0 / 3.0)
    exact = np.array([[-th[0], th[0], 0.0], [th[1] - x[2], -1.0, -x[0]], [x[1], x[0], -th[2]]])
    lsched = lorenz_experiment(seed=0, mesh=1e-3)[3]
    lgrid = TimeGrid.uniform(lsched, 2)
    const = np.tile(x, (lgrid.nsteps + 1, 1))
    laux = aux_method_C_refresh(const, lor, lgrid, aux_method_A(lor))
    ltb = laux.tables(lgrid)
    assert np.allclose(ltb["B"], exact, atol=1e-6)
    # the linearisation is exact at the expansion point
    assert np.allclose(ltb["beta"][0, 0] + ltb["B"][0, 0] @ x, lor.drift(0.0, x))
    with pytest.raises(ConfigError):
        aux_method_C_refresh(const[:-1], lor, lgrid, aux_method_A(lor))


def test_method_B_follows_backward_flow():
    model, t, X, sched = lorenz_experiment(seed=0, mesh=1e-3)
    grid = TimeGrid.uniform(sched, 200)
    aux = aux_method_B(model, sched, grid)
    tb = aux.tables(grid)
    flow = aux.flow
    assert np.all(np.isfinite(flow))
    k = np.arange(grid.nsteps)
    bs = np.array([model.drift(grid.t[i], flow[i]) for i in k])
    assert np.allclose(tb["beta"][:, 0], bs)
    assert np.array_equal(tb["B"], np.zeros_like(tb["B"]))
    # independent re-integration of the last segment
    k0, k1 = grid.nsteps - grid.m, grid.nsteps
    ref = backward_flow(model.drift, flow[k1], grid.t[k1], grid.t[k0:k1 + 1])
    scale = np.abs(ref).max()
    assert np.max(np.abs(flow[k0:k1 + 1] - ref)) <= 1e-6 * scale


def test_method_B_for_linear_and_driftless_models():
    model, sched = ou_problem()
    grid = TimeGrid.uniform(sched, 10)
    aux = aux_method_B(model, sched, grid)
    B = model.kernel[1][:4].reshape(2, 2)
    tb = aux.tables(grid)
    expected = aux.flow[:-1] @ B.T + model.kernel[1][4:]
    assert np.allclose(tb["beta"][:, 0], expected)
    from guidedsmooth.model import ou_model

    flat = ou_model(np.zeros((2, 2)), np.zeros(2), np.eye(2))
    aux0 = aux_method_B(flat, sched, grid)
    assert not aux0.tables(grid)["beta"].any()

import numpy as np
import pytest

from guidedsmooth.backward import run_backward
from guidedsmooth.errors import ConfigError, ProposalError
from guidedsmooth.guided import GuidedSimulator, guided_forward, log_G_increment
from guidedsmooth.kernels import HAVE_COMPILED
from guidedsmooth.mcmc import aux_method_B
from guidedsmooth.model import LinearAuxiliary, ObservationSchedule, TimeGrid
from guidedsmooth.numerics import RngStream
from guidedsmooth.oracles import G_reference
from guidedsmooth.simulate import lorenz_experiment, pendulum_experiment
from guidedsmooth.verify import ou_problem

compiled_only = pytest.mark.skipif(not HAVE_COMPILED, reason="compiled kernels not built")


@pytest.fixture(scope="module")
def lorenz():
    model, t, X, sched = lorenz_experiment(seed=0, mesh=1e-3)
    out = {}
    for tc in (False, True):
        grid = (TimeGrid.timechanged if tc else TimeGrid.uniform)(sched, 10)
        aux = aux_method_B(model, sched, grid)
        bf, _ = run_backward(sched, aux, grid)
        out[tc] = (model, aux, bf, X[0])
    return out


@pytest.fixture(scope="module")
def pendulum():
    model, t, X, sched = pendulum_experiment(seed=0, mesh=1e-3)
    grid = TimeGrid.uniform(sched, 10)
    aux = LinearAuxiliary.constant([0.0, 0.0], [[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]])
    bf, _ = run_backward(sched, aux, grid)
    return model, aux, bf, X[0]


@compiled_only
@pytest.mark.parametrize("tc,scheme", [(False, "euler"), (True, "euler"), (True, "scaled")])
def test_backends_agree_lorenz(lorenz, tc, scheme):
    model, aux, bf, x0 = lorenz[tc]
    fast = GuidedSimulator(bf, model, aux, scheme=scheme)
    slow = GuidedSimulator(bf, model, aux, scheme=scheme, force_python=True)
    assert fast.backend == "compiled" and slow.backend == "python"
    noise = fast.draw_noise(RngStream(3, 0))
    a, b = fast.run(x0, noise), slow.run(x0, noise)
    assert np.allclose(a.states, b.states, rtol=1e-11, atol=1e-11)
    assert abs(a.log_psi - b.log_psi) <= 1e-9 * max(1.0, abs(b.log_psi))


@compiled_only
def test_backends_agree_pendulum(pendulum):
    model, aux, bf, x0 = pendulum
    fast = GuidedSimulator(bf, model, aux)
    slow = GuidedSimulator(bf, model, aux, force_python=True)
    noise = fast.draw_noise(RngStream(4, 0))
    a, b = fast.run(x0, noise), slow.run(x0, noise)
    assert np.allclose(a.states, b.states, rtol=1e-11, atol=1e-11)
    assert abs(a.log_psi - b.log_psi) <= 1e-9 * max(1.0, abs(b.log_psi))


@pytest.mark.parametrize("tc,scheme", [(False, "euler"), (True, "euler"), (True, "scaled")])
def test_log_psi_is_left_riemann_sum_of_G(lorenz, tc, scheme):
    model, aux, bf, x0 = lorenz[tc]
    sim = GuidedSimulator(bf, model, aux, scheme=scheme)
    path = sim.run(x0, sim.draw_noise(RngStream(5, 0)))
    assert abs(path.log_psi - sim.log_psi_quadrature(path.states)) <= 1e-10 * max(
        1.0, abs(path.log_psi))


def test_G_matches_reference_formula(lorenz):
    model, aux, bf, x0 = lorenz[False]
    sim = GuidedSimulator(bf, model, aux)
    tb = aux.tables(bf.grid)
    rng = np.random.default_rng(0)
    for k in (0, 5, 10, 11, 500, bf.grid.nsteps - 1):
        x = x0 + rng.normal(size=3)
        t = bf.grid.t[k]
        ref = G_reference(model.drift(t, x), tb["beta"][k, 0] + tb["B"][k, 0] @ x,
                          model.diffusion_matrix(t, x), tb["a"][k, 0], bf.H_step[k],
                          bf.nu_step[k], x)
        assert np.isclose(sim.G(k, x), ref, rtol=1e-12, atol=1e-12)
        assert np.isclose(log_G_increment(t, x, bf, model, aux), ref, rtol=1e-12, atol=1e-12)
    with pytest.raises(ConfigError):
        log_G_increment(bf.grid.t[0] + 1e-4, x0, bf, model, aux)


def test_matched_linear_proposal_has_unit_weight():
    model, sched = ou_problem()
    aux = LinearAuxiliary.from_model(model)
    bf, _ = run_backward(sched, aux, TimeGrid.uniform(sched, 20))
    sim = GuidedSimulator(bf, model, aux)
    rng = RngStream(0, 0)
    for _ in range(5):
        path = sim.run(rng.normal(2), sim.draw_noise(rng))
        assert abs(path.log_psi) <= 1e-12


def test_guided_path_hits_near_exact_observations(pendulum):
    model, sched = ou_problem(Sigma=1e-6)
    aux = LinearAuxiliary.from_model(model)
    bf, _ = run_backward(sched, aux, TimeGrid.uniform(sched, 200))
    sim = GuidedSimulator(bf, model, aux)
    path = sim.run(bf.nu[0], sim.draw_noise(RngStream(2, 0)))
    v = np.array([o.v[0] for o in sched])
    # the last step into each observation still carries noise of sd ~ 0.016
    assert np.max(np.abs(path.states[bf.grid.obs_index, 0] - v)) < 0.1
    pm, paux, pbf, x0 = pendulum
    zero = np.zeros((pbf.grid.nsteps, 1))
    assert np.array_equal(guided_forward(x0, zero, pbf, pm, paux).states,
                          GuidedSimulator(pbf, pm, paux).run(x0, zero).states)


def _full_exact_ou():
    model, sched = ou_problem()
    exact = ObservationSchedule.constant(sched.times, np.array([[o.v[0], -o.v[0]] for o in sched]),
                                         np.eye(2), 1e-10 * np.eye(2), t_start=0.0)
    return model, exact


def test_scaled_scheme_matches_euler_for_exact_full_observations():
    model, sched = _full_exact_ou()
    aux = LinearAuxiliary.from_model(model)
    gaps = []
    for m in (10, 40):
        bf, _ = run_backward(sched, aux, TimeGrid.timechanged(sched, m))
        zero = np.zeros((bf.grid.nsteps, 2))
        x0 = np.array([0.5, -0.5])
        a = GuidedSimulator(bf, model, aux, scheme="euler").run(x0, zero)
        b = GuidedSimulator(bf, model, aux, scheme="scaled").run(x0, zero)
        gaps.append(np.max(np.abs(a.states - b.states)))
    assert gaps[1] < gaps[0] / 2


def test_scaled_scheme_is_biased_in_unobserved_directions():
    # documented limitation: the gap does not shrink under refinement
    model, sched = ou_problem()
    aux = LinearAuxiliary.from_model(model)
    gaps = []
    for m in (20, 80):
        bf, _ = run_backward(sched, aux, TimeGrid.timechanged(sched, m))
        zero = np.zeros((bf.grid.nsteps, 2))
        x0 = np.array([0.5, -0.5])
        a = GuidedSimulator(bf, model, aux, scheme="euler").run(x0, zero)
        b = GuidedSimulator(bf, model, aux, scheme="scaled").run(x0, zero)
        idx = bf.grid.obs_index
        gaps.append(np.max(np.abs(a.states[idx, 1] - b.states[idx, 1])))
    assert gaps[1] > 0.5 * gaps[0] > 0.1


def test_simulator_validation(lorenz):
    model, aux, bf, x0 = lorenz[False]
    with pytest.raises(ConfigError):
        GuidedSimulator(bf, model, aux, scheme="scaled")
    with pytest.raises(ConfigError):
        GuidedSimulator(bf, model, aux, scheme="midpoint")
    sim = GuidedSimulator(bf, model, aux)
    with pytest.raises(ConfigError):
        sim.run(x0, np.zeros((3, 3)))


@pytest.mark.filterwarnings("ignore:overflow")
@pytest.mark.parametrize("force_python", [False, True])
def test_divergent_proposal_raises(lorenz, force_python):
    model, aux, bf, x0 = lorenz[False]
    sim = GuidedSimulator(bf, model, aux, force_python=force_python)
    with pytest.raises(ProposalError) as info:
        sim.run(np.array([1e150, -1e150, 1e150]), np.zeros(sim.noise_shape))
    assert info.value.step is not None and info.value.time is not None

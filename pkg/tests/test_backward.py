import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guidedsmooth.backward import observation_jump, run_backward, terminal_values
from guidedsmooth.errors import ConfigError
from guidedsmooth.model import LinearAuxiliary, Observation, ObservationSchedule, TimeGrid
from guidedsmooth.numerics import RALSTON2, RALSTON4
from guidedsmooth.oracles import gaussian_conditioning, scalar_lyapunov
from guidedsmooth.reference import assemble_H_r, run_reference
from guidedsmooth.verify import random_linear_problem


def _scalar_problem(B=-0.7, beta=0.4, a=0.5, Sigma=0.3, v=1.2, T=1.0):
    sched = ObservationSchedule([Observation(T, [[1.0]], [[Sigma]], [v])], t_start=0.0)
    aux = LinearAuxiliary.constant([beta], [[B]], [[np.sqrt(a)]])
    return sched, aux


def test_scalar_filter_matches_closed_form():
    B, beta, a, Sigma, v, T = -0.7, 0.4, 0.5, 0.3, 1.2, 1.0
    sched, aux = _scalar_problem(B, beta, a, Sigma, v, T)
    grid = TimeGrid.uniform(sched, 400)
    bf, _ = run_backward(sched, aux, grid, RALSTON4)
    Hd = scalar_lyapunov(B, a, Sigma, T, grid.t)
    nu = np.exp(B * (grid.t - T)) * (v + beta / B) - beta / B
    assert np.allclose(bf.Hdagger[:, 0, 0], Hd, atol=1e-10)
    assert np.allclose(bf.nu[:, 0], nu, atol=1e-10)
    assert np.allclose(bf.H[:, 0, 0] * Hd, 1.0, atol=1e-9)


def test_second_order_tableau_converges_at_rate_two():
    sched, aux = _scalar_problem()
    errs = []
    for m in (25, 50, 100):
        grid = TimeGrid.uniform(sched, m)
        bf, _ = run_backward(sched, aux, grid, RALSTON2)
        errs.append(abs(bf.Hdagger[0, 0, 0] - scalar_lyapunov(-0.7, 0.5, 0.3, 1.0, 0.0)))
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(slopes > 1.9)


def test_terminal_values_and_singular_terminal():
    Hd, nu = terminal_values(np.eye(2), 0.5 * np.eye(2), [1.0, -1.0], epsilon=0.0)
    assert np.allclose(Hd, 0.5 * np.eye(2)) and np.allclose(nu, [1.0, -1.0])
    Hd, nu = terminal_values([[1.0, 0.0]], [[1.0]], [2.0], epsilon=0.5)
    assert np.allclose(Hd, np.diag([1 / 1.5, 2.0])) and np.allclose(nu, [2 / 1.5, 0.0])
    with pytest.raises(ConfigError):
        terminal_values([[1.0, 0.0]], [[1.0]], [2.0], epsilon=0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_jump_is_gaussian_conditioning(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 5))
    m = int(rng.integers(1, d + 1))
    A = rng.normal(size=(d, d))
    P = A @ A.T + 0.2 * np.eye(d)
    mu, L, v = rng.normal(size=d), rng.normal(size=(m, d)), rng.normal(size=m)
    C = rng.normal(size=(m, m))
    S = C @ C.T + 0.2 * np.eye(m)
    Hd, nu = observation_jump(P, mu, L, S, v)
    mean, cov = gaussian_conditioning(mu, P, L, S, v)
    assert np.allclose(Hd, cov, rtol=1e-8, atol=1e-10)
    assert np.allclose(nu, mean, rtol=1e-8, atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 100_000))
def test_filter_matches_stacked_reference(seed):
    rng = np.random.default_rng(seed)
    sched, aux = random_linear_problem(rng)
    grid = TimeGrid.uniform(sched, 60)
    bf, audit = run_backward(sched, aux, grid, RALSTON4)
    ref = run_reference(sched, aux, grid, RALSTON4)
    for k in range(0, grid.nsteps + 1, 7):
        x = rng.normal(size=sched.d)
        H, r = assemble_H_r(ref, k, x)
        assert np.allclose(H, bf.H[k], rtol=1e-7, atol=1e-8)
        assert np.allclose(r, bf.residual(k, x), rtol=1e-7, atol=1e-8)
    # Hd stays symmetric positive definite and one record exists per observation.
    assert np.array_equal(bf.Hdagger, np.swapaxes(bf.Hdagger, 1, 2))
    assert np.all(np.linalg.eigvalsh(bf.Hdagger) > 0)
    assert sorted(r.index for r in audit.records) == list(range(len(sched)))


def test_step_values_use_pre_jump_filter():
    sched = ObservationSchedule.constant([0.5, 1.0], [[1.0], [2.0]], [[1.0]], [[0.2]],
                                         t_start=0.0)
    aux = LinearAuxiliary.constant([0.0], [[-0.3]], [[1.0]])
    grid = TimeGrid.uniform(sched, 10)
    bf, audit = run_backward(sched, aux, grid)
    k = int(grid.obs_index[0])
    rec = next(r for r in audit.records if r.index == 0)
    assert np.allclose(bf.nu_step[k], rec.nu_plus)
    assert np.allclose(bf.Hdagger[k], rec.Hd)
    assert np.allclose(bf.H_step[k] @ rec.Hd_plus, np.eye(1))
    others = np.setdiff1d(np.arange(grid.nsteps), [k])
    assert np.array_equal(bf.H_step[others], bf.H[others])


def test_grid_mismatch_is_rejected(tmp_path):
    sched, aux = _scalar_problem()
    other = ObservationSchedule([Observation(2.0, [[1.0]], [[1.0]], [0.0])], t_start=0.0)
    with pytest.raises(ConfigError):
        run_backward(sched, aux, TimeGrid.uniform(other, 10))
    bf, _ = run_backward(sched, aux, TimeGrid.uniform(sched, 10))
    bf.to_csv(tmp_path / "f.csv")
    rows = (tmp_path / "f.csv").read_text().splitlines()
    assert rows[0] == "t,nu1,Hd11" and len(rows) == 12

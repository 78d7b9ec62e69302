import numpy as np
import pytest

from guidedsmooth.errors import ConfigError
from guidedsmooth.model import (
    LinearAuxiliary,
    Observation,
    ObservationSchedule,
    TimeGrid,
    build_timechange,
    finite_difference_jacobian,
    lorenz_model,
    ou_model,
    pendulum_model,
)


def test_lorenz_jacobian_matches_finite_differences():
    model = lorenz_model()
    for x in ([1.0, 1.0, 1.0], [-3.0, 2.0, 20.0]):
        x = np.array(x)
        J = model.jacobian(0.0, x)
        assert np.allclose(J, finite_difference_jacobian(model.drift, 0.0, x), atol=1e-6)
    th = (10.0, 28.0, 8.0 / 3.0)
    x = np.array([1.0, 2.0, 3.0])
    expected = [th[0] * (x[1] - x[0]), x[0] * (th[1] - x[2]) - x[1], x[0] * x[1] - th[2] * x[2]]
    assert np.allclose(model.drift(0.0, x), expected)
    assert np.allclose(model.diffusion_matrix(0.0, x), 9.0 * np.eye(3))


def test_pendulum_is_hypoelliptic():
    model = pendulum_model(theta=2.0, gamma=0.5)
    x = np.array([0.3, -0.7])
    assert np.allclose(model.drift(0.0, x), [x[1], -4.0 * np.sin(x[0])])
    assert np.allclose(model.jacobian(0.0, x), finite_difference_jacobian(model.drift, 0.0, x),
                       atol=1e-7)
    a = model.diffusion_matrix(0.0, x)
    assert np.allclose(a, [[0.0, 0.0], [0.0, 0.25]])
    assert np.linalg.matrix_rank(a) == 1


def test_ou_round_trip_through_auxiliary():
    B = [[-1.0, 0.5], [-0.5, -0.8]]
    model = ou_model(B, [0.3, -0.2], [[0.7, 0.0], [0.2, 0.5]])
    aux = LinearAuxiliary.from_model(model)
    beta, Bt, a, sigma = aux.at(0.4)
    assert np.allclose(Bt, B) and np.allclose(beta, [0.3, -0.2])
    back = aux.to_model()
    x = np.array([0.1, 2.0])
    assert np.allclose(back.drift(0.0, x), model.drift(0.0, x))
    with pytest.raises(ConfigError):
        LinearAuxiliary.from_model(lorenz_model())


def test_schedule_validation():
    L, S = np.eye(2), np.eye(2)
    with pytest.raises(ConfigError, match="increasing"):
        ObservationSchedule([(1.0, L, S, [0, 0]), (0.5, L, S, [0, 0])])
    with pytest.raises(ConfigError, match="positive definite"):
        ObservationSchedule([(1.0, L, -S, [0, 0])])
    with pytest.raises(ConfigError, match="epsilon"):
        ObservationSchedule([(1.0, [[1.0, 0.0]], [[1.0]], [0.0])])
    with pytest.raises(ConfigError, match="t_start"):
        ObservationSchedule([(1.0, L, S, [0, 0])], t_start=2.0)
    with pytest.raises(ConfigError, match="dimensions"):
        ObservationSchedule([(1.0, L, S, [0, 0, 0])])
    sched = ObservationSchedule([Observation(1.0, L, S, np.zeros(2))], t_start=0.0)
    assert list(sched.segment_bounds) == [0.0, 1.0]


def _sched(times, t_start=None):
    return ObservationSchedule.constant(times, np.zeros((len(times), 1)), [[1.0]], [[1.0]],
                                        t_start=t_start)


def test_uniform_grid_pins_observation_times():
    sched = _sched([0.1, 0.25, 0.7], t_start=0.0)
    grid = TimeGrid.uniform(sched, 7)
    assert grid.nsteps == 21
    assert np.array_equal(grid.t[grid.obs_index], sched.times)
    assert np.all(np.diff(grid.t) > 0)
    with pytest.raises(ConfigError):
        TimeGrid.uniform(sched, 0)


def test_timechanged_grid_crowds_towards_observations():
    sched = _sched([0.0, 1.0, 3.0])
    grid = TimeGrid.timechanged(sched, 10)
    assert np.array_equal(grid.t[grid.obs_index], sched.times)
    h = grid.h[:10]
    assert np.all(np.diff(h) < 0)
    tc = build_timechange(sched)
    s = np.linspace(1.0, 3.0, 9)
    assert np.allclose(tc.inverse(tc.tau(s)), s)
    assert np.allclose(grid.time_at(3, 0.5), tc.tau(grid.s[3] + 0.5 * grid.ds[3]))
    with pytest.raises(ConfigError):
        TimeGrid.timechanged(sched, 1)


def test_tabulated_auxiliary_shapes_and_grid_check():
    sched = _sched([0.0, 1.0])
    g1, g2 = TimeGrid.uniform(sched, 4), TimeGrid.uniform(sched, 5)
    aux = LinearAuxiliary.constant([0.0], [[-1.0]], [[1.0]]).tabulated(g1)
    assert aux.is_tabulated and aux.tables(g1)["B"].shape == (4, 2, 1, 1)
    with pytest.raises(ConfigError):
        aux.tables(g2)
    with pytest.raises(ConfigError):
        LinearAuxiliary(1, 1, tables={"beta": np.zeros((3, 2, 1)), "B": np.zeros((4, 2, 1, 1)),
                                      "sigma": np.zeros((4, 2, 1, 1))}, grid=g1)

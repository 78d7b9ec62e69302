"""Compiled versus pure-Python guided-simulation kernels.

Times one guided path (the inner loop of every MCMC iteration) on the Lorenz
and pendulum data sets for both backends, and checks that both produce the
same path. Usage::

    python benchmarks/bench_kernels.py [--m 50] [--repeat 20]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from guidedsmooth import HAVE_COMPILED
from guidedsmooth.backward import run_backward
from guidedsmooth.guided import GuidedSimulator
from guidedsmooth.mcmc import aux_method_B
from guidedsmooth.model import LinearAuxiliary, TimeGrid
from guidedsmooth.numerics import RALSTON2, RngStream
from guidedsmooth.simulate import lorenz_experiment, pendulum_experiment


def _setup(name, m):
    if name == "lorenz":
        model, _, X, sched = lorenz_experiment(seed=0)
        grid = TimeGrid.uniform(sched, m)
        aux = aux_method_B(model, sched, grid, RALSTON2)
    else:
        model, _, X, sched = pendulum_experiment(seed=0)
        grid = TimeGrid.uniform(sched, m)
        aux = LinearAuxiliary.constant([0.0, 0.0], [[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]])
    filt, _ = run_backward(sched, aux, grid, RALSTON2)
    return model, aux, filt, X[0]


def _time(sim, x0, noise, repeat):
    sim.run(x0, noise)  # warm-up
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        path = sim.run(x0, noise)
        best = min(best, time.perf_counter() - t0)
    return best, path


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--m", type=int, default=50, help="grid steps per observation interval")
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)
    if not HAVE_COMPILED:
        print("compiled kernels are not built; only the Python backend is timed")
    print(f"{'problem':10s} {'steps':>6s} {'python [ms]':>12s} {'compiled [ms]':>14s} "
          f"{'speed-up':>9s} {'max |diff|':>11s}")
    for name in ("lorenz", "pendulum"):
        model, aux, filt, x0 = _setup(name, args.m)
        py = GuidedSimulator(filt, model, aux, force_python=True)
        noise = py.draw_noise(RngStream(1, 0))
        t_py, path_py = _time(py, x0, noise, max(1, args.repeat // 10))
        if HAVE_COMPILED:
            cc = GuidedSimulator(filt, model, aux)
            t_cc, path_cc = _time(cc, x0, noise, args.repeat)
            diff = float(np.max(np.abs(path_cc.states - path_py.states)))
            print(f"{name:10s} {filt.grid.nsteps:6d} {1e3 * t_py:12.2f} {1e3 * t_cc:14.3f} "
                  f"{t_py / t_cc:9.1f} {diff:11.2e}")
        else:
            print(f"{name:10s} {filt.grid.nsteps:6d} {1e3 * t_py:12.2f} {'-':>14s}")


if __name__ == "__main__":
    main()

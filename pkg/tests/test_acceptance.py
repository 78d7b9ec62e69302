"""Acceptance criteria 1-9 with pinned settings and tolerances.

Each test records one PASS/FAIL line; the lines are repeated in the
"acceptance criteria" section at the end of the pytest report.
"""

import time

import pytest

from guidedsmooth import verify


def _timed(fn, **kwargs):
    t0 = time.perf_counter()
    checks = fn(**kwargs)
    return checks, time.perf_counter() - t0


def _assert(checks, elapsed, limit=None):
    failed = [c.line() for c in checks if not c.passed]
    assert not failed, "\n".join(failed)
    if limit is not None:
        assert elapsed < limit, f"runtime {elapsed:.1f}s exceeds {limit}s"


@pytest.fixture(scope="module")
def cross_filter():
    return _timed(verify.check_cross_filter, nproblems=20, seed=0, m=200, tol=1e-8,
                  conj_tol=1e-10)


def test_criterion_1_linear_gaussian_oracle(report_criterion):
    checks, dt = _timed(verify.check_matched_linear, N=20_000, m=100, seed=0, z=3.0,
                        psi_tol=1e-10)
    report_criterion(1, "matched-linear exactness", checks, dt, limit=60)
    _assert(checks, dt, limit=60)


def test_criterion_2_filter_cross_equivalence(report_criterion, cross_filter):
    checks, dt = cross_filter
    checks = [c for c in checks if c.name.startswith("cross-filter")]
    report_criterion(2, "filter cross-equivalence", checks, dt, limit=30)
    _assert(checks, dt, limit=30)


def test_criterion_3_jump_conjugacy(report_criterion, cross_filter):
    checks, dt = cross_filter
    checks = [c for c in checks if c.name == "jump conjugacy"]
    report_criterion(3, "jump-update conjugacy", checks, dt)
    _assert(checks, dt)


def test_criterion_4_ode_order(report_criterion):
    checks, dt = _timed(verify.check_ode_order, steps=(1e-2, 5e-3, 2.5e-3), min_slope=1.9)
    report_criterion(4, "backward ODE order", checks, dt)
    _assert(checks, dt)


def test_criterion_5_zero_noise_limit(report_criterion):
    checks, dt = _timed(verify.check_zero_noise, powers=(2, 4, 6))
    report_criterion(5, "zero-noise limit", checks, dt)
    _assert(checks, dt)


def test_criterion_6_time_change_equivalence(report_criterion):
    checks, dt = _timed(verify.check_mode_equivalence, N=20_000, m=100, Sigma=1e-3, seed=0,
                        z=3.0)
    report_criterion(6, "time-change mode equivalence", checks, dt, limit=120)
    _assert(checks, dt, limit=120)


@pytest.mark.slow
def test_criterion_7_lorenz(report_criterion):
    checks, dt = _timed(verify.check_lorenz, N=100_000, m=50, data_seed=0, seed=1,
                        methods=("A", "B", "C"), c_range=(0.74, 1.0), ab_range=(0.10, 0.45),
                        rmse_tol=1.0)
    report_criterion(7, "Lorenz experiment (N=1e5)", checks, dt, limit=900)
    _assert(checks, dt, limit=900)


@pytest.mark.slow
def test_criterion_8_pendulum(report_criterion):
    checks, dt = _timed(verify.check_pendulum, N=100_000, m=50, data_seed=0, seed=1,
                        min_rate=0.85, min_cover=0.85)
    report_criterion(8, "pendulum experiment (N=1e5)", checks, dt, limit=600)
    _assert(checks, dt, limit=600)


def test_criterion_9_pcn_statistics(report_criterion):
    checks, dt = _timed(verify.check_pcn, nprop=100_000, lams=(0.25, 0.5, 0.9),
                        corr_tol=0.02, cov_tol=0.05, seed=0)
    report_criterion(9, "pCN proposal statistics", checks, dt)
    _assert(checks, dt)

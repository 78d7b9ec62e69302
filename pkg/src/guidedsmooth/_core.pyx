# cython: language_level=3
"""Compiled guided-proposal kernels for built-in drifts with constant dispersion.

Mirrors ``_core_py``; the drift is selected by an integer id (see
``model.KERNEL_*``) with a flat parameter vector.
"""

from libc.math cimport sin, sqrt, isfinite, NAN

cdef enum:
    MAXD = 16

cdef enum:
    LINEAR = 0
    LORENZ = 1
    PENDULUM = 2


cdef inline void _drift(int code, const double[::1] p, int d, double t,
                        const double* x, double* out) noexcept nogil:
    cdef int i, j
    cdef double acc, th2
    if code == LINEAR:
        for i in range(d):
            acc = p[d * d + i]
            for j in range(d):
                acc = acc + p[i * d + j] * x[j]
            out[i] = acc
    elif code == LORENZ:
        out[0] = p[0] * (x[1] - x[0])
        out[1] = p[1] * x[0] - x[1] - x[0] * x[2]
        out[2] = x[0] * x[1] - p[2] * x[2]
    else:
        th2 = p[0] * p[0]
        out[0] = x[1]
        out[1] = -th2 * sin(x[0])


cdef inline double _step_common(int code, const double[::1] p, int d, int dp, double t,
                                const double* x, const double* a,
                                const double[:, :, ::1] H, const double[:, ::1] F,
                                const double[:, ::1] beta, const double[:, :, ::1] Bt,
                                const double[:, :, ::1] at, Py_ssize_t k,
                                double* b, double* r, double* ar) noexcept nogil:
    """Drift, residual, pull ``a r`` and the integrand G at step ``k``; returns G."""
    cdef int i, j
    cdef double acc, g = 0.0, tr = 0.0, rdr = 0.0, dij
    cdef double bt
    _drift(code, p, d, t, x, b)
    for i in range(d):
        acc = F[k, i]
        for j in range(d):
            acc = acc - H[k, i, j] * x[j]
        r[i] = acc
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc = acc + a[i * d + j] * r[j]
        ar[i] = acc
        bt = beta[k, i]
        for j in range(d):
            bt = bt + Bt[k, i, j] * x[j]
        g = g + (b[i] - bt) * r[i]
        for j in range(d):
            dij = a[i * d + j] - at[k, i, j]
            tr = tr + dij * H[k, i, j]
            rdr = rdr + r[i] * dij * r[j]
    return g - 0.5 * (tr - rdr)


cdef void _diffusion(const double[:, ::1] sigma, int d, int dp, double* a) noexcept nogil:
    cdef int i, j, l
    cdef double acc
    for i in range(d):
        for j in range(d):
            acc = 0.0
            for l in range(dp):
                acc = acc + sigma[i, l] * sigma[j, l]
            a[i * d + j] = acc


def guided_euler(int code, const double[::1] params, const double[:, ::1] sigma,
                 const double[::1] t, const double[::1] dt,
                 const double[:, :, ::1] H, const double[:, ::1] F,
                 const double[:, ::1] beta, const double[:, :, ::1] Bt,
                 const double[:, :, ::1] at, const double[:, ::1] noise,
                 const double[::1] x0, double[:, ::1] out):
    """Euler scheme for the guided proposal; returns ``(log_psi, fail_step)``."""
    cdef int d = x0.shape[0]
    cdef int dp = sigma.shape[1]
    cdef Py_ssize_t K = dt.shape[0]
    cdef Py_ssize_t k
    cdef int i, l
    cdef double x[MAXD]
    cdef double b[MAXD]
    cdef double r[MAXD]
    cdef double ar[MAXD]
    cdef double a[MAXD * MAXD]
    cdef double log_psi = 0.0, h, acc
    cdef Py_ssize_t fail = -1
    if d > MAXD:
        raise ValueError("state dimension too large for the compiled kernel")
    with nogil:
        _diffusion(sigma, d, dp, a)
        for i in range(d):
            x[i] = x0[i]
            out[0, i] = x[i]
        for k in range(K):
            h = dt[k]
            log_psi = log_psi + h * _step_common(code, params, d, dp, t[k], x, a, H, F,
                                                 beta, Bt, at, k, b, r, ar)
            for i in range(d):
                acc = x[i] + (b[i] + ar[i]) * h
                for l in range(dp):
                    acc = acc + sigma[i, l] * noise[k, l]
                x[i] = acc
                out[k + 1, i] = acc
                if not isfinite(acc):
                    fail = k
            if not isfinite(log_psi):
                fail = k
            if fail >= 0:
                break
    if fail >= 0:
        return NAN, fail
    return log_psi, -1


def guided_euler_timechanged(int code, const double[::1] params, const double[:, ::1] sigma,
                             const double[::1] t, const double[::1] ds,
                             const double[::1] tdot0, const double[::1] tdot1,
                             const double[::1] tddot, const unsigned char[::1] seg_end,
                             const double[:, :, ::1] H, const double[:, ::1] F,
                             const double[:, ::1] nu, const double[:, ::1] nu_next,
                             const double[:, ::1] beta, const double[:, :, ::1] Bt,
                             const double[:, :, ::1] at, const double[:, ::1] noise,
                             const double[::1] x0, double[:, ::1] out):
    """Euler scheme on ``U = (nu - X) / tau'``; returns ``(log_psi, fail_step)``."""
    cdef int d = x0.shape[0]
    cdef int dp = sigma.shape[1]
    cdef Py_ssize_t K = ds.shape[0]
    cdef Py_ssize_t k
    cdef int i, j, l
    cdef double x[MAXD]
    cdef double b[MAXD]
    cdef double r[MAXD]
    cdef double ar[MAXD]
    cdef double U[MAXD]
    cdef double a[MAXD * MAXD]
    cdef double log_psi = 0.0, h, c, sc, acc, sn
    cdef Py_ssize_t fail = -1
    if d > MAXD:
        raise ValueError("state dimension too large for the compiled kernel")
    with nogil:
        _diffusion(sigma, d, dp, a)
        for i in range(d):
            x[i] = x0[i]
            out[0, i] = x[i]
        for k in range(K):
            h = ds[k]
            c = tdot0[k]
            sc = sqrt(c)
            log_psi = log_psi + c * h * _step_common(code, params, d, dp, t[k], x, a, H, F,
                                                     beta, Bt, at, k, b, r, ar)
            if seg_end[k]:
                for i in range(d):
                    acc = x[i] + (b[i] + ar[i]) * (c * h)
                    for l in range(dp):
                        acc = acc + sc * sigma[i, l] * noise[k, l]
                    x[i] = acc
            else:
                for i in range(d):
                    U[i] = (nu[k, i] - x[i]) / c
                for i in range(d):
                    acc = beta[k, i] - b[i] - ar[i] - (tddot[k] / c) * U[i]
                    for j in range(d):
                        acc = acc + Bt[k, i, j] * nu[k, j]
                    sn = 0.0
                    for l in range(dp):
                        sn = sn + sigma[i, l] * noise[k, l]
                    x[i] = nu_next[k, i] - tdot1[k] * (U[i] + acc * h - sn / sc)
            for i in range(d):
                out[k + 1, i] = x[i]
                if not isfinite(x[i]):
                    fail = k
            if not isfinite(log_psi):
                fail = k
            if fail >= 0:
                break
    if fail >= 0:
        return NAN, fail
    return log_psi, -1

"""Pure-Python guided-proposal kernels.

Same contract as the compiled ``_core`` extension, but the drift and
dispersion are arbitrary callables ``f(t, x)``. Used for user-defined models
and whenever the extension is unavailable.
"""

import math

import numpy as np

from .model import KERNEL_LINEAR, KERNEL_LORENZ, KERNEL_PENDULUM


def builtin_drift(code, params, d):
    """Python callable for a compiled drift id (fallback for built-in models)."""
    p = np.asarray(params, dtype=float)
    if code == KERNEL_LINEAR:
        B = p[: d * d].reshape(d, d)
        beta = p[d * d :]
        return lambda t, x: beta + B @ x
    if code == KERNEL_LORENZ:
        th1, th2, th3 = p
        return lambda t, x: np.array(
            [th1 * (x[1] - x[0]), th2 * x[0] - x[1] - x[0] * x[2], x[0] * x[1] - th3 * x[2]]
        )
    if code == KERNEL_PENDULUM:
        th2 = p[0] * p[0]
        return lambda t, x: np.array([x[1], -th2 * math.sin(x[0])])
    raise ValueError(f"unknown drift kernel {code}")


def _G(b, bt, a, at, H, r):
    D = a - at
    return float((b - bt) @ r - 0.5 * (np.sum(D * H) - r @ D @ r))


def guided_euler(drift, dispersion, t, dt, H, F, beta, Bt, at, noise, x0, out):
    """Euler scheme for the guided proposal; fills ``out`` and returns ``(log_psi, fail)``.

    ``fail`` is the index of the first step producing a non-finite state, or -1.
    """
    K = dt.shape[0]
    x = np.array(x0, dtype=float)
    out[0] = x
    log_psi = 0.0
    for k in range(K):
        tk = t[k]
        b = drift(tk, x)
        s = dispersion(tk, x)
        a = s @ s.T
        r = F[k] - H[k] @ x
        log_psi += _G(b, beta[k] + Bt[k] @ x, a, at[k], H[k], r) * dt[k]
        x = x + (b + a @ r) * dt[k] + s @ noise[k]
        if not np.all(np.isfinite(x)) or not math.isfinite(log_psi):
            return math.nan, k
        out[k + 1] = x
    return log_psi, -1


def guided_euler_timechanged(drift, dispersion, t, ds, tdot0, tdot1, tddot, seg_end,
                             H, F, nu, nu_next, beta, Bt, at, noise, x0, out):
    """Euler scheme on the scaled process ``U = (nu - X) / tau'`` in uniform time.

    The final step of every segment, where ``tau'`` vanishes at the end, is a
    plain Euler step for ``X``. Returns ``(log_psi, fail)``.
    """
    K = ds.shape[0]
    x = np.array(x0, dtype=float)
    out[0] = x
    log_psi = 0.0
    for k in range(K):
        tk = t[k]
        c = tdot0[k]
        h = ds[k]
        b = drift(tk, x)
        s = dispersion(tk, x)
        a = s @ s.T
        r = F[k] - H[k] @ x
        log_psi += _G(b, beta[k] + Bt[k] @ x, a, at[k], H[k], r) * c * h
        if seg_end[k]:
            x = x + (b + a @ r) * (c * h) + math.sqrt(c) * (s @ noise[k])
        else:
            U = (nu[k] - x) / c
            dU = (Bt[k] @ nu[k] + beta[k] - b - (tddot[k] / c) * U - a @ r) * h
            U = U + dU - (s @ noise[k]) / math.sqrt(c)
            x = nu_next[k] - tdot1[k] * U
        if not np.all(np.isfinite(x)) or not math.isfinite(log_psi):
            return math.nan, k
        out[k + 1] = x
    return log_psi, -1

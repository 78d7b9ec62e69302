"""Selects the compiled guided-proposal kernels or the pure-Python fallback.

The compiled extension is used for models with a built-in drift id and a
constant dispersion, unless ``GUIDEDSMOOTH_PURE_PYTHON=1`` is set when this
module is imported. Everything else runs through :mod:`._core_py`.
"""

import os

import numpy as np

from . import _core_py

try:
    from . import _core as _compiled
except ImportError:  # extension not built
    _compiled = None

if os.environ.get("GUIDEDSMOOTH_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None

HAVE_COMPILED = _compiled is not None

__all__ = ["HAVE_COMPILED", "backend_for", "guided_euler", "guided_euler_timechanged"]


def backend_for(model, force_python=False) -> str:
    if HAVE_COMPILED and model.compiled and model.d <= 16 and not force_python:
        return "compiled"
    return "python"


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def guided_euler(model, t, dt, H, F, beta, Bt, at, noise, x0, out, force_python=False):
    if backend_for(model, force_python) == "compiled":
        code, params = model.kernel
        return _compiled.guided_euler(
            int(code), _c(params), _c(model.constant_dispersion), t, dt, H, F, beta, Bt, at,
            _c(noise), _c(x0), out,
        )
    drift, disp = _python_coefficients(model)
    return _core_py.guided_euler(drift, disp, t, dt, H, F, beta, Bt, at, noise, x0, out)


def guided_euler_timechanged(model, t, ds, tdot0, tdot1, tddot, seg_end, H, F, nu, nu_next,
                             beta, Bt, at, noise, x0, out, force_python=False):
    if backend_for(model, force_python) == "compiled":
        code, params = model.kernel
        return _compiled.guided_euler_timechanged(
            int(code), _c(params), _c(model.constant_dispersion), t, ds, tdot0, tdot1, tddot,
            seg_end, H, F, nu, nu_next, beta, Bt, at, _c(noise), _c(x0), out,
        )
    drift, disp = _python_coefficients(model)
    return _core_py.guided_euler_timechanged(
        drift, disp, t, ds, tdot0, tdot1, tddot, seg_end, H, F, nu, nu_next, beta, Bt, at,
        noise, x0, out,
    )


def _python_coefficients(model):
    if model.constant_dispersion is not None:
        sigma = np.asarray(model.constant_dispersion, dtype=float)
        disp = lambda t, x: sigma  # noqa: E731
    else:
        disp = lambda t, x: np.asarray(model.dispersion(t, x), dtype=float)  # noqa: E731
    if model.kernel is not None:
        drift = _core_py.builtin_drift(model.kernel[0], model.kernel[1], model.d)
    else:
        drift = lambda t, x: np.asarray(model.drift(t, x), dtype=float)  # noqa: E731
    return drift, disp

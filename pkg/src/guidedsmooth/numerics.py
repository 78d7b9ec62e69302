"""Fixed-step Runge-Kutta integration, SPD kernels and random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg

from .errors import IntegrationError, JumpUpdateError, SpdError

__all__ = [
    "RkTableau",
    "RALSTON2",
    "RALSTON3",
    "RALSTON4",
    "rk_step",
    "symmetrize",
    "cholesky",
    "spd_solve",
    "spd_inv",
    "woodbury_downdate",
    "RngStream",
]


@dataclass(frozen=True)
class RkTableau:
    """Butcher tableau of an explicit Runge-Kutta method.

    Attributes
    ----------
    nodes : tuple of float
        Stage nodes ``c``.
    weights : tuple of float
        Stage weights ``b``.
    coupling : tuple of tuple of float
        Strictly lower triangular coupling ``a``; row ``i`` holds ``i`` entries.
    name : str
    """

    nodes: tuple
    weights: tuple
    coupling: tuple
    name: str = ""

    def __post_init__(self):
        s = len(self.nodes)
        if len(self.weights) != s or len(self.coupling) != s:
            raise ValueError("inconsistent tableau sizes")
        for i, row in enumerate(self.coupling):
            if len(row) != i:
                raise ValueError(f"coupling row {i} must have {i} entries")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if self.order() < 2:
            raise ValueError("tableau must be at least second order")

    @property
    def stages(self) -> int:
        return len(self.nodes)

    def order(self, tol: float = 1e-12) -> int:
        """Highest order (up to 4) whose order conditions hold to ``tol``."""
        b = np.asarray(self.weights, dtype=float)
        c = np.asarray(self.nodes, dtype=float)
        s = len(b)
        A = np.zeros((s, s))
        for i, row in enumerate(self.coupling):
            A[i, :i] = row
        if not np.allclose(A.sum(axis=1), c, atol=tol, rtol=0):
            return 0
        conditions = [
            [b.sum() - 1.0],
            [b @ c - 1 / 2],
            [b @ c**2 - 1 / 3, b @ A @ c - 1 / 6],
            [
                b @ c**3 - 1 / 4,
                b @ (c * (A @ c)) - 1 / 8,
                b @ A @ c**2 - 1 / 12,
                b @ A @ A @ c - 1 / 24,
            ],
        ]
        order = 0
        for conds in conditions:
            if max(abs(v) for v in conds) > tol:
                break
            order += 1
        return order


# Minimum truncation error second order method.
RALSTON2 = RkTableau(
    nodes=(0.0, 2 / 3),
    weights=(1 / 4, 3 / 4),
    coupling=((), (2 / 3,)),
    name="ralston2",
)

RALSTON3 = RkTableau(
    nodes=(0.0, 1 / 2, 3 / 4),
    weights=(2 / 9, 1 / 3, 4 / 9),
    coupling=((), (1 / 2,), (0.0, 3 / 4)),
    name="ralston3",
)

_S5 = math.sqrt(5.0)
RALSTON4 = RkTableau(
    nodes=(0.0, 2 / 5, 7 / 8 - 3 * _S5 / 16, 1.0),
    weights=(
        (263 + 24 * _S5) / 1812,
        (125 - 1000 * _S5) / 3828,
        (3426304 + 1661952 * _S5) / 5924787,
        (30 - 4 * _S5) / 123,
    ),
    coupling=(
        (),
        (2 / 5,),
        ((-2889 + 1428 * _S5) / 1024, (3785 - 1620 * _S5) / 1024),
        (
            (-3365 + 2094 * _S5) / 6040,
            (-975 - 3046 * _S5) / 2552,
            (467040 + 203968 * _S5) / 240845,
        ),
    ),
    name="ralston4",
)

TABLEAUS = {tab.name: tab for tab in (RALSTON2, RALSTON3, RALSTON4)}


def rk_step(
    f: Callable[[float, np.ndarray], np.ndarray],
    t: float,
    y: np.ndarray,
    h: float,
    tableau: RkTableau = RALSTON2,
) -> np.ndarray:
    """One explicit Runge-Kutta step ``y(t) -> y(t + h)``.

    ``h`` may be negative for backward integration. Raises
    :class:`IntegrationError` if a stage derivative is not finite.
    """
    if h == 0:
        raise ValueError("step size must be non-zero")
    ks = []
    for i in range(tableau.stages):
        yi = y
        for aij, kj in zip(tableau.coupling[i], ks):
            if aij != 0.0:
                yi = yi + (h * aij) * kj
        ti = t + tableau.nodes[i] * h
        k = np.asarray(f(ti, yi), dtype=float)
        if not np.all(np.isfinite(k)):
            raise IntegrationError("non-finite derivative", time=ti)
        ks.append(k)
    out = y
    for bi, ki in zip(tableau.weights, ks):
        out = out + (h * bi) * ki
    return out


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def cholesky(A, name=None, index=None):
    """Lower Cholesky factor of ``A``; raises :class:`SpdError` on failure."""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise SpdError("matrix has non-finite entries", name, index)
    try:
        return linalg.cholesky(A, lower=True)
    except linalg.LinAlgError as exc:
        raise SpdError(f"Cholesky factorisation failed ({exc})", name, index) from None


def spd_solve(A, B, name=None, index=None) -> np.ndarray:
    """Solve ``A X = B`` for symmetric positive definite ``A`` via Cholesky."""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise SpdError("matrix has non-finite entries", name, index)
    try:
        factor = linalg.cho_factor(A, lower=True)
    except linalg.LinAlgError as exc:
        raise SpdError(f"Cholesky factorisation failed ({exc})", name, index) from None
    return linalg.cho_solve(factor, np.asarray(B, dtype=float))


def spd_inv(A, name=None, index=None) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return symmetrize(spd_solve(A, np.eye(A.shape[0]), name, index))


def woodbury_downdate(P, L, S, index=None) -> np.ndarray:
    """Posterior covariance ``P - P L' (S + L P L')^{-1} L P``.

    This is the covariance of a Gaussian prior with covariance ``P`` after
    observing ``L x`` with noise covariance ``S``. The result is symmetrised.
    """
    P = np.asarray(P, dtype=float)
    L = np.atleast_2d(np.asarray(L, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    PLt = P @ L.T
    inner = S + L @ PLt
    try:
        gain = spd_solve(inner, PLt.T, name="S + L P L'", index=index).T
    except SpdError as exc:
        raise JumpUpdateError(str(exc), index=index) from None
    return symmetrize(P - gain @ PLt.T)


class RngStream:
    """Independent, reproducible random stream identified by ``(seed, stream)``.

    Backed by the counter-based Philox generator; distinct stream ids spawn
    statistically independent sequences from the same seed.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, size=None):
        return self.generator.random(size)

    def beta(self, a, b, size=None):
        return self.generator.beta(a, b, size)

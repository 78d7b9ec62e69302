"""Smoothing of partially observed diffusions with guided proposals.

A backward filter for a linear auxiliary diffusion steers Euler-simulated
proposals towards the observations; a Metropolis-Hastings chain with
Crank-Nicolson moves on the start point and the driving noise samples the
smoothing distribution exactly up to time discretisation.
"""

from .backward import BackwardFilter, FilterAudit, run_backward
from .errors import (
    ConfigError,
    GuidedSmoothError,
    IntegrationError,
    JumpUpdateError,
    NumericalError,
    ProposalError,
    SpdError,
)
from .guided import GuidedPath, GuidedSimulator, guided_forward, guided_forward_timechanged
from .kernels import HAVE_COMPILED
from .mcmc import SmootherConfig, SmoothingResult, run_smoother
from .model import (
    DiffusionModel,
    LinearAuxiliary,
    Observation,
    ObservationSchedule,
    TimeChange,
    TimeGrid,
    lorenz_model,
    ou_model,
    pendulum_model,
)

__version__ = "0.1.0"

__all__ = [
    "BackwardFilter",
    "ConfigError",
    "DiffusionModel",
    "FilterAudit",
    "GuidedPath",
    "GuidedSimulator",
    "GuidedSmoothError",
    "HAVE_COMPILED",
    "IntegrationError",
    "JumpUpdateError",
    "LinearAuxiliary",
    "NumericalError",
    "Observation",
    "ObservationSchedule",
    "ProposalError",
    "SmootherConfig",
    "SmoothingResult",
    "SpdError",
    "TimeChange",
    "TimeGrid",
    "guided_forward",
    "guided_forward_timechanged",
    "lorenz_model",
    "ou_model",
    "pendulum_model",
    "run_backward",
    "run_smoother",
]

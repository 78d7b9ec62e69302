"""Exception hierarchy shared by all modules."""


class GuidedSmoothError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(GuidedSmoothError, ValueError):
    """Invalid model, schedule or run configuration."""


class NumericalError(GuidedSmoothError, ArithmeticError):
    """Base class for failures during numerical computation."""


class IntegrationError(NumericalError):
    """A fixed-step integration produced a non-finite value.

    Parameters
    ----------
    message : str
        Human readable description.
    time : float, optional
        Time at which the failure was detected.
    """

    def __init__(self, message, time=None):
        if time is not None:
            message = f"{message} (at t={time:.10g})"
        super().__init__(message)
        self.time = time


class SpdError(NumericalError):
    """Cholesky factorisation failed on a matrix that should be SPD."""

    def __init__(self, message, name=None, index=None):
        parts = [message]
        if name is not None:
            parts.append(f"matrix={name}")
        if index is not None:
            parts.append(f"index={index}")
        super().__init__("; ".join(parts))
        self.name = name
        self.index = index


class JumpUpdateError(SpdError):
    """The observation update at an observation time could not be computed."""


class ProposalError(NumericalError):
    """The guided proposal left the finite range during simulation."""

    def __init__(self, message, step=None, time=None):
        if step is not None:
            message = f"{message} (step {step}, t={time:.10g})"
        super().__init__(message)
        self.step = step
        self.time = time

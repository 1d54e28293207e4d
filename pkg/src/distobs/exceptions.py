"""Exception types shared across the package."""


class DistobsError(Exception):
    """Base class for all package-specific errors."""


class EvaluationError(DistobsError):
    """A model evaluator (nonlinearity, input signal) returned a non-finite value."""


class AssemblyError(DistobsError):
    """An LMI/equality expression is dimensionally or structurally inconsistent."""


class ConditioningError(DistobsError):
    """A matrix that must be inverted is numerically singular."""


class SynthesisError(DistobsError):
    """A synthesis stage failed.  ``code`` distinguishes the failing stage."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class DivergenceError(DistobsError):
    """Simulation produced a non-finite or unbounded state."""

    def __init__(self, t_bad: float, message: str = ""):
        super().__init__(message or f"state diverged at t={t_bad:.6g}")
        self.t_bad = t_bad


class DegenerateFitError(DistobsError):
    """Error series has too few usable samples for an exponential fit."""


class ConfigError(DistobsError):
    """Configuration file is malformed or inconsistent."""

"""Exception types shared across the package."""

__all__ = [
    "WeylscopeError",
    "ModelError",
    "NumericalError",
    "ConvergenceError",
    "GapClosureError",
]


class WeylscopeError(Exception):
    """Base class for all weylscope errors."""


class ModelError(WeylscopeError):
    """Invalid model definition or model file (CLI exit code 3)."""


class NumericalError(WeylscopeError):
    """A numerical procedure failed its own quality gates (CLI exit code 4)."""


class ConvergenceError(NumericalError):
    """An iteration did not converge within its budget."""


class GapClosureError(NumericalError):
    """A spectral gap closes where an operation requires it to stay open."""

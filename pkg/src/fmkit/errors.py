"""Exception hierarchy shared by every fmkit module.

Each class carries the process exit code used by the command-line front end.
"""


class FMKitError(Exception):
    exit_code = 1


class ConfigurationError(FMKitError, ValueError):
    """Unknown kind, malformed config or out-of-range setting."""

    exit_code = 2


class ArgumentError(FMKitError, ValueError):
    """Shape mismatch or otherwise invalid call arguments."""

    exit_code = 2


class DomainError(FMKitError, ValueError):
    """Input outside the mathematical domain of an operation."""

    exit_code = 4


class SingularityError(DomainError):
    """A coefficient would divide by (numerically) zero."""


class SimulationError(FMKitError, ArithmeticError):
    """Non-finite values produced while integrating a model."""

    exit_code = 4

    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t:.6g})")
        self.t = t


class UnsupportedError(FMKitError):
    """Operation not defined for the given path/parameterization combination."""

    exit_code = 5

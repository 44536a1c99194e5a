"""Exception hierarchy shared by the engine, simulator and CLI."""

from __future__ import annotations


class ProjmechError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 3


class InvalidInputError(ProjmechError, ValueError):
    """Malformed numerical input (non-finite entries, bad shapes, bad ranges)."""

    exit_code = 2


class InvalidModelError(InvalidInputError):
    """A model callback returned something physically inadmissible, e.g. a non-SPD mass matrix."""


class ConfigError(InvalidInputError):
    """Scenario or problem file failed validation.

    Parameters
    ----------
    field : str
        Dotted path of the offending key (``"integrator.step_size"``).
    message : str
        Human readable reason.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class InconsistentRestitutionError(ProjmechError):
    """Restitution data would let an impact create kinetic energy."""

    exit_code = 4

    def __init__(self, message: str, worst_eigenvalue: float | None = None):
        self.worst_eigenvalue = worst_eigenvalue
        super().__init__(message)


class InternalConsistencyError(ProjmechError):
    """Two independent evaluations of the same quantity disagree."""

    exit_code = 5


class StalledEventError(ProjmechError):
    """The integrator could not make progress (step underflow or event storm)."""

    exit_code = 3

    def __init__(self, message: str, state=None):
        self.state = state
        super().__init__(message)


class DriftError(ProjmechError):
    """Constraint drift projection failed to converge."""

    exit_code = 3

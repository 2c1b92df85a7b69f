"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class SpdeError(Exception):
    """Base class for every error raised by :mod:`spdefem`."""


class ConfigError(SpdeError, ValueError):
    """Invalid user configuration or inconsistent inputs."""


class ConstructionError(SpdeError, ValueError):
    """A data structure could not be built from the given arguments."""


class AssemblyError(SpdeError):
    """Finite element assembly failed (degenerate element, bad coefficients)."""


class NumericalError(SpdeError):
    """Base class for failures of an iterative or direct numerical method."""


class ConvergenceError(NumericalError):
    """An iterative method did not reach its tolerance.

    ``residual`` holds the last achieved (relative) residual and
    ``history`` the residual per iteration when available.
    """

    def __init__(self, message: str, residual: float = float("nan"), history=None):
        super().__init__(message)
        self.residual = residual
        self.history = list(history or [])


class StepFailure(NumericalError):
    """A time step could not be completed."""

    def __init__(self, message: str, step: int | None = None, history=None):
        super().__init__(message)
        self.step = step
        self.history = list(history or [])


class DivergenceError(StepFailure):
    """Non-finite values appeared during a time step."""


class NonFiniteError(NumericalError, ValueError):
    """A nodal field contains NaN or infinity."""

    def __init__(self, message: str, node: int):
        super().__init__(message)
        self.node = node


class AdmissibilityError(ConfigError):
    """The drift polynomial violates the odd-degree / negative-leading rule."""


class FitError(SpdeError, ValueError):
    """Convergence-order regression received unusable data."""

"""Exception hierarchy shared by every module of the package."""
from __future__ import annotations


class CoagfluxError(Exception):
    """Base class for all package errors."""


class DomainError(CoagfluxError, ValueError):
    """An argument lies outside the domain of the operation (e.g. a size <= 0)."""


class ConfigurationError(CoagfluxError, ValueError):
    """Parameters are inconsistent with the model constraints."""


class GellingError(ConfigurationError):
    """Homogeneity gamma >= 1: the scaling ansatz does not exist."""


class AdmissibilityError(ConfigurationError):
    """The kernel violates |gamma + 2 lambda| < 1, so no constant-flux profile exists."""


class NumericalError(CoagfluxError, RuntimeError):
    """An iterative method failed (non-convergence, dt underflow, bracket failure).

    ``trace`` carries whatever residual history was recorded before the failure.
    """

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []

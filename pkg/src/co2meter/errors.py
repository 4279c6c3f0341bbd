"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CO2MeterError(Exception):
    """Base class for all package-specific errors."""


class UserInputError(CO2MeterError):
    """Malformed user-supplied data (bad CSV/JSON, unknown names, bad values)."""


class FitError(UserInputError):
    """A model fit could not be performed (rank-deficient or invalid samples)."""


class ConfigurationError(UserInputError):
    """A pipeline or command references a model/asset that is not available."""


class NoBreakEvenError(CO2MeterError):
    """Break-even is undefined because the energy delta is not positive."""


class TrainingDivergedError(CO2MeterError):
    """Training aborted because the loss became non-finite."""

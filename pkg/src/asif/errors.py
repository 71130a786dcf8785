"""Exception hierarchy shared across the package."""

from __future__ import annotations


class AsifError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(AsifError, ValueError):
    """A design or model parameter is outside its admissible range."""


class DimensionError(AsifError, ValueError):
    """Vector or matrix dimensions do not line up."""


class DegenerateDesignError(AsifError):
    """A design restriction produced an empty support."""


class EnumerationTooLargeError(AsifError):
    """Exact enumeration was requested for a support above the size cap."""


class UndefinedEstimatorError(AsifError):
    """The estimator is undefined for the given assignment (an empty arm)."""


class ConfigError(AsifError):
    """A scenario configuration file is invalid or incomplete."""

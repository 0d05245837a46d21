"""Exceptions raised by latent-condense.

Every error carries a ``category`` that the CLI prints as the diagnostic prefix
and an ``exit_code`` the process terminates with.
"""


class LcaError(Exception):
    """Base class for all latent-condense errors."""

    category = "error"
    exit_code = 1


class ConfigError(LcaError):
    category = "config"
    exit_code = 2


class ShapeError(LcaError, ValueError):
    category = "shape"
    exit_code = 3


class HeadIndexError(LcaError, IndexError):
    category = "shape"
    exit_code = 3


class PreconditionError(LcaError):
    category = "precondition"
    exit_code = 3


class NumericError(LcaError):
    category = "numeric"
    exit_code = 3


class FormatError(LcaError):
    category = "format"
    exit_code = 4


class ConsistencyError(LcaError):
    category = "consistency"
    exit_code = 5


class InvariantViolation(LcaError):
    """Raised when a checked property (bound, cardinality law, ...) fails."""

    category = "invariant"
    exit_code = 6

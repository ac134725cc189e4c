"""Exception types shared across the package."""


class PrecondSgdError(Exception):
    """Base class for all package errors."""


class NonFiniteError(PrecondSgdError):
    """A value that must be finite is NaN/inf, or a run diverged."""

    def __init__(self, message, records=None):
        super().__init__(message)
        # Partial trajectory captured up to the failure, for flushing.
        self.records = records if records is not None else []


class SingularMatrixError(PrecondSgdError):
    """A negative matrix power was requested of a singular matrix."""


class PreconditionViolatedError(PrecondSgdError):
    """Inputs are outside the validity region of a bound."""


class InvalidParamError(PrecondSgdError):
    """A parameter is outside its documented domain."""


class MissingOracleError(PrecondSgdError):
    """The problem does not expose the requested exact quantity."""


class DimMismatchError(PrecondSgdError):
    """Vector/matrix dimensions do not agree."""


class DataFormatError(PrecondSgdError):
    """Dataset rows/columns are malformed or inconsistent."""


class ConfigError(PrecondSgdError):
    """An experiment config failed to parse or validate."""

"""Exception hierarchy shared across the package."""


class LccError(Exception):
    """Base class for all package errors."""


class ContractViolation(LccError, ValueError):
    """An operation was called with inputs that break its contract."""


class UnsupportedOpError(LccError, KeyError):
    """The requested operator is unknown or has no registered derivative."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unsupported op"


class DataError(LccError):
    """A dataset, sample, or word-vector file could not be loaded."""


class ConfigError(LccError):
    """A run configuration could not be parsed or is invalid."""


class NumericalError(LccError):
    """Training or verification produced non-finite values or failed a check."""

"""Exception types shared across the toolkit, mapped to CLI exit codes."""


class SasvFuseError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(SasvFuseError):
    """Invalid configuration: bad shapes, out-of-range values, unknown keys."""

    exit_code = 2


class DataError(SasvFuseError):
    """Malformed or inconsistent data: parse failures, bad file formats, missing entries."""

    exit_code = 3


class DegenerateInputError(DataError):
    """Structurally valid input that is mathematically degenerate (zero vector, empty class)."""


class NumericalError(SasvFuseError):
    """Numerical failure during computation, e.g. a NaN loss."""

    exit_code = 4

"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MultiViewError(Exception):
    exit_code = 1


class ConfigError(MultiViewError, ValueError):
    """Invalid or conflicting configuration."""

    exit_code = 2


class DataValidationError(MultiViewError, ValueError):
    """Malformed corpus, dictionary or lexicon input."""

    exit_code = 3


class NumericalError(MultiViewError, ArithmeticError):
    """NaN/Inf encountered in a forward or backward pass, or a broken simplex."""

    exit_code = 4


class DimensionError(MultiViewError, ValueError):
    exit_code = 4


class EmptyPoolError(MultiViewError, ValueError):
    exit_code = 4


class ContractError(MultiViewError, ValueError):
    """A documented precondition was violated by the caller."""

    exit_code = 4

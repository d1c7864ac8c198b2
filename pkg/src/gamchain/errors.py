"""Exception types shared across the package."""


class GamChainError(Exception):
    """Base class for all package errors."""


class DomainError(GamChainError, ValueError):
    """An argument lies outside the mathematical domain of a function."""


class InputError(GamChainError, ValueError):
    """Malformed or insufficient input data."""


class ConfigurationError(GamChainError, ValueError):
    """Invalid settings passed to an engine, a benchmark or the CLI."""


class NumericalError(GamChainError, ArithmeticError):
    """A computation degenerated (non-finite values, collapsed weights)."""

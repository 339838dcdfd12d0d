"""Exception hierarchy shared by every btdz module."""


class BtdzError(Exception):
    """Base class for all errors raised by btdz."""


class InvalidArgumentError(BtdzError, ValueError):
    """Shapes, ranges or preconditions violated by the caller."""


class DegenerateFeaturesError(BtdzError):
    """Feature matrix lacks the rank needed for an operation."""

    def __init__(self, message, rank=None):
        super().__init__(message)
        self.rank = rank


class NumericalError(BtdzError, ArithmeticError):
    """A linear solve or sampling loop failed numerically."""


class ConfigError(BtdzError):
    """Experiment configuration is malformed or references missing files."""


class InvariantError(BtdzError):
    """A checked mathematical invariant was violated at run time."""

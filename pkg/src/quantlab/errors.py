"""Exception types shared across the package.

The CLI maps these onto exit codes, so library code should raise the most
specific type that applies rather than bare ValueError/RuntimeError.
"""


class QuantLabError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(QuantLabError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class DataError(QuantLabError, ValueError):
    """Input data is invalid (e.g. non-finite values in a tensor)."""


class FormatError(QuantLabError, ValueError):
    """A file does not conform to its declared binary or text format."""


class NumericalError(QuantLabError, RuntimeError):
    """A numerical procedure failed to converge within its budget."""


class ConstructionError(NumericalError):
    """A code construction (shooting/seed search) could not be completed."""

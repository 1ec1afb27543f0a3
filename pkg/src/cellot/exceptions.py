"""Exception hierarchy shared across the package.

Two failure families matter to callers (and to the CLI exit codes):
malformed inputs and numerical breakdowns.
"""


class CellotError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(CellotError, ValueError):
    """An input violates a documented precondition or file schema."""


class NumericalError(CellotError, RuntimeError):
    """A numerical procedure failed (spectrum out of range, ladder exhausted,
    diverging optimization, ...)."""

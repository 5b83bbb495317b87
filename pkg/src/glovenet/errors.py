"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: UsageError -> 1,
everything data/shape related -> 2.
"""


class GloveNetError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(GloveNetError, ValueError):
    """Operand shapes are incompatible. Messages name both shapes."""


class UsageError(GloveNetError, ValueError):
    """Caller passed invalid arguments (bad flag value, empty input, ...)."""


class DataFormatError(GloveNetError, ValueError):
    """On-disk data is missing, truncated or inconsistent."""


class ContractError(GloveNetError, RuntimeError):
    """An API precondition that is not a plain argument check was violated."""

"""Exception types shared across the package."""


class JulkitError(Exception):
    """Base class for all julkit errors."""


class ShapeError(JulkitError):
    """Operand shapes are incompatible with the operation."""


class DomainError(JulkitError):
    """Operand values are outside the operation's domain (log of <=0, div by 0)."""


class ConfigError(JulkitError):
    """Invalid configuration value, file, or checkpoint."""


class RangeError(JulkitError):
    """Index or argument outside its valid range."""


class NumericsError(JulkitError):
    """A computed quantity became NaN or infinite."""

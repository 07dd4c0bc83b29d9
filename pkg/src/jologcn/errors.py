"""Exception types shared across the package."""


class JoloError(Exception):
    """Base class for all package errors."""


class DimensionError(JoloError, ValueError):
    """Array extents do not match what an operation requires."""


class NumericError(JoloError, ArithmeticError):
    """A non-finite value showed up where a finite one is required."""


class InputError(JoloError, ValueError):
    """Input values violate an operation's preconditions."""


class SchemaError(JoloError, ValueError):
    """Structured data (skeleton layout, topology, file) has the wrong schema."""


class ConfigError(JoloError, ValueError):
    """A configuration is infeasible or inconsistent."""


class FormatError(JoloError, ValueError):
    """A binary container is malformed or carries an unexpected header."""


class HashMismatchError(JoloError):
    """Two artifacts were produced under different configurations."""

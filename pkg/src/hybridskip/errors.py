"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class ParameterError(ValueError):
    """A model or construction argument is out of its valid range."""


class UsageError(RuntimeError):
    """An API was called in an invalid state or with invalid options."""


class NumericError(ArithmeticError):
    """A computation produced NaN/Inf where finite values are required."""


class ConfigError(ValueError):
    """A configuration file or option could not be parsed or validated."""


class FormatError(ValueError):
    """A serialized file does not match its expected binary layout."""


class EvaluationError(RuntimeError):
    """Model evaluation was asked to run on unusable inputs."""


class ComparisonError(ValueError):
    """Result sets cannot be compared (mismatched or missing entries)."""

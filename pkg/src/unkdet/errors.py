"""Exception taxonomy shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or invalid shapes."""


class ParameterError(ValueError):
    """An argument is outside its documented range."""


class NumericError(ArithmeticError):
    """An iterative numerical routine failed to converge."""


class ConfigError(ValueError):
    """A configuration value or key is invalid."""


class DegenerateInputError(ValueError):
    """Too few samples for a statistic; callers fall back to a simpler rule."""


class UsageError(RuntimeError):
    """An operation was invoked in an unusable state (empty dataset, missing file)."""

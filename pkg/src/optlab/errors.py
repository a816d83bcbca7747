"""Exception types shared across the package."""


class OptlabError(ValueError):
    """Base class for every error this package raises on bad input."""


class ShapeError(OptlabError):
    """Operands have incompatible shapes."""


class DegenerateBoxError(OptlabError):
    """A bounding box has nonpositive width or height."""


class RangeError(OptlabError):
    """A scalar argument lies outside its documented range."""


class ParameterError(OptlabError):
    """A hyperparameter or configuration value is invalid."""


class NonFiniteInputError(OptlabError):
    """An input contains NaN or infinity where finite values are required."""


class EmptyInputError(OptlabError):
    """An input sequence is empty where at least one element is required."""

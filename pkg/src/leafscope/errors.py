"""Exception hierarchy shared by every pipeline stage."""


class LeafscopeError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(LeafscopeError, ValueError):
    """A configuration value violates its documented range or shape."""


class DatasetError(LeafscopeError):
    """The on-disk corpus does not have the expected class-per-directory layout."""


class StateError(LeafscopeError):
    """An operation was called before a prerequisite step ran."""


class ShapeError(LeafscopeError, ValueError):
    pass


class InputError(LeafscopeError, ValueError):
    pass


class LabelError(InputError):
    pass


class NumericError(LeafscopeError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    pass


class DataError(LeafscopeError):
    pass


class BackboneUnavailableError(LeafscopeError, EnvironmentError):
    """Pretrained weights or the model provider could not be loaded."""

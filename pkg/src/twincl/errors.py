"""Exception types raised across the package."""


class TwinclError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(TwinclError, ValueError):
    pass


class ShapeMismatchError(TwinclError, ValueError):
    pass


class DegenerateClassError(TwinclError):
    """A mixture component received (numerically) zero responsibility mass."""


class DegenerateInputError(TwinclError):
    """Input values carry no spread, so a two-component fit is meaningless."""


class NonFiniteLossError(TwinclError, FloatingPointError):
    pass


class ConfigError(TwinclError, ValueError):
    pass


class MismatchError(TwinclError):
    """A checkpoint and a dataset disagree on dimension or class count."""

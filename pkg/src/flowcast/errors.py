"""Exception hierarchy shared by all flowcast modules."""


class FlowcastError(Exception):
    """Base class for all errors raised by flowcast."""


class ShapeError(FlowcastError, ValueError):
    """Operand shapes are inconsistent with the requested operation."""


class NumericError(FlowcastError, ArithmeticError):
    """A public operation produced NaN or Inf."""


class ConfigError(FlowcastError, ValueError):
    """A configuration violates a documented precondition."""


class FormatError(FlowcastError, ValueError):
    """An on-disk artifact has a bad magic, version, or payload size."""


class ConstantInputError(FlowcastError, ValueError):
    """Correlation requested on a constant vector; the result is undefined."""


class LoaderError(FlowcastError, RuntimeError):
    """A data-loader worker failed; surfaced to the consumer, never a hang."""

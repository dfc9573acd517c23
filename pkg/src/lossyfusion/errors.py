"""Exception hierarchy shared by every module."""


class FusionError(Exception):
    """Base class for all errors raised by lossyfusion."""


class InvalidInputError(FusionError, ValueError):
    """Malformed, non-finite or dimensionally inconsistent input."""


class DegenerateSensorError(FusionError):
    """A sensor whose observable subspace is empty."""


class NonConvergenceError(FusionError):
    """An iterative solver hit its iteration cap."""


class InfeasibleError(FusionError):
    """The unbiasedness constraint or a series precondition cannot be met."""


class ModelInconsistencyError(FusionError):
    """Derived quantities violate a structural property (e.g. Sigma indefinite)."""


class ConfigError(FusionError):
    """A model configuration file could not be parsed."""

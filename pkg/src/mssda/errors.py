"""Exception hierarchy shared across the package."""


class MssdaError(Exception):
    """Base class for all errors raised by this package."""


class InputError(MssdaError, ValueError):
    """A caller passed values that violate an operation's preconditions."""


class ConfigError(MssdaError, ValueError):
    """A configuration document or network description is invalid."""


class ShapeError(ConfigError):
    """Tensor shapes do not compose; message names the offending layer."""


class DataLoadError(MssdaError):
    """A dataset directory failed validation; message names file (and line)."""


class GraphStateError(MssdaError, RuntimeError):
    """Autodiff graph used out of order (e.g. backward twice without reset)."""


class TrainingError(MssdaError, RuntimeError):
    """Training aborted (NaN loss/gradients); message carries diagnostics."""

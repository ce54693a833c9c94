"""Exception hierarchy shared across the package."""


class SelfCriticError(Exception):
    """Base class for all package errors."""


class ContractError(SelfCriticError, ValueError):
    """A documented precondition of an operation was violated."""


class DimensionError(ContractError):
    """Tensor shapes are incompatible for the requested operation."""


class LabelIndexError(SelfCriticError, IndexError):
    """A class label lies outside ``[0, n_classes)``."""


class NonFiniteError(SelfCriticError, FloatingPointError):
    """An operation produced NaN or Inf from finite inputs (debug mode)."""


class DivergenceError(SelfCriticError, FloatingPointError):
    """An inner-loop loss became non-finite."""

    def __init__(self, message, step=None, episode=None):
        super().__init__(message)
        self.step = step
        self.episode = episode


class CapacityError(SelfCriticError, ValueError):
    """A class pool cannot supply the requested episode."""


class IngestionError(SelfCriticError, OSError):
    """An input file could not be read or decoded."""


class CheckpointFormatError(SelfCriticError, ValueError):
    """A checkpoint file is malformed or truncated."""


class ConfigError(SelfCriticError, ValueError):
    """A configuration file or value is invalid."""


class ConfigMismatchError(ConfigError):
    """A checkpoint was produced under a different configuration."""

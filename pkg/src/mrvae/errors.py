"""Exception hierarchy shared by all modules."""


class MRVAEError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(MRVAEError, ValueError):
    """Array shapes are inconsistent with each other or with a contract."""


class DomainError(MRVAEError, ValueError):
    """An argument lies outside the domain of the operation (e.g. beta <= 0)."""


class NumericalError(MRVAEError, ArithmeticError):
    """Non-finite values appeared or an iterative routine failed to converge."""

    def __init__(self, message, layer=None, batch=None):
        super().__init__(message)
        self.layer = layer
        self.batch = batch


class ConstructionError(MRVAEError, ValueError):
    """An exact hypernetwork construction is undefined for the given inputs."""


class StateError(MRVAEError, RuntimeError):
    """A tape, checkpoint or optimizer state does not match its model."""


class FormatError(MRVAEError, ValueError):
    """A file does not follow the expected binary or text format."""


class ConfigError(MRVAEError, ValueError):
    """A run configuration failed validation."""

"""Exception types shared across the package."""


class FedVidError(Exception):
    """Base class for all package errors."""


class ConfigError(FedVidError, ValueError):
    pass


class ShapeMismatchError(FedVidError, ValueError):
    """Two weight sets do not share a name -> (role, shape) signature."""

    def __init__(self, message: str, name: str | None = None):
        super().__init__(message)
        self.name = name


class NonFiniteError(FedVidError, ValueError):
    pass


class CheckpointError(FedVidError, ValueError):
    pass


class InfeasiblePartitionError(FedVidError, ValueError):
    pass

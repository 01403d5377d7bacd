"""Exception types shared across the library."""


class FreshnetsError(Exception):
    """Base class for all library errors."""


class ShapeError(FreshnetsError):
    """An operation was called with inconsistent array shapes or sizes."""


class ConfigError(FreshnetsError):
    """A configuration value is out of range or a layer spec is infeasible."""


class AllocationError(ConfigError):
    """A bucket budget cannot be satisfied for the requested layer."""


class ModelFormatError(FreshnetsError):
    """A model or dataset file is malformed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingDiverged(FreshnetsError):
    """Training produced a non-finite loss; try a lower learning rate."""

"""Exception types shared across the package."""


class RiscadeError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(RiscadeError, ValueError):
    """Invalid or inconsistent configuration (unknown keys, bad bounds, ...)."""


class ShapeError(RiscadeError, ValueError):
    """Array dimensions incompatible with the requested operation."""


class NumericError(RiscadeError, ArithmeticError):
    """Non-finite value produced where a finite one is required.

    ``where`` names the layer or step that produced the value.
    """

    def __init__(self, message=None, where=None, detail=None):
        if message is None:
            message = f"{detail or 'non-finite value'} (at {where})"
        super().__init__(message)
        self.where = where
        self.detail = detail


class CheckpointError(RiscadeError, ValueError):
    """Checkpoint file malformed or incompatible with the requested spec."""

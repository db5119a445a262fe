"""
Exception hierarchy for segsel.

Every error is also a ValueError so callers that only catch ValueError keep
working.
"""

from typing import Optional


class SegselError(ValueError):
    """Base class for all segsel errors."""


class TrajectoryParseError(SegselError):
    """A trajectory row could not be parsed."""

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class ConfigurationError(SegselError):
    """Invalid configuration, route description or array shapes."""


class DataError(SegselError):
    """Non-finite or inconsistent input data."""


class InsufficientDataError(DataError):
    """Too few trips, fixes or distance-time pairs."""


class ExtrapolationError(DataError):
    """A Kriging target lies too far outside the observed distance span."""


class SingularModelError(SegselError):
    """Covariance factorization failed even after jitter escalation."""


class NumericalError(SegselError):
    """A non-finite value appeared during training."""

    def __init__(self, message: str, layer: Optional[str] = None, epoch: Optional[int] = None):
        self.layer = layer
        self.epoch = epoch
        where = []
        if layer is not None:
            where.append(f"layer {layer}")
        if epoch is not None:
            where.append(f"epoch {epoch}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)

"""Exception hierarchy shared by every module in the package."""

from __future__ import annotations


class IsomechError(Exception):
    """Base class for all errors raised by isomech."""


class DimensionError(IsomechError, ValueError):
    """Operands have incompatible lengths."""


class DomainError(IsomechError, ValueError):
    """An input lies outside the domain of the operation (NaN, inf, out of range)."""


class StructureError(IsomechError, ValueError):
    """A ranking, coarse ranking, partition or ownership matrix is malformed."""


class ParameterError(IsomechError, ValueError):
    """A scalar parameter is out of range."""


class OrderingError(IsomechError, ValueError):
    """A majorization precondition failed.

    Attributes:
        index: 1-based prefix length at which the prefix-sum inequality
            (or final equality) first fails.
    """

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class ConfigurationError(IsomechError, ValueError):
    """An experiment was configured inconsistently."""


class SimulationError(IsomechError, RuntimeError):
    """A replication failed at run time.

    Attributes:
        draw: index of the offending noise draw, when known.
    """

    def __init__(self, message: str, draw: int | None = None):
        super().__init__(message)
        self.draw = draw

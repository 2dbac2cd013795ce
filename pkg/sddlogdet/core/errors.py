from __future__ import annotations

from typing import Any, Optional


class LogDetError(Exception):
    """Base class for every error raised by sddlogdet."""


class IndexOutOfRange(LogDetError, IndexError):
    pass


class AsymmetricInput(LogDetError, ValueError):
    pass


class DimensionMismatch(LogDetError, ValueError):
    pass


class NotALaplacian(LogDetError, ValueError):
    pass


class NotSDD(LogDetError, ValueError):
    pass


class DisconnectedGraph(LogDetError, ValueError):
    def __init__(self, message: str = "graph is not connected", components: int = 0) -> None:
        super().__init__(message)
        self.components = components


Disconnected = DisconnectedGraph


class NotPositiveDefinite(LogDetError, ValueError):
    pass


class NotATree(LogDetError, ValueError):
    pass


class VertexMismatch(LogDetError, ValueError):
    pass


class InvalidParameter(LogDetError, ValueError):
    pass


class MaxIterationsExceeded(LogDetError):
    """PCG ran out of iterations; the best iterate is attached."""

    def __init__(self, message: str, best: Any = None, iterations: int = 0) -> None:
        super().__init__(message)
        self.best = best
        self.iterations = iterations


class StretchBelowMinimum(LogDetError, ValueError):
    pass


class SparsificationFailed(LogDetError):
    pass


class ChainStalled(LogDetError):
    pass


class ParseError(LogDetError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class OracleTooLarge(LogDetError, ValueError):
    pass


__all__ = [
    "LogDetError",
    "IndexOutOfRange",
    "AsymmetricInput",
    "DimensionMismatch",
    "NotALaplacian",
    "NotSDD",
    "DisconnectedGraph",
    "Disconnected",
    "NotPositiveDefinite",
    "NotATree",
    "VertexMismatch",
    "InvalidParameter",
    "MaxIterationsExceeded",
    "StretchBelowMinimum",
    "SparsificationFailed",
    "ChainStalled",
    "ParseError",
    "OracleTooLarge",
]

from typing import Optional

import numpy as np


class FracLabError(Exception):
    """Base class for every error raised by fraclab."""


class DomainError(FracLabError, ValueError):
    """A parameter lies outside its admissible mathematical range."""


class ConfigError(FracLabError):
    """Invalid or unknown run configuration."""


class GridMismatchError(FracLabError):
    """Two grid functions (or a function and an operator) live on different grids."""


class NonConvergenceError(FracLabError):
    def __init__(
        self,
        message: str,
        last_iterate: Optional[np.ndarray] = None,
        residual: float = float("nan"),
    ):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class EigenSolverError(FracLabError):
    pass


class InsufficientSpectrumError(FracLabError):
    pass


class SingularInputError(FracLabError):
    pass


class PreconditionError(FracLabError):
    """A hypothesis of an identity being audited does not hold."""

    def __init__(self, hypothesis: str, message: str):
        super().__init__(f"{hypothesis}: {message}")
        self.hypothesis = hypothesis


class FitError(FracLabError):
    pass


class TruncationError(FracLabError):
    """Doubling the line half-width moves the solution by more than the tolerance."""

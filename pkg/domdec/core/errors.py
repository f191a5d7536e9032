"""
Error types raised by the solver.

Every error carries the process exit code the command line maps it to.
"""

from typing import Optional, Sequence


class DomDecError(Exception):
    """Base class for solver errors."""

    exit_code: int = 1


class ConfigurationError(DomDecError, ValueError):
    """Invalid parameters or partition layouts."""

    exit_code = 2


class ValidationError(DomDecError, ValueError):
    """Invalid input data (images, measures, couplings)."""

    exit_code = 2


class DomainError(DomDecError, ValueError):
    """Argument outside the mathematical domain of a function."""

    exit_code = 2


class StructuralError(DomDecError, ValueError):
    """Operands live on mismatched index spaces."""

    exit_code = 2


class ConsistencyError(DomDecError):
    """Mass bookkeeping between basic marginals is violated."""

    exit_code = 3


class NumericallyInfeasibleError(DomDecError):
    """A positive-mass row or column of the truncated kernel is empty."""

    exit_code = 3

    def __init__(
        self,
        message: str,
        empty_rows: Sequence[int] = (),
        empty_cols: Sequence[int] = (),
    ):
        super().__init__(message)
        self.empty_rows = list(empty_rows)
        self.empty_cols = list(empty_cols)


class ConvergenceError(DomDecError):
    """Iteration limit reached before the stopping criterion."""

    exit_code = 3

    def __init__(self, message: str, last_error: float, iterations: int):
        super().__init__(message)
        self.last_error = last_error
        self.iterations = iterations


class CellSolveError(DomDecError):
    """A composite cell could not be solved, even with the ε safeguard."""

    exit_code = 3

    def __init__(
        self,
        message: str,
        label: str,
        cell: int,
        epsilon: float,
        layer: Optional[int] = None,
    ):
        super().__init__(message)
        self.label = label
        self.cell = cell
        self.epsilon = epsilon
        self.layer = layer

    def __str__(self) -> str:
        where = f"label={self.label} cell={self.cell} eps={self.epsilon:g}"
        if self.layer is not None:
            where = f"layer={self.layer} " + where
        return f"{super().__str__()} ({where})"

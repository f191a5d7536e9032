"""Core configuration and error types."""

from .config import (
    DomDecConfig,
    Settings,
    SinkhornConfig,
    WorstCaseConfig,
    domdec_config,
    settings,
    sinkhorn_config,
    worstcase_config,
)
from .errors import (
    CellSolveError,
    ConfigurationError,
    ConsistencyError,
    ConvergenceError,
    DomainError,
    DomDecError,
    NumericallyInfeasibleError,
    StructuralError,
    ValidationError,
)

__all__ = [
    "DomDecConfig",
    "Settings",
    "SinkhornConfig",
    "WorstCaseConfig",
    "domdec_config",
    "settings",
    "sinkhorn_config",
    "worstcase_config",
    "CellSolveError",
    "ConfigurationError",
    "ConsistencyError",
    "ConvergenceError",
    "DomainError",
    "DomDecError",
    "NumericallyInfeasibleError",
    "StructuralError",
    "ValidationError",
]

"""
Configuration and settings for the domain decomposition solver.
"""

import os
from dataclasses import dataclass, field, replace
from typing import Tuple

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        return default


@dataclass(frozen=True)
class SinkhornConfig:
    """Sinkhorn sub-solver configuration."""

    truncation_theta: float = 1e-10
    # |log-scaling| above this many ε-units triggers absorption + re-truncation
    absorption_bound: float = 20.0
    check_every: int = 10
    max_iterations: int = 10000
    err: float = 1e-4
    stopping: str = "l1"

    @classmethod
    def oracle(cls) -> "SinkhornConfig":
        """Dense high-precision mode used for reference couplings."""
        return cls(
            truncation_theta=0.0,
            absorption_bound=20.0,
            check_every=10,
            max_iterations=100000,
            err=1e-12,
            stopping="linf",
        )

    def with_overrides(self, **kwargs) -> "SinkhornConfig":
        """Return a copy with the non-None keyword values replaced."""
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


@dataclass(frozen=True)
class DomDecConfig:
    """Domain decomposition engine configuration."""

    cell_size: int = 4
    truncation_floor: float = 1e-15
    mass_floor: float = 1e-9
    safeguard_attempts: int = 3
    workers: int = field(default_factory=lambda: max(1, _env_int("DOMDEC_WORKERS", 1)))

    def with_overrides(self, **kwargs) -> "DomDecConfig":
        """Return a copy with the non-None keyword values replaced."""
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


@dataclass(frozen=True)
class WorstCaseConfig:
    """Parameter grids and fit rules for the worst-case convergence studies."""

    eps_grid: Tuple[float, ...] = (1.0, 1.33, 1.67, 2.0, 2.5, 3.0, 4.0)
    q_grid: Tuple[float, ...] = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3)
    n_grid: Tuple[int, ...] = (4, 6, 8, 12, 16)
    three_cell_q: float = 0.3
    q_study_eps: float = 10.0
    chain_eps: float = 1.4
    three_cell_sweeps: int = 500
    chain_sweeps: int = 1000
    fit_fraction: float = 0.5
    min_fit_points: int = 20
    delta_floor: float = 1e-14
    sub_solve_err: float = 1e-12


class Settings:
    """Process-level settings."""

    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    OUTPUT_DIR: str = os.getenv("DOMDEC_OUTPUT_DIR", ".")


# Configuration instances
settings = Settings()
sinkhorn_config = SinkhornConfig()
domdec_config = DomDecConfig()
worstcase_config = WorstCaseConfig()

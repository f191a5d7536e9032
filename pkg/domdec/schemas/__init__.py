"""
Report schemas for solver output.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple


def _clean(value: Any) -> Any:
    """Make floats JSON friendly (inf/nan become strings)."""
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


@dataclass
class CellStats:
    """Outcome of one composite-cell task."""

    label: str
    cell: int
    iterations: int
    x_marginal_error: float
    kernel_entries: int
    safeguard_level: int = 0
    entries_before_truncation: int = 0
    entries_after_truncation: int = 0
    mass_moved: float = 0.0
    new_receiver_entries: int = 0

    def to_dict(self) -> dict:
        return _clean(asdict(self))


@dataclass
class SweepStats:
    """Aggregated statistics of one sweep over a composite partition."""

    label: str
    epsilon: float
    cells: int
    per_cell_iterations: List[int] = field(default_factory=list)
    x_marginal_error_sum: float = 0.0
    mass_balanced: float = 0.0
    new_receiver_entries: int = 0
    entries_before_truncation: int = 0
    entries_after_truncation: int = 0
    max_kernel_entries: int = 0
    safeguard_activations: int = 0
    wall_time: float = 0.0
    phase_times: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_cells(
        cls, label: str, epsilon: float, cells: List[CellStats]
    ) -> "SweepStats":
        return cls(
            label=label,
            epsilon=epsilon,
            cells=len(cells),
            per_cell_iterations=[c.iterations for c in cells],
            x_marginal_error_sum=sum(c.x_marginal_error for c in cells),
            mass_balanced=sum(c.mass_moved for c in cells),
            new_receiver_entries=sum(c.new_receiver_entries for c in cells),
            entries_before_truncation=sum(c.entries_before_truncation for c in cells),
            entries_after_truncation=sum(c.entries_after_truncation for c in cells),
            max_kernel_entries=max((c.kernel_entries for c in cells), default=0),
            safeguard_activations=sum(1 for c in cells if c.safeguard_level > 0),
        )

    def to_dict(self) -> dict:
        return _clean(asdict(self))


@dataclass
class LayerReport:
    """Per-layer summary of a multiscale solve."""

    level: int
    side: int
    cell_size: int
    stages: List[Dict[str, float]] = field(default_factory=list)
    sweeps: int = 0
    max_entries: int = 0
    final_entries: int = 0
    wall_time: float = 0.0
    phase_times: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _clean(asdict(self))


@dataclass
class Certificate:
    """Primal-dual quality certificate of a decomposition state."""

    primal_score: float
    dual_score: float
    kernel_norm: float
    relative_pd_gap: float
    x_marginal_l1: float
    y_marginal_l1: float
    relative_dual_score: Optional[float] = None
    glue_residual: float = 0.0
    glue_components: int = 1

    def to_dict(self) -> dict:
        return _clean(asdict(self))


@dataclass
class BaselineReport:
    """Single global Sinkhorn run used as a reference."""

    primal_score: float
    dual_score: float
    x_marginal_l1: float
    y_marginal_l1: float
    epsilons: List[float] = field(default_factory=list)
    iterations: List[int] = field(default_factory=list)
    max_entries: int = 0
    final_entries: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return _clean(asdict(self))


@dataclass
class SolveReport:
    """End-to-end report of a multiscale domain decomposition solve."""

    side: int
    cell_size: int
    sweeps: int
    final_epsilon: float
    primal_score: float
    dual_score: float
    relative_pd_gap: float
    x_marginal_l1: float
    y_marginal_l1: float
    max_entries: int
    final_entries: int
    entries_per_pixel: float
    worker_count: int
    seed: Optional[int] = None
    wall_time: float = 0.0
    phase_times: Dict[str, float] = field(default_factory=dict)
    layers: List[LayerReport] = field(default_factory=list)
    certificate: Optional[Certificate] = None
    baseline: Optional[BaselineReport] = None
    relative_dual_score: Optional[float] = None

    def score_fields(self) -> Tuple[float, ...]:
        return (
            self.primal_score,
            self.dual_score,
            self.relative_pd_gap,
            self.x_marginal_l1,
            self.y_marginal_l1,
        )

    def to_dict(self) -> dict:
        result = asdict(self)
        # Handle nested objects that have their own to_dict
        result["layers"] = [layer.to_dict() for layer in self.layers]
        if self.certificate is not None:
            result["certificate"] = self.certificate.to_dict()
        if self.baseline is not None:
            result["baseline"] = self.baseline.to_dict()
        return _clean(result)


@dataclass
class ConvergenceTrace:
    """Sub-optimality per sweep and the fitted contraction factor."""

    instance: str
    epsilon: float
    deltas: List[float]
    fitted_lambda: float
    slope: float
    r_squared: float
    fit_start: int
    fit_end: int
    floor_reached: bool = False

    def rows(self) -> List[Tuple[int, float]]:
        return list(enumerate(self.deltas))

    def to_dict(self) -> dict:
        return _clean(asdict(self))


@dataclass
class BoundReport:
    """Empirical contraction versus the theoretical bound for one instance."""

    instance: str
    epsilon: float
    empirical_lambda: float
    theoretical_bound: Optional[float]
    transformed_empirical: Optional[float]
    transformed_bound: Optional[float]
    holds: bool
    vacuous: bool = False
    q: Optional[float] = None
    cells: Optional[int] = None
    r_squared: float = 0.0
    step_violations: int = 0
    max_step_excess: float = 0.0

    def to_dict(self) -> dict:
        return _clean(asdict(self))


@dataclass
class StudyReport:
    """A parameter sweep over worst-case instances."""

    study: str
    parameter: str
    values: List[float]
    points: List[BoundReport] = field(default_factory=list)
    law_slope: float = 0.0
    law_intercept: float = 0.0
    law_r_squared: float = 0.0
    monotone: bool = False
    holds_all: bool = False

    def to_dict(self) -> dict:
        result = asdict(self)
        result["points"] = [p.to_dict() for p in self.points]
        return _clean(result)


__all__ = [
    "BaselineReport",
    "BoundReport",
    "CellStats",
    "Certificate",
    "ConvergenceTrace",
    "LayerReport",
    "SolveReport",
    "StudyReport",
    "SweepStats",
]

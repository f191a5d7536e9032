"""
Solver state and problem containers.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from domdec.models.measures import (
    CostOracle,
    DiscreteMeasure,
    GridGeometry,
    SparseMarginal,
)
from domdec.models.partition import BasicPartition, CompositePartition


@dataclass
class CellState:
    """
    Basic Y-marginals nu_i and per-composite-cell X-potentials (eps * log u).

    Potentials are aligned with ``CompositePartition.points`` of their group;
    a missing potential means zero.
    """

    basic_marginals: Dict[int, SparseMarginal]
    epsilon: float
    potentials: Dict[str, Dict[int, np.ndarray]] = field(
        default_factory=lambda: {"A": {}, "B": {}}
    )

    def potential(self, label: str, group: int, size: int) -> np.ndarray:
        stored = self.potentials[label].get(group)
        if stored is None:
            return np.zeros(size)
        return stored

    def has_potentials(self, label: str) -> bool:
        return bool(self.potentials[label])

    def cell_marginal(self, cells) -> SparseMarginal:
        """Sum of the basic marginals of ``cells`` on their union support."""
        parts = [self.basic_marginals[i] for i in cells]
        if not parts:
            return SparseMarginal()
        indices = np.concatenate([p.indices for p in parts])
        values = np.concatenate([p.values for p in parts])
        support, inverse = np.unique(indices, return_inverse=True)
        total = np.zeros(support.size)
        np.add.at(total, inverse, values)
        return SparseMarginal(support, total)

    def y_marginal(self, size: int) -> np.ndarray:
        total = np.zeros(size)
        for i in sorted(self.basic_marginals):
            m = self.basic_marginals[i]
            np.add.at(total, m.indices, m.values)
        return total

    def total_entries(self) -> int:
        return int(sum(m.nnz for m in self.basic_marginals.values()))

    def copy(self) -> "CellState":
        return CellState(
            basic_marginals=dict(self.basic_marginals),
            epsilon=self.epsilon,
            potentials={k: dict(v) for k, v in self.potentials.items()},
        )


@dataclass(frozen=True)
class ProblemData:
    """Everything a sweep needs besides the mutable state."""

    mu: DiscreteMeasure
    nu: DiscreteMeasure
    cost: CostOracle
    epsilon: float
    basic: BasicPartition
    composite_a: CompositePartition
    composite_b: CompositePartition

    def composite(self, label: str) -> CompositePartition:
        return self.composite_a if label == "A" else self.composite_b

    def with_epsilon(self, epsilon: float) -> "ProblemData":
        return ProblemData(
            self.mu, self.nu, self.cost, epsilon,
            self.basic, self.composite_a, self.composite_b,
        )


@dataclass(frozen=True)
class MultiscaleLayer:
    level: int
    geometry: GridGeometry
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    basic: BasicPartition
    composite_a: CompositePartition
    composite_b: CompositePartition
    cost: CostOracle

    def problem(self, epsilon: float) -> ProblemData:
        return ProblemData(
            self.mu, self.nu, self.cost, epsilon,
            self.basic, self.composite_a, self.composite_b,
        )


@dataclass(frozen=True)
class MultiscaleHierarchy:
    """
    Dyadic layers ``min_level..max_level``.

    ``point_parent[l]`` maps layer-l pixels to their layer-(l-1) parent and
    ``cell_parent[l]`` does the same for basic cells.
    """

    layers: Dict[int, MultiscaleLayer]
    point_parent: Dict[int, np.ndarray]
    cell_parent: Dict[int, np.ndarray]

    @property
    def levels(self) -> List[int]:
        return sorted(self.layers)

    @property
    def finest(self) -> MultiscaleLayer:
        return self.layers[max(self.layers)]

    @property
    def coarsest(self) -> MultiscaleLayer:
        return self.layers[min(self.layers)]


@dataclass(frozen=True)
class Stage:
    layer: int
    epsilon: float
    sweeps: int


@dataclass(frozen=True)
class Schedule:
    stages: Tuple[Stage, ...]

    @property
    def total_sweeps(self) -> int:
        return sum(s.sweeps for s in self.stages)

    @property
    def layers(self) -> List[int]:
        return sorted({s.layer for s in self.stages})

    def for_layer(self, layer: int) -> List[Stage]:
        return [s for s in self.stages if s.layer == layer]

    def epsilons(self) -> List[float]:
        """Distinct epsilon values in schedule order."""
        seen: List[float] = []
        for s in self.stages:
            if not seen or seen[-1] != s.epsilon:
                seen.append(s.epsilon)
        return seen


@dataclass(frozen=True)
class WorstCaseInstance:
    """Small dense instance with a prescribed initial coupling."""

    name: str
    cost_matrix: np.ndarray
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    initial_coupling: np.ndarray
    basic: BasicPartition
    composite_a: CompositePartition
    composite_b: CompositePartition
    epsilon: float
    q: Optional[float] = None

    @property
    def cost(self) -> CostOracle:
        return CostOracle.dense(self.cost_matrix)

    @property
    def cost_norm(self) -> float:
        return float(self.cost_matrix.max())

    @property
    def num_cells(self) -> int:
        return self.basic.num_cells

    def problem(self, epsilon: Optional[float] = None) -> ProblemData:
        return ProblemData(
            self.mu, self.nu, self.cost,
            self.epsilon if epsilon is None else epsilon,
            self.basic, self.composite_a, self.composite_b,
        )

"""
Partition value types: basic cells, composite cells and the partition graph.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

LABELS = ("A", "B")


@dataclass(frozen=True)
class BasicPartition:
    """Disjoint cells X_i covering the X index set."""

    cells: Tuple[np.ndarray, ...]
    cell_masses: np.ndarray
    cell_size: Optional[int] = None
    # number of basic cells per grid axis, None for chains and intervals
    grid_shape: Optional[Tuple[int, int]] = None

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_points(self) -> int:
        return int(sum(len(c) for c in self.cells))

    def cell_of(self) -> np.ndarray:
        """Map from X index to basic cell id."""
        owner = np.empty(self.num_points, dtype=np.int64)
        for i, cell in enumerate(self.cells):
            owner[cell] = i
        return owner

    def cell_position(self, cell: int) -> Tuple[int, int]:
        """(row, col) of a grid basic cell; chains are laid out as one row."""
        if self.grid_shape is None:
            return (0, cell)
        return divmod(cell, self.grid_shape[1])


@dataclass(frozen=True)
class CompositePartition:
    """Partition of the basic-cell ids into composite cells, labelled A or B."""

    label: str
    groups: Tuple[Tuple[int, ...], ...]

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def group_of(self, num_cells: int) -> np.ndarray:
        owner = np.full(num_cells, -1, dtype=np.int64)
        for g, group in enumerate(self.groups):
            owner[list(group)] = g
        return owner

    def points(self, basic: BasicPartition, group: int) -> np.ndarray:
        """Sorted X indices of composite cell ``group``."""
        return np.sort(np.concatenate([basic.cells[i] for i in self.groups[group]]))


@dataclass(frozen=True)
class PartitionGraph:
    """Graph on basic cells joined whenever they share a composite cell."""

    num_vertices: int
    edges: Tuple[Tuple[int, int, str, int], ...]
    root: Tuple[int, ...]
    distances: np.ndarray
    composite_a: CompositePartition
    composite_b: CompositePartition

    @property
    def diameter(self) -> int:
        return int(self.distances.max()) if self.distances.size else 0

    def is_three_cell(self) -> bool:
        """True for the {{1,2},{3}} / {{1},{2,3}} arrangement on three cells."""
        return (
            self.num_vertices == 3
            and self.composite_a.groups == ((0, 1), (2,))
            and self.composite_b.groups == ((0,), (1, 2))
        )


@dataclass(frozen=True)
class RateBounds:
    """Contraction-factor bounds for one partition graph and epsilon."""

    three_cell: Optional[float]
    n_cell: float
    # 1 - n_cell, evaluated without cancellation
    n_cell_gap: float
    vacuous: bool
    diameter: int
    num_cells: int
    min_cell_mass: float

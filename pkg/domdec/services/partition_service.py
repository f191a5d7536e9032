"""
Construction of basic/composite partitions, the partition graph and the
contraction-rate bounds derived from it.
"""

import math
from itertools import combinations, product
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.special import expit

from domdec.core.errors import ConfigurationError, ValidationError
from domdec.models.measures import DiscreteMeasure, GridGeometry
from domdec.models.partition import (
    BasicPartition,
    CompositePartition,
    PartitionGraph,
    RateBounds,
)
from domdec.utils.logger import LoggerFactory

logger = LoggerFactory.get_logger(__name__)

# largest exponent for which exp() stays finite in double precision
MAX_EXPONENT = 709.0


def _pairs_from(start: int, count: int) -> List[Tuple[int, ...]]:
    """Consecutive pairs of ``start..count-1``, trailing singleton if odd."""
    groups = [tuple(range(k, min(k + 2, count))) for k in range(start, count, 2)]
    return groups


def _a_runs(count: int) -> List[Tuple[int, ...]]:
    return _pairs_from(0, count)


def _b_runs(count: int) -> List[Tuple[int, ...]]:
    return [(0,)] + _pairs_from(1, count) if count > 1 else [(0,)]


def validate_partitions(
    basic: BasicPartition, a: CompositePartition, b: CompositePartition
) -> None:
    """
    Check cover/disjointness of all partitions and A/B exclusivity.

    Raises:
        ConfigurationError: If any partition is malformed
    """
    owner = np.zeros(basic.num_points, dtype=np.int64)
    for cell in basic.cells:
        owner[cell] += 1
    if np.any(owner != 1):
        raise ConfigurationError("basic cells must be disjoint and cover all points")

    for composite in (a, b):
        seen = sorted(i for group in composite.groups for i in group)
        if seen != list(range(basic.num_cells)):
            raise ConfigurationError(
                f"composite partition {composite.label} does not partition the basic cells"
            )

    group_a = a.group_of(basic.num_cells)
    for group in b.groups:
        owners = group_a[list(group)]
        if len(set(owners.tolist())) != len(owners):
            raise ConfigurationError(
                "two basic cells share both an A-group and a B-group"
            )


def _basic_from_cells(
    cells: Sequence[np.ndarray],
    mu: DiscreteMeasure,
    cell_size: Optional[int] = None,
    grid_shape: Optional[Tuple[int, int]] = None,
) -> BasicPartition:
    cells = tuple(np.asarray(c, dtype=np.int64) for c in cells)
    masses = np.array([float(np.sum(mu.weights[c])) for c in cells])
    empty = np.flatnonzero(masses <= 0)
    if empty.size:
        raise ValidationError(
            f"basic cells {empty.tolist()} carry no mass; apply the mass floor at ingestion"
        )
    return BasicPartition(cells, masses, cell_size, grid_shape)


def build_grid_partitions(
    geometry: GridGeometry, mu: DiscreteMeasure, cell_size: int
) -> Tuple[BasicPartition, CompositePartition, CompositePartition]:
    """
    Square basic cells of ``cell_size`` pixels, A-groups of 2x2 basic cells and
    B-groups offset by one basic cell in each direction.

    Raises:
        ConfigurationError: If cell_size does not divide the side or yields a
            single basic cell
        ValidationError: If a basic cell has zero mass
    """
    side = geometry.side
    if cell_size <= 0 or side % cell_size != 0:
        raise ConfigurationError(f"cell size {cell_size} does not divide side {side}")
    per_axis = side // cell_size
    if per_axis < 2:
        raise ConfigurationError(
            f"cell size {cell_size} leaves a single basic cell on a {side}x{side} grid"
        )
    if mu.size != geometry.size:
        raise ConfigurationError("measure is not aligned with the grid")

    pixel = np.arange(geometry.size).reshape(side, side)
    cells = [
        pixel[br * cell_size:(br + 1) * cell_size, bc * cell_size:(bc + 1) * cell_size].ravel()
        for br in range(per_axis)
        for bc in range(per_axis)
    ]
    basic = _basic_from_cells(cells, mu, cell_size, (per_axis, per_axis))

    def tiling(runs: List[Tuple[int, ...]], label: str) -> CompositePartition:
        groups = tuple(
            tuple(sorted(r * per_axis + c for r in row_run for c in col_run))
            for row_run, col_run in product(runs, runs)
        )
        return CompositePartition(label, groups)

    a = tiling(_a_runs(per_axis), "A")
    b = tiling(_b_runs(per_axis), "B")
    validate_partitions(basic, a, b)
    logger.debug(
        "Grid partitions: side=%d s=%d cells=%d |A|=%d |B|=%d",
        side, cell_size, basic.num_cells, a.num_groups, b.num_groups,
    )
    return basic, a, b


def build_interval_partitions(
    mu: DiscreteMeasure, boundaries: Sequence[int]
) -> Tuple[BasicPartition, CompositePartition, CompositePartition]:
    """
    Contiguous basic cells split at ``boundaries``, grouped like a chain.

    Raises:
        ConfigurationError: If boundaries are not strictly increasing inside
            the index range or yield fewer than three cells
    """
    edges = [0] + [int(b) for b in boundaries] + [mu.size]
    if any(lo >= hi for lo, hi in zip(edges, edges[1:])):
        raise ConfigurationError(f"invalid interval boundaries {list(boundaries)}")
    count = len(edges) - 1
    if count < 3:
        raise ConfigurationError(f"chains need at least 3 cells, got {count}")
    cells = [np.arange(lo, hi) for lo, hi in zip(edges, edges[1:])]
    basic = _basic_from_cells(cells, mu)
    a = CompositePartition("A", tuple(_a_runs(count)))
    b = CompositePartition("B", tuple(_b_runs(count)))
    validate_partitions(basic, a, b)
    return basic, a, b


def build_chain_partitions(
    n: int, mu: Optional[DiscreteMeasure] = None
) -> Tuple[BasicPartition, CompositePartition, CompositePartition]:
    """
    Singleton basic cells 0..n-1 with interleaved pairings.

    A pairs from 0 (last singleton for odd n); B is {0}, pairs from 1 and a
    last singleton for even n.
    """
    if n < 3:
        raise ConfigurationError(f"chains need n >= 3, got {n}")
    if mu is None:
        mu = DiscreteMeasure(np.full(n, 1.0 / n))
    return build_interval_partitions(mu, list(range(1, n)))


def build_partition_graph(
    basic: BasicPartition,
    a: CompositePartition,
    b: CompositePartition,
    root: Optional[Sequence[int]] = None,
) -> PartitionGraph:
    """
    Edges between basic cells sharing a composite cell, and breadth-first
    distances to the root composite cell.

    Raises:
        ValidationError: If the graph is disconnected
    """
    n = basic.num_cells
    root = tuple(a.groups[0] if root is None else sorted(root))
    edges = []
    for composite in (a, b):
        for g, group in enumerate(composite.groups):
            for i, j in combinations(group, 2):
                edges.append((i, j, composite.label, g))

    if edges:
        src = np.array([e[0] for e in edges])
        dst = np.array([e[1] for e in edges])
        adjacency = sparse.coo_matrix(
            (np.ones(len(edges)), (src, dst)), shape=(n, n)
        ).tocsr()
    else:
        adjacency = sparse.csr_matrix((n, n))

    components, _ = connected_components(adjacency, directed=False)
    if components > 1:
        raise ValidationError(
            f"partition graph has {components} components; convergence is not guaranteed"
        )

    dist = shortest_path(adjacency, directed=False, unweighted=True, indices=list(root))
    distances = np.atleast_2d(dist).min(axis=0).astype(np.int64)
    return PartitionGraph(n, tuple(edges), root, distances, a, b)


def rate_bounds(
    graph: PartitionGraph, masses: np.ndarray, c_norm: float, eps: float
) -> RateBounds:
    """
    Contraction-factor upper bounds for the three-cell and the n-cell case.

    The three-cell bound is only defined for the three-cell arrangement. The
    n-cell bound is evaluated in log space; when its exponential overflows the
    bound is reported as 1 and flagged vacuous.
    """
    if eps <= 0:
        raise ConfigurationError(f"epsilon must be positive, got {eps}")
    masses = np.asarray(masses, dtype=np.float64)

    three = None
    if graph.is_three_cell():
        ratio = masses[1] / (masses[0] + masses[2])
        three = 1.0 / (1.0 + math.exp(-2.0 * c_norm / eps) * ratio)

    n_cells = graph.num_vertices
    diameter = graph.diameter
    mu_min = float(masses.min())
    if diameter == 0:
        return RateBounds(three, 0.0, 1.0, False, 0, n_cells, mu_min)

    exponent = (6 * diameter + 7) * c_norm / eps
    log_num = math.log(2 * diameter * n_cells) + exponent
    log_den_extra = (2 * diameter + 1) * math.log(mu_min)
    gap = float(expit(log_den_extra - log_num))
    vacuous = exponent > MAX_EXPONENT
    bound = 1.0 if vacuous else float(expit(log_num - log_den_extra))
    if vacuous:
        logger.warning(
            "n-cell bound is vacuous (exponent %.1f exceeds double range)", exponent
        )
    return RateBounds(three, bound, gap, vacuous, diameter, n_cells, mu_min)

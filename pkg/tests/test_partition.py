import math

import numpy as np
import pytest

from domdec.core.errors import ConfigurationError, ValidationError
from domdec.models.measures import DiscreteMeasure, GridGeometry
from domdec.models.partition import BasicPartition, CompositePartition
from domdec.services.partition_service import (
    build_chain_partitions,
    build_grid_partitions,
    build_interval_partitions,
    build_partition_graph,
    rate_bounds,
)


def _uniform(side: int) -> DiscreteMeasure:
    return DiscreteMeasure(np.full(side * side, 1.0 / side ** 2), GridGeometry(side))


class TestGridPartitions:
    def test_counts_and_group_sizes(self):
        basic, a, b = build_grid_partitions(GridGeometry(8), _uniform(8), 2)
        assert basic.num_cells == 16
        assert a.num_groups == 4
        assert all(len(g) == 4 for g in a.groups)
        assert b.num_groups == 9
        assert sorted(len(g) for g in b.groups) == [1, 1, 1, 1, 2, 2, 2, 2, 4]
        assert basic.cell_masses.sum() == pytest.approx(1.0)

    def test_cells_are_square_blocks(self):
        basic, _, _ = build_grid_partitions(GridGeometry(8), _uniform(8), 4)
        assert basic.cells[1].tolist() == [4, 5, 6, 7, 12, 13, 14, 15, 20, 21, 22, 23, 28, 29, 30, 31]
        assert basic.cell_position(3) == (1, 1)

    def test_cell_size_must_divide_side(self):
        with pytest.raises(ConfigurationError):
            build_grid_partitions(GridGeometry(8), _uniform(8), 3)

    def test_single_cell_rejected(self):
        with pytest.raises(ConfigurationError):
            build_grid_partitions(GridGeometry(8), _uniform(8), 8)

    def test_zero_mass_cell_rejected(self):
        weights = np.ones(64)
        weights[:4] = 0.0
        weights[8:12] = 0.0
        weights[16:20] = 0.0
        weights[24:28] = 0.0
        mu = DiscreteMeasure(weights, GridGeometry(8))
        with pytest.raises(ValidationError):
            build_grid_partitions(GridGeometry(8), mu, 4)


class TestChainPartitions:
    def test_four_cells(self):
        basic, a, b = build_chain_partitions(4)
        assert a.groups == ((0, 1), (2, 3))
        assert b.groups == ((0,), (1, 2), (3,))
        assert basic.cell_masses.tolist() == [0.25] * 4

    def test_too_short(self):
        with pytest.raises(ConfigurationError):
            build_chain_partitions(2)

    def test_interval_boundaries(self):
        mu = DiscreteMeasure(np.full(128, 1.0 / 128))
        basic, a, b = build_interval_partitions(mu, (48, 80))
        assert [c.size for c in basic.cells] == [48, 32, 48]
        assert basic.cell_masses[1] == pytest.approx(0.25)

    def test_interval_boundaries_must_increase(self):
        mu = DiscreteMeasure(np.full(16, 1.0 / 16))
        with pytest.raises(ConfigurationError):
            build_interval_partitions(mu, (8, 4))


class TestPartitionGraph:
    def test_chain_distances(self):
        graph = build_partition_graph(*build_chain_partitions(4))
        assert graph.distances.tolist() == [0, 0, 1, 2]
        assert graph.diameter == 2

    def test_three_cell_arrangement(self):
        graph = build_partition_graph(*build_chain_partitions(3))
        assert graph.is_three_cell()
        assert graph.diameter == 1

    def test_disconnected_graph_rejected(self):
        cells = tuple(np.array([i]) for i in range(3))
        basic = BasicPartition(cells, np.full(3, 1.0 / 3))
        a = CompositePartition("A", ((0,), (1, 2)))
        b = CompositePartition("B", ((0,), (1,), (2,)))
        with pytest.raises(ValidationError):
            build_partition_graph(basic, a, b)


class TestRateBounds:
    def test_three_cell_formula(self):
        basic, a, b = build_chain_partitions(3, DiscreteMeasure(np.array([0.35, 0.3, 0.35])))
        bounds = rate_bounds(build_partition_graph(basic, a, b), basic.cell_masses, 10.0, 2.0)
        expected = 1.0 / (1.0 + math.exp(-10.0) * 0.3 / 0.7)
        assert bounds.three_cell == pytest.approx(expected, rel=1e-14)

    def test_n_cell_bound_tightens_with_epsilon(self):
        basic, a, b = build_chain_partitions(4)
        graph = build_partition_graph(basic, a, b)
        coarse = rate_bounds(graph, basic.cell_masses, 10.0, 2.0)
        fine = rate_bounds(graph, basic.cell_masses, 10.0, 1.4)
        assert coarse.diameter == 2
        assert 0.0 < fine.n_cell_gap < coarse.n_cell_gap < 1.0
        assert fine.three_cell is None
        assert not fine.vacuous

    def test_vacuous_bound_flagged(self):
        basic, a, b = build_chain_partitions(16)
        graph = build_partition_graph(basic, a, b)
        bounds = rate_bounds(graph, basic.cell_masses, 10.0, 0.1)
        assert bounds.vacuous
        assert bounds.n_cell == 1.0

    def test_non_positive_epsilon(self):
        graph = build_partition_graph(*build_chain_partitions(3))
        with pytest.raises(ConfigurationError):
            rate_bounds(graph, np.full(3, 1.0 / 3), 10.0, 0.0)

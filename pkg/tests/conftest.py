import numpy as np
import pytest

from domdec.core.config import SinkhornConfig, domdec_config
from domdec.models.measures import CostOracle, DiscreteMeasure, GridGeometry
from domdec.models.state import ProblemData
from domdec.services.domdec_service import DomainDecompositionSolver
from domdec.services.executor import TaskRunner
from domdec.services.image_service import generate_image
from domdec.services.partition_service import build_grid_partitions


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid_pair():
    """A seeded 16x16 image pair."""
    return generate_image(16, seed=3), generate_image(16, seed=4)


def make_grid_problem(mu: DiscreteMeasure, nu: DiscreteMeasure, cell_size: int, epsilon: float):
    basic, a, b = build_grid_partitions(mu.geometry, mu, cell_size)
    return ProblemData(mu, nu, CostOracle.squared_euclidean(mu.geometry), epsilon, basic, a, b)


@pytest.fixture
def grid_problem(grid_pair):
    mu, nu = grid_pair
    return make_grid_problem(mu, nu, 4, 4.0)


def make_engine(problem: ProblemData, workers: int = 1, err: float = 1e-10):
    sinkhorn = SinkhornConfig.oracle().with_overrides(err=err)
    config = domdec_config.with_overrides(workers=workers)
    return DomainDecompositionSolver(problem, sinkhorn, config, TaskRunner(workers))


@pytest.fixture
def small_dense(rng):
    """Random dense 4x5 problem without geometry."""
    mu = DiscreteMeasure(rng.uniform(0.5, 1.5, 4)).normalized()
    nu = DiscreteMeasure(rng.uniform(0.5, 1.5, 5)).normalized()
    cost = CostOracle.dense(rng.uniform(0.0, 2.0, (4, 5)))
    return mu, nu, cost


@pytest.fixture
def unit_geometry():
    return GridGeometry(8)

"""
Multiscale hierarchy, coarse-to-fine refinement and the epsilon schedule.
"""

from typing import Dict

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from domdec.core.errors import ConfigurationError, StructuralError
from domdec.models.measures import CostOracle, DiscreteMeasure, GridGeometry, SparseMarginal
from domdec.models.state import (
    CellState,
    MultiscaleHierarchy,
    MultiscaleLayer,
    Schedule,
    Stage,
)
from domdec.services.dualglue_service import build_glue_graph, glue_x_potential, helmholtz_fit
from domdec.services.partition_service import build_grid_partitions
from domdec.utils.logger import LoggerFactory

logger = LoggerFactory.get_logger(__name__)

MIN_LEVEL = 3


def coarsen(image: np.ndarray) -> np.ndarray:
    """Sum 2x2 pixel blocks."""
    half = image.shape[0] // 2
    return image.reshape(half, 2, half, 2).sum(axis=(1, 3))


def layer_cell_size(level: int, cell_size: int) -> int:
    """Cell size used at ``level``: never more than half the side."""
    side = 2 ** level
    return cell_size if side >= 2 * cell_size else side // 2


def point_parents(fine_side: int) -> np.ndarray:
    """Coarse parent pixel of every fine pixel (flat row-major)."""
    r, c = np.divmod(np.arange(fine_side * fine_side), fine_side)
    return (r // 2) * (fine_side // 2) + c // 2


def build_hierarchy(
    mu: DiscreteMeasure, nu: DiscreteMeasure, cell_size: int
) -> MultiscaleHierarchy:
    """
    Layers from 8x8 up to the input resolution with partitions per layer.

    Raises:
        ConfigurationError: If the images are smaller than 8x8 or differ in size
    """
    if mu.geometry is None or nu.geometry is None:
        raise ConfigurationError("multiscale solving needs grid measures")
    if mu.geometry.side != nu.geometry.side:
        raise ConfigurationError(
            f"image sides differ: {mu.geometry.side} vs {nu.geometry.side}"
        )
    finest = mu.geometry.level
    if finest < MIN_LEVEL:
        raise ConfigurationError(f"images must be at least 8x8, got side {mu.geometry.side}")

    mu_img, nu_img = mu.as_image(), nu.as_image()
    layers: Dict[int, MultiscaleLayer] = {}
    for level in range(finest, MIN_LEVEL - 1, -1):
        geometry = GridGeometry(2 ** level, float(2 ** (finest - level)))
        mu_l = DiscreteMeasure(mu_img.ravel(), geometry)
        nu_l = DiscreteMeasure(nu_img.ravel(), geometry)
        basic, comp_a, comp_b = build_grid_partitions(
            geometry, mu_l, layer_cell_size(level, cell_size)
        )
        layers[level] = MultiscaleLayer(
            level, geometry, mu_l, nu_l, basic, comp_a, comp_b,
            CostOracle.squared_euclidean(geometry),
        )
        if level > MIN_LEVEL:
            mu_img, nu_img = coarsen(mu_img), coarsen(nu_img)

    point_parent, cell_parent = {}, {}
    for level in range(MIN_LEVEL + 1, finest + 1):
        fine, coarse = layers[level], layers[level - 1]
        pa = point_parents(fine.geometry.side)
        coarse_owner = coarse.basic.cell_of()
        parents = np.array([coarse_owner[pa[cell[0]]] for cell in fine.basic.cells])
        for i, cell in enumerate(fine.basic.cells):
            if np.any(coarse_owner[pa[cell]] != parents[i]):
                raise StructuralError(
                    f"fine cell {i} at level {level} straddles coarse cells"
                )
        point_parent[level] = pa
        cell_parent[level] = parents

    logger.info(
        "Hierarchy: levels %d..%d, finest side %d", MIN_LEVEL, finest, mu.geometry.side
    )
    return MultiscaleHierarchy(layers, point_parent, cell_parent)


def build_schedule(n: int) -> Schedule:
    """
    Per layer: (2 dx^2, 4 sweeps), (dx^2, 2), (dx^2 / 2, 2), plus (0.25, 2) on
    the finest layer, with dx = 2^(n - layer).
    """
    if n < MIN_LEVEL:
        raise ConfigurationError(f"schedule needs n >= {MIN_LEVEL}, got {n}")
    stages = []
    for level in range(MIN_LEVEL, n + 1):
        dx2 = float(4 ** (n - level))
        stages.extend(
            [Stage(level, 2.0 * dx2, 4), Stage(level, dx2, 2), Stage(level, 0.5 * dx2, 2)]
        )
    stages.append(Stage(n, 0.25, 2))
    return Schedule(tuple(stages))


def refine_marginals(
    coarse_state: CellState, hierarchy: MultiscaleHierarchy, fine_level: int
) -> CellState:
    """
    Fine basic marginals
    ``nu_i(y) = nu(y) * nuhat_j(pa y) / nuhat(pa y) * mu(X_i) / muhat(X_j)``
    with ``j`` the coarse parent cell of ``i`` and 0/0 read as 0.

    The denominator ``nuhat`` is the sum of the coarse basic marginals, which
    keeps ``sum_i nu_i = nu`` exact.
    """
    fine = hierarchy.layers[fine_level]
    coarse = hierarchy.layers[fine_level - 1]
    parents = hierarchy.cell_parent[fine_level]
    fine_side = fine.geometry.side
    coarse_side = coarse.geometry.side
    nu_fine = fine.nu.weights
    coarse_total = coarse_state.y_marginal(coarse.nu.size)

    children_of = {}
    for j, marginal in coarse_state.basic_marginals.items():
        r, c = np.divmod(marginal.indices, coarse_side)
        offsets = np.array([0, 1, fine_side, fine_side + 1])
        children = ((2 * r) * fine_side + 2 * c)[:, None] + offsets[None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(
                coarse_total[marginal.indices] > 0,
                marginal.values / coarse_total[marginal.indices],
                0.0,
            )
        values = nu_fine[children] * ratio[:, None]
        children_of[j] = (children.ravel(), values.ravel())

    marginals = {}
    for i in range(fine.basic.num_cells):
        j = int(parents[i])
        factor = fine.basic.cell_masses[i] / coarse.basic.cell_masses[j]
        indices, values = children_of[j]
        keep = values > 0
        marginals[i] = SparseMarginal(indices[keep], factor * values[keep])
    return CellState(basic_marginals=marginals, epsilon=coarse_state.epsilon)


def interpolate_potential(
    coarse_alpha: np.ndarray, coarse: GridGeometry, fine: GridGeometry
) -> np.ndarray:
    """Bilinear interpolation of a coarse grid potential onto fine points."""
    axis = np.arange(coarse.side) * coarse.spacing
    interpolator = RegularGridInterpolator(
        (axis, axis),
        coarse_alpha.reshape(coarse.side, coarse.side),
        method="linear",
        bounds_error=False,
        fill_value=None,
    )
    return interpolator(fine.coordinates())


def refine_potentials(
    coarse_state: CellState, hierarchy: MultiscaleHierarchy, fine_level: int
) -> Dict[str, Dict[int, np.ndarray]]:
    """
    Glue the coarse potentials, interpolate them onto the fine grid and cut
    the result into warm starts for every fine composite cell.
    """
    fine = hierarchy.layers[fine_level]
    coarse = hierarchy.layers[fine_level - 1]
    data = coarse.problem(coarse_state.epsilon)
    fit = helmholtz_fit(build_glue_graph(coarse_state, data))
    alpha = interpolate_potential(
        glue_x_potential(coarse_state, fit, data), coarse.geometry, fine.geometry
    )
    potentials = {}
    for composite in (fine.composite_a, fine.composite_b):
        potentials[composite.label] = {
            g: alpha[composite.points(fine.basic, g)]
            for g in range(composite.num_groups)
        }
    return potentials


def refine_state(
    coarse_state: CellState, hierarchy: MultiscaleHierarchy, fine_level: int
) -> CellState:
    """Fine state with refined marginals and interpolated warm starts."""
    state = refine_marginals(coarse_state, hierarchy, fine_level)
    state.potentials = refine_potentials(coarse_state, hierarchy, fine_level)
    return state

"""
Image ingestion, seeded test-image generation and colored-cell rendering.
"""

import os
from typing import Optional, Tuple

import numpy as np

from domdec.core.config import domdec_config
from domdec.core.errors import ConfigurationError, ValidationError
from domdec.models.measures import DiscreteMeasure
from domdec.models.partition import BasicPartition
from domdec.models.state import CellState
from domdec.utils.file_handler import FileHandler
from domdec.utils.logger import LoggerFactory
from domdec.utils.validators import InputValidator

logger = LoggerFactory.get_logger(__name__)

# checkerboard colors indexed by (cell row parity, cell column parity)
DEFAULT_PALETTE = np.array(
    [
        [[230, 60, 50], [40, 120, 220]],
        [[250, 200, 40], [60, 180, 90]],
    ],
    dtype=np.float64,
)


def _next_power_of_two(value: int) -> int:
    return 1 << max(0, int(value - 1).bit_length())


def ingest_image(
    path: str,
    fmt: Optional[str] = None,
    pad: bool = False,
    mass_floor: Optional[float] = None,
) -> DiscreteMeasure:
    """
    Read a CSV or binary PGM image as a probability measure on its grid.

    Args:
        path: Image file
        fmt: ``csv`` or ``pgm``; inferred from the extension when omitted
        pad: Zero-pad to the next power-of-two square instead of rejecting
        mass_floor: Total floor mass spread uniformly before renormalizing

    Raises:
        ValidationError: On unreadable files, negative pixels or zero mass
        ConfigurationError: If the image is not a power-of-two square and
            padding was not requested
    """
    fmt = (fmt or os.path.splitext(path)[1].lstrip(".")).lower()
    if fmt == "csv":
        pixels = FileHandler.read_csv_image(path)
    elif fmt == "pgm":
        pixels = FileHandler.read_pgm_image(path)
    else:
        raise ConfigurationError(f"unsupported image format {fmt!r} (csv or pgm)")
    InputValidator.require_nonnegative_image(pixels)

    height, width = pixels.shape
    side = _next_power_of_two(max(height, width))
    if (height, width) != (side, side):
        if not pad:
            raise ConfigurationError(
                f"{path}: {height}x{width} is not a power-of-two square; use --pad"
            )
        padded = np.zeros((side, side))
        padded[:height, :width] = pixels
        logger.info("Padded %s from %dx%d to %dx%d", path, height, width, side, side)
        pixels = padded

    if pixels.sum() <= 0:
        raise ValidationError(f"{path} has zero total mass")
    floor = domdec_config.mass_floor if mass_floor is None else mass_floor
    return DiscreteMeasure.from_image(pixels).with_floor(floor)


def generate_image(
    side: int,
    seed: int,
    components: Optional[int] = None,
    mass_floor: Optional[float] = None,
    sd_range: Optional[Tuple[float, float]] = None,
) -> DiscreteMeasure:
    """
    Seeded Gaussian-mixture density sampled on a ``side`` x ``side`` grid.

    Component count defaults to a draw from 5..15; centers are uniform on the
    grid, per-axis standard deviations uniform in ``sd_range`` (default
    ``[side/32, side/6]``) and magnitudes log-uniform in [0.1, 1].
    """
    InputValidator.require_power_of_two(side, "side")
    rng = np.random.default_rng(seed)
    if components is None:
        components = int(rng.integers(5, 16))
    if components < 1:
        raise ConfigurationError(f"components must be >= 1, got {components}")
    lo, hi = sd_range or (side / 32.0, side / 6.0)

    centers = rng.uniform(0.0, side, size=(components, 2))
    sds = rng.uniform(lo, hi, size=(components, 2))
    magnitudes = np.exp(rng.uniform(np.log(0.1), np.log(1.0), size=components))

    axis = np.arange(side, dtype=np.float64)
    image = np.zeros((side, side))
    for (cr, cc), (sr, sc), m in zip(centers, sds, magnitudes):
        rows = np.exp(-0.5 * ((axis - cr) / sr) ** 2)
        cols = np.exp(-0.5 * ((axis - cc) / sc) ** 2)
        image += m * np.outer(rows, cols)

    floor = domdec_config.mass_floor if mass_floor is None else mass_floor
    logger.debug("Generated %dx%d image with %d components (seed %d)", side, side, components, seed)
    return DiscreteMeasure.from_image(image).with_floor(floor)


def cell_colors(basic: BasicPartition, palette: Optional[np.ndarray] = None) -> np.ndarray:
    """(num_cells, 3) colors alternating over the basic-cell grid."""
    palette = DEFAULT_PALETTE if palette is None else np.asarray(palette, dtype=np.float64)
    colors = np.empty((basic.num_cells, 3))
    for i in range(basic.num_cells):
        br, bc = basic.cell_position(i)
        colors[i] = palette[br % 2, bc % 2]
    return colors


def render_cells(
    state: CellState,
    basic: BasicPartition,
    nu: DiscreteMeasure,
    palette: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Color every Y-pixel by ``sum_i col_i * nu_i(y) / nu(y)``; pixels without
    nu-mass are black.

    Returns:
        (H, W, 3) uint8 image; measures without a grid become a one-row stripe
    """
    colors = cell_colors(basic, palette)
    blend = np.zeros((nu.size, 3))
    for i in range(basic.num_cells):
        m = state.basic_marginals[i]
        blend[m.indices] += m.values[:, None] * colors[i][None, :]

    weights = nu.weights
    rgb = np.zeros((nu.size, 3))
    positive = weights > 0
    rgb[positive] = blend[positive] / weights[positive, None]
    rgb = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    if nu.geometry is None:
        return rgb.reshape(1, nu.size, 3)
    return rgb.reshape(nu.geometry.side, nu.geometry.side, 3)


def visualize(
    path: str,
    state: CellState,
    basic: BasicPartition,
    nu: DiscreteMeasure,
    palette: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Render the cell coloring and write it as PNG."""
    rgb = render_cells(state, basic, nu, palette)
    FileHandler.write_png(path, rgb)
    return rgb

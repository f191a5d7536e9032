import numpy as np
import pytest
from PIL import Image

from domdec.core.errors import ConfigurationError, ValidationError
from domdec.models.measures import DiscreteMeasure, GridGeometry, SparseMarginal
from domdec.models.state import CellState
from domdec.services.domdec_service import initialize_product_state
from domdec.services.image_service import (
    DEFAULT_PALETTE,
    cell_colors,
    generate_image,
    ingest_image,
    render_cells,
    visualize,
)
from domdec.services.partition_service import build_grid_partitions
from domdec.utils.file_handler import FileHandler


class TestIngest:
    def test_uniform_csv(self, tmp_path):
        path = tmp_path / "ones.csv"
        FileHandler.write_csv_image(str(path), np.ones((4, 4)))
        mu = ingest_image(str(path), mass_floor=0.0)
        np.testing.assert_allclose(mu.weights, np.full(16, 1 / 16))
        assert mu.geometry.side == 4

    def test_negative_pixel_reports_position(self, tmp_path):
        pixels = np.ones((4, 4))
        pixels[2, 1] = -0.5
        path = tmp_path / "neg.csv"
        FileHandler.write_csv_image(str(path), pixels)
        with pytest.raises(ValidationError, match="row 2, col 1"):
            ingest_image(str(path))

    def test_ragged_rows(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("1,2\n3\n")
        with pytest.raises(ValidationError, match="row 2"):
            ingest_image(str(path))

    def test_non_square_needs_padding(self, tmp_path):
        path = tmp_path / "wide.csv"
        FileHandler.write_csv_image(str(path), np.ones((3, 5)))
        with pytest.raises(ConfigurationError):
            ingest_image(str(path))
        mu = ingest_image(str(path), pad=True, mass_floor=0.0)
        assert mu.geometry.side == 8
        image = mu.as_image()
        assert image[:3, :5].sum() == pytest.approx(1.0)
        assert image[3:, :].sum() == 0.0

    def test_zero_mass(self, tmp_path):
        path = tmp_path / "zero.csv"
        FileHandler.write_csv_image(str(path), np.zeros((4, 4)))
        with pytest.raises(ValidationError):
            ingest_image(str(path))

    def test_pgm(self, tmp_path):
        pixels = np.arange(16, dtype=np.uint8).reshape(4, 4)
        path = tmp_path / "ramp.pgm"
        Image.fromarray(pixels).save(path, format="PPM")
        mu = ingest_image(str(path), mass_floor=0.0)
        np.testing.assert_allclose(mu.weights, np.arange(16) / 120.0)

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ingest_image(str(tmp_path / "img.tiff"))


class TestGenerate:
    def test_seeded_output_is_reproducible(self):
        first, second = generate_image(32, seed=11), generate_image(32, seed=11)
        np.testing.assert_array_equal(first.weights, second.weights)
        assert not np.array_equal(first.weights, generate_image(32, seed=12).weights)

    def test_probability_with_floor(self):
        mu = generate_image(16, seed=0, mass_floor=1e-3)
        assert mu.total_mass == pytest.approx(1.0)
        assert mu.weights.min() >= 1e-3 / 256 / (1 + 1e-3) * (1 - 1e-12)

    def test_single_wide_component_is_nearly_uniform(self):
        mu = generate_image(8, seed=1, components=1, sd_range=(1e6, 1e6 + 1))
        np.testing.assert_allclose(mu.weights, np.full(64, 1 / 64), rtol=1e-9)

    def test_invalid_arguments(self):
        with pytest.raises(ConfigurationError):
            generate_image(12, seed=0)
        with pytest.raises(ConfigurationError):
            generate_image(8, seed=0, components=0)


@pytest.fixture
def partition8():
    geometry = GridGeometry(8)
    mu = DiscreteMeasure(np.full(64, 1 / 64), geometry)
    basic, _, _ = build_grid_partitions(geometry, mu, 4)
    return mu, basic


class TestRender:
    def test_cell_colors_alternate(self, partition8):
        _, basic = partition8
        colors = cell_colors(basic)
        np.testing.assert_array_equal(colors[0], DEFAULT_PALETTE[0, 0])
        np.testing.assert_array_equal(colors[1], DEFAULT_PALETTE[0, 1])
        np.testing.assert_array_equal(colors[3], DEFAULT_PALETTE[1, 1])

    def test_product_state_blends_uniformly(self, partition8):
        mu, basic = partition8
        state = initialize_product_state(basic, mu)
        rgb = render_cells(state, basic, mu)
        expected = np.rint(cell_colors(basic).mean(axis=0)).astype(np.uint8)
        assert rgb.shape == (8, 8, 3)
        assert np.all(rgb == expected)

    def test_identity_state_shows_cells(self, partition8):
        mu, basic = partition8
        marginals = {
            i: SparseMarginal(cell, mu.weights[cell]) for i, cell in enumerate(basic.cells)
        }
        rgb = render_cells(CellState(marginals, 1.0), basic, mu)
        np.testing.assert_array_equal(rgb[0, 0], DEFAULT_PALETTE[0, 0])
        np.testing.assert_array_equal(rgb[0, 7], DEFAULT_PALETTE[0, 1])
        np.testing.assert_array_equal(rgb[7, 0], DEFAULT_PALETTE[1, 0])

    def test_empty_pixels_are_black(self, partition8):
        _, basic = partition8
        weights = np.full(64, 1 / 63)
        weights[9] = 0.0
        nu = DiscreteMeasure(weights, GridGeometry(8))
        state = initialize_product_state(basic, nu)
        rgb = render_cells(state, basic, nu)
        assert rgb[1, 1].tolist() == [0, 0, 0]
        assert rgb[0, 0].any()

    def test_png_written(self, partition8, tmp_path):
        mu, basic = partition8
        path = tmp_path / "out" / "cells.png"
        rgb = visualize(str(path), initialize_product_state(basic, mu), basic, mu)
        with Image.open(path) as img:
            assert img.size == (8, 8)
            np.testing.assert_array_equal(np.asarray(img), rgb)

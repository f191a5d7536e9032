"""
File handling utilities: images, reports, traces and coupling exports.
"""

import csv
import json
import os
from typing import Any, Dict, Iterable, Optional, Tuple

import numpy as np
from PIL import Image

from domdec.core.errors import ValidationError
from domdec.utils.logger import LoggerFactory

logger = LoggerFactory.get_logger(__name__)


class FileHandler:
    """Utility class for file operations."""

    @staticmethod
    def ensure_parent(path: str) -> None:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)

    @staticmethod
    def read_csv_image(path: str) -> np.ndarray:
        """
        Read a row-major CSV grid of decimal floats.

        Args:
            path: Path to the CSV file

        Returns:
            2D float array

        Raises:
            ValidationError: If the file cannot be parsed or rows are ragged
        """
        rows = []
        try:
            with open(path, newline="") as f:
                for line_no, row in enumerate(csv.reader(f), start=1):
                    if not row or all(not cell.strip() for cell in row):
                        continue
                    try:
                        rows.append([float(cell) for cell in row])
                    except ValueError as e:
                        raise ValidationError(f"{path}:{line_no}: {e}") from e
        except OSError as e:
            raise ValidationError(f"cannot read {path}: {e}") from e

        if not rows:
            raise ValidationError(f"{path} contains no pixel rows")
        width = len(rows[0])
        for line_no, row in enumerate(rows, start=1):
            if len(row) != width:
                raise ValidationError(
                    f"{path}: row {line_no} has {len(row)} columns, expected {width}"
                )
        return np.asarray(rows, dtype=np.float64)

    @staticmethod
    def write_csv_image(path: str, pixels: np.ndarray) -> None:
        """Write a 2D array as CSV with round-trippable float formatting."""
        FileHandler.ensure_parent(path)
        np.savetxt(path, pixels, delimiter=",", fmt="%.17g")
        logger.debug("Wrote %dx%d CSV image to %s", pixels.shape[0], pixels.shape[1], path)

    @staticmethod
    def read_pgm_image(path: str) -> np.ndarray:
        """
        Read a binary (P5) 8-bit PGM.

        Raises:
            ValidationError: If the file is not an 8-bit grayscale PGM
        """
        try:
            with Image.open(path) as img:
                if img.format != "PPM" or img.mode != "L":
                    raise ValidationError(
                        f"{path}: expected 8-bit binary PGM, got {img.format}/{img.mode}"
                    )
                return np.asarray(img, dtype=np.float64)
        except OSError as e:
            raise ValidationError(f"cannot read {path}: {e}") from e

    @staticmethod
    def write_png(path: str, rgb: np.ndarray) -> None:
        """Write an (H, W, 3) uint8 array as PNG."""
        FileHandler.ensure_parent(path)
        Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8), mode="RGB").save(
            path, format="PNG"
        )
        logger.info("Wrote visualization %s (%dx%d)", path, rgb.shape[1], rgb.shape[0])

    @staticmethod
    def write_json(path: str, payload: Dict[str, Any]) -> None:
        FileHandler.ensure_parent(path)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True, allow_nan=True)
            f.write("\n")
        logger.info("Wrote report %s", path)

    @staticmethod
    def read_json(path: str) -> Dict[str, Any]:
        with open(path, encoding="utf-8") as f:
            return json.load(f)

    @staticmethod
    def write_trace_csv(path: str, rows: Iterable[Tuple[int, float]]) -> None:
        """Write a convergence trace with header ``sweep,delta``."""
        FileHandler.ensure_parent(path)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["sweep", "delta"])
            for sweep, delta in rows:
                writer.writerow([int(sweep), repr(float(delta))])

    @staticmethod
    def write_coupling(
        path: str, rows: np.ndarray, cols: np.ndarray, masses: np.ndarray
    ) -> int:
        """
        Export a sparse coupling as ``i<TAB>j<TAB>mass`` lines (flat row-major indices).

        Returns:
            Number of lines written
        """
        FileHandler.ensure_parent(path)
        order = np.lexsort((cols, rows))
        with open(path, "w") as f:
            for k in order:
                f.write(f"{int(rows[k])}\t{int(cols[k])}\t{float(masses[k])!r}\n")
        logger.info("Exported %d coupling entries to %s", len(order), path)
        return len(order)

    @staticmethod
    def read_coupling(path: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        data = np.loadtxt(path, delimiter="\t", ndmin=2)
        if data.size == 0:
            empty = np.zeros(0)
            return empty.astype(np.int64), empty.astype(np.int64), empty
        return data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2]

    @staticmethod
    def output_path(directory: Optional[str], name: str) -> str:
        return os.path.join(directory or ".", name)

"""
Input validation helpers.
"""

import math
from typing import Iterable

import numpy as np

from domdec.core.errors import ConfigurationError, ValidationError


class InputValidator:
    """Utility class for parameter and data validation."""

    @staticmethod
    def is_power_of_two(value: int) -> bool:
        return value > 0 and (value & (value - 1)) == 0

    @staticmethod
    def require_power_of_two(value: int, name: str = "side") -> int:
        """
        Validate that an integer is a power of two.

        Raises:
            ConfigurationError: If the value is not a positive power of two
        """
        if not isinstance(value, (int, np.integer)) or not InputValidator.is_power_of_two(int(value)):
            raise ConfigurationError(f"{name} must be a power of two, got {value!r}")
        return int(value)

    @staticmethod
    def require_positive(value: float, name: str) -> float:
        if not (isinstance(value, (int, float, np.floating)) and math.isfinite(value) and value > 0):
            raise ConfigurationError(f"{name} must be a finite positive number, got {value!r}")
        return float(value)

    @staticmethod
    def require_open_unit(value: float, name: str) -> float:
        if not (math.isfinite(value) and 0.0 < value < 1.0):
            raise ConfigurationError(f"{name} must lie in (0, 1), got {value!r}")
        return float(value)

    @staticmethod
    def require_nonnegative_image(pixels: np.ndarray) -> np.ndarray:
        """
        Validate a 2D array of pixel weights.

        Raises:
            ValidationError: On non-finite or negative pixels, with row/col diagnostics
        """
        if pixels.ndim != 2:
            raise ValidationError(f"image must be two-dimensional, got shape {pixels.shape}")
        bad = ~np.isfinite(pixels)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValidationError(f"non-finite pixel at row {r}, col {c}")
        negative = pixels < 0
        if negative.any():
            r, c = np.argwhere(negative)[0]
            raise ValidationError(
                f"negative pixel {pixels[r, c]!r} at row {r}, col {c}"
            )
        return pixels

    @staticmethod
    def require_distinct(values: Iterable[int], name: str) -> None:
        seen = set()
        for v in values:
            if v in seen:
                raise ConfigurationError(f"{name} contains duplicate index {v}")
            seen.add(v)

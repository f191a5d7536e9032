"""
Value types for discrete measures on grids, costs and kernel blocks.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import sparse

from domdec.core.errors import (
    NumericallyInfeasibleError,
    StructuralError,
    ValidationError,
)
from domdec.utils.validators import InputValidator

# rows of the dense cost evaluated at once when building kernels
DEFAULT_CHUNK_ROWS = 256


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class GridGeometry:
    """Square Cartesian grid of ``side`` x ``side`` points with origin (0, 0)."""

    side: int
    spacing: float = 1.0

    def __post_init__(self):
        InputValidator.require_power_of_two(self.side, "side")
        InputValidator.require_positive(self.spacing, "spacing")

    @property
    def size(self) -> int:
        return self.side * self.side

    @property
    def level(self) -> int:
        return int(self.side).bit_length() - 1

    def point(self, index: int) -> Tuple[float, float]:
        r, c = divmod(int(index), self.side)
        return (r * self.spacing, c * self.spacing)

    def coordinates(self, indices: Optional[np.ndarray] = None) -> np.ndarray:
        """(k, 2) array of point coordinates for flat row-major indices."""
        if indices is None:
            indices = np.arange(self.size)
        indices = np.asarray(indices, dtype=np.int64)
        rows, cols = np.divmod(indices, self.side)
        return np.column_stack((rows, cols)).astype(np.float64) * self.spacing


@dataclass(frozen=True)
class DiscreteMeasure:
    """Nonnegative weights on a grid or on an abstract index set."""

    weights: np.ndarray
    geometry: Optional[GridGeometry] = None

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64).ravel()
        if not np.all(np.isfinite(weights)):
            raise ValidationError("measure weights must be finite")
        if np.any(weights < 0):
            raise ValidationError(
                f"measure weights must be nonnegative (min {weights.min()!r})"
            )
        if self.geometry is not None and weights.size != self.geometry.size:
            raise StructuralError(
                f"{weights.size} weights do not match a {self.geometry.side}x"
                f"{self.geometry.side} grid"
            )
        object.__setattr__(self, "weights", _frozen(weights))

    @property
    def size(self) -> int:
        return int(self.weights.size)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    def is_probability(self, tol: float = 1e-12) -> bool:
        return abs(self.total_mass - 1.0) <= tol

    def normalized(self) -> "DiscreteMeasure":
        total = self.total_mass
        if total <= 0:
            raise ValidationError("cannot normalize a measure with zero mass")
        return DiscreteMeasure(self.weights / total, self.geometry)

    def with_floor(self, floor: float) -> "DiscreteMeasure":
        """Normalize, add ``floor / size`` to every point, renormalize."""
        total = self.total_mass
        weights = self.weights / total if total > 0 else np.zeros_like(self.weights)
        weights = weights + floor / self.size
        return DiscreteMeasure(weights / np.sum(weights), self.geometry)

    def as_image(self) -> np.ndarray:
        if self.geometry is None:
            return self.weights.reshape(1, -1)
        return self.weights.reshape(self.geometry.side, self.geometry.side)

    @classmethod
    def from_image(cls, pixels: np.ndarray, spacing: float = 1.0) -> "DiscreteMeasure":
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
            raise ValidationError(f"image must be square, got shape {pixels.shape}")
        return cls(pixels.ravel(), GridGeometry(pixels.shape[0], spacing))


@dataclass(frozen=True)
class SparseMarginal:
    """Sparse Y-marginal: sorted unique indices with positive masses."""

    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64).ravel()
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if indices.size != values.size:
            raise StructuralError("marginal indices and values differ in length")
        if indices.size > 1 and np.any(np.diff(indices) <= 0):
            order = np.argsort(indices, kind="stable")
            indices, values = indices[order], values[order]
            if np.any(np.diff(indices) == 0):
                raise StructuralError("marginal indices must be unique")
        object.__setattr__(self, "indices", _frozen(indices))
        object.__setattr__(self, "values", _frozen(values))

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.values))

    @classmethod
    def from_dense(
        cls, dense: np.ndarray, support: Optional[np.ndarray] = None
    ) -> "SparseMarginal":
        """Keep the positive entries of ``dense`` (optionally given on ``support``)."""
        dense = np.asarray(dense, dtype=np.float64)
        keep = dense > 0
        if support is None:
            return cls(np.flatnonzero(keep), dense[keep])
        return cls(np.asarray(support)[keep], dense[keep])

    def to_dense(self, size: int) -> np.ndarray:
        dense = np.zeros(size)
        dense[self.indices] = self.values
        return dense

    def scaled(self, factor: float) -> "SparseMarginal":
        return SparseMarginal(self.indices, self.values * factor)


class CostOracle:
    """
    Transport cost between two point sets.

    Either the squared Euclidean distance between coordinate arrays, or an
    explicit dense matrix (worst-case instances).
    """

    def __init__(
        self,
        x_points: Optional[np.ndarray] = None,
        y_points: Optional[np.ndarray] = None,
        matrix: Optional[np.ndarray] = None,
    ):
        if matrix is None and (x_points is None or y_points is None):
            raise StructuralError("cost needs either point sets or a dense matrix")
        if matrix is not None:
            matrix = np.array(matrix, dtype=np.float64)
            if matrix.ndim != 2 or not np.all(np.isfinite(matrix)):
                raise ValidationError("cost matrix must be a finite 2D array")
            if np.any(matrix < 0):
                raise ValidationError("cost matrix must be nonnegative")
            self.matrix = _frozen(matrix)
            self.shape = matrix.shape
            self.x_points = self.y_points = None
        else:
            self.matrix = None
            self.x_points = _frozen(np.asarray(x_points, dtype=np.float64))
            self.y_points = _frozen(np.asarray(y_points, dtype=np.float64))
            self.shape = (len(self.x_points), len(self.y_points))

    @classmethod
    def squared_euclidean(
        cls, x_geometry: GridGeometry, y_geometry: Optional[GridGeometry] = None
    ) -> "CostOracle":
        y_geometry = y_geometry or x_geometry
        return cls(x_geometry.coordinates(), y_geometry.coordinates())

    @classmethod
    def squared_distance_1d(cls, x: np.ndarray, y: np.ndarray) -> "CostOracle":
        return cls(np.asarray(x, dtype=np.float64)[:, None], np.asarray(y, dtype=np.float64)[:, None])

    @classmethod
    def dense(cls, matrix: np.ndarray) -> "CostOracle":
        return cls(matrix=matrix)

    @property
    def is_dense(self) -> bool:
        return self.matrix is not None

    def block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Dense cost block ``c[rows][:, cols]``."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if self.matrix is not None:
            return self.matrix[np.ix_(rows, cols)]
        diff = self.x_points[rows][:, None, :] - self.y_points[cols][None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)

    def sup_bound(
        self, rows: Optional[np.ndarray] = None, cols: Optional[np.ndarray] = None
    ) -> float:
        """
        Upper bound of c over rows x cols; exact for dense matrices and for
        point sets that contain the corners of their bounding box.
        """
        if self.matrix is not None:
            sub = self.matrix
            if rows is not None:
                sub = sub[np.asarray(rows)]
            if cols is not None:
                sub = sub[:, np.asarray(cols)]
            return float(sub.max()) if sub.size else 0.0
        xs = self.x_points if rows is None else self.x_points[np.asarray(rows)]
        ys = self.y_points if cols is None else self.y_points[np.asarray(cols)]
        if len(xs) == 0 or len(ys) == 0:
            return 0.0
        # farthest point of a box from any x is one of its corners
        lo, hi = ys.min(axis=0), ys.max(axis=0)
        reach = np.maximum(np.abs(xs - lo), np.abs(xs - hi))
        return float(np.max(np.sum(reach * reach, axis=1)))


def scaled_kernel(
    cost: CostOracle,
    rows: np.ndarray,
    cols: np.ndarray,
    epsilon: float,
    alpha: Optional[np.ndarray] = None,
    beta: Optional[np.ndarray] = None,
    log_weight_x: Optional[np.ndarray] = None,
    log_weight_y: Optional[np.ndarray] = None,
    theta: float = 0.0,
    chunk_rows: int = DEFAULT_CHUNK_ROWS,
) -> sparse.csr_matrix:
    """
    Sparse ``exp((alpha + beta - c) / eps) * w_x * w_y`` over rows x cols.

    An entry is stored iff ``exp((alpha + beta - c) / eps) >= theta`` and the
    weighted value is positive.
    """
    nr, nc = len(rows), len(cols)
    alpha = np.zeros(nr) if alpha is None else alpha
    beta = np.zeros(nc) if beta is None else beta
    log_wx = np.zeros(nr) if log_weight_x is None else log_weight_x
    log_wy = np.zeros(nc) if log_weight_y is None else log_weight_y
    log_theta = np.log(theta) if theta > 0 else -np.inf

    data, indices, indptr = [], [], [0]
    for start in range(0, nr, chunk_rows):
        stop = min(start + chunk_rows, nr)
        exponent = (
            alpha[start:stop, None] + beta[None, :] - cost.block(rows[start:stop], cols)
        ) / epsilon
        keep = exponent >= log_theta
        values = np.exp(exponent + log_wx[start:stop, None] + log_wy[None, :])
        keep &= values > 0
        r_idx, c_idx = np.nonzero(keep)
        data.append(values[r_idx, c_idx])
        indices.append(c_idx)
        counts = np.bincount(r_idx, minlength=stop - start)
        indptr.extend((indptr[-1] + np.cumsum(counts)).tolist())
    matrix = sparse.csr_matrix(
        (
            np.concatenate(data) if data else np.zeros(0),
            np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64),
            np.asarray(indptr, dtype=np.int64),
        ),
        shape=(nr, nc),
    )
    return matrix


def empty_lines(matrix: sparse.csr_matrix) -> Tuple[np.ndarray, np.ndarray]:
    """Rows and columns of a sparse matrix without any stored entry."""
    row_counts = np.diff(matrix.indptr)
    col_counts = np.bincount(matrix.indices, minlength=matrix.shape[1])
    return np.flatnonzero(row_counts == 0), np.flatnonzero(col_counts == 0)


@dataclass(frozen=True)
class KernelBlock:
    """
    Truncated sparse block of the reference kernel ``K = k * (mu x nu)``.

    ``matrix`` is in local coordinates: entry (a, b) belongs to
    ``(rows[a], cols[b])``.
    """

    rows: np.ndarray
    cols: np.ndarray
    matrix: sparse.csr_matrix
    mu: np.ndarray
    nu: np.ndarray
    epsilon: float

    @classmethod
    def build(
        cls,
        cost: CostOracle,
        rows: np.ndarray,
        cols: np.ndarray,
        mu: np.ndarray,
        nu: np.ndarray,
        epsilon: float,
    ) -> "KernelBlock":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        mu = np.asarray(mu, dtype=np.float64)
        nu = np.asarray(nu, dtype=np.float64)
        with np.errstate(divide="ignore"):
            matrix = scaled_kernel(
                cost, rows, cols, epsilon,
                log_weight_x=np.log(mu), log_weight_y=np.log(nu),
            )
        return cls(rows, cols, matrix, mu, nu, float(epsilon))

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    @property
    def total_mass(self) -> float:
        return float(self.matrix.sum())

    def log_k(self) -> sparse.csr_matrix:
        """``log k = -c / eps`` on the stored pattern."""
        coo = self.matrix.tocoo()
        values = np.log(coo.data) - np.log(self.mu[coo.row]) - np.log(self.nu[coo.col])
        return sparse.csr_matrix((values, (coo.row, coo.col)), shape=self.matrix.shape)

    def truncate(
        self, log_u: np.ndarray, log_v: np.ndarray, theta: float
    ) -> "KernelBlock":
        """
        Keep exactly the entries with ``(u x v) * k >= theta``.

        ``log_u`` / ``log_v`` are potentials in ``eps * log`` form.

        Raises:
            NumericallyInfeasibleError: If a positive-mass row or column loses
                every entry
        """
        coo = self.matrix.tocoo()
        log_k = np.log(coo.data) - np.log(self.mu[coo.row]) - np.log(self.nu[coo.col])
        scaled = (log_u[coo.row] + log_v[coo.col]) / self.epsilon + log_k
        keep = scaled >= (np.log(theta) if theta > 0 else -np.inf)
        matrix = sparse.csr_matrix(
            (coo.data[keep], (coo.row[keep], coo.col[keep])), shape=self.matrix.shape
        )
        empty_rows, empty_cols = empty_lines(matrix)
        empty_rows = empty_rows[self.mu[empty_rows] > 0]
        empty_cols = empty_cols[self.nu[empty_cols] > 0]
        if empty_rows.size or empty_cols.size:
            raise NumericallyInfeasibleError(
                f"truncation at theta={theta:g} empties {empty_rows.size} rows "
                f"and {empty_cols.size} columns",
                empty_rows=self.rows[empty_rows],
                empty_cols=self.cols[empty_cols],
            )
        return KernelBlock(self.rows, self.cols, matrix, self.mu, self.nu, self.epsilon)

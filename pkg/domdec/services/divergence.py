"""
Kullback-Leibler divergence, the entropic dual objective and reference-kernel
integrals.
"""

import math
from typing import Optional, Union

import numpy as np
from scipy import sparse
from scipy.special import logsumexp, rel_entr, xlogy

from domdec.core.errors import DomainError, StructuralError
from domdec.models.measures import DEFAULT_CHUNK_ROWS, CostOracle, DiscreteMeasure, KernelBlock

# above this many terms sums are accumulated with math.fsum
EXACT_SUM_THRESHOLD = 100_000

Matrixlike = Union[np.ndarray, sparse.spmatrix, KernelBlock]


def accurate_sum(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size > EXACT_SUM_THRESHOLD:
        return math.fsum(values)
    return float(np.sum(values))


def phi(s):
    """
    Entropy density ``s log s - s + 1`` with ``phi(0) = 1``.

    Raises:
        DomainError: For negative or non-finite input
    """
    arr = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError(f"phi is defined on finite nonnegative reals, got {s!r}")
    result = xlogy(arr, arr) - arr + 1.0
    if np.ndim(s) == 0:
        return float(result)
    return result


def _as_matrix(value: Matrixlike):
    if isinstance(value, KernelBlock):
        return value.matrix
    return value


def kl_divergence(pi: Matrixlike, ref: Matrixlike) -> float:
    """
    KL(pi | ref) = sum phi(dpi/dref) dref over the union of supports.

    Returns +inf when pi has mass where ref has none.

    Raises:
        StructuralError: If the operands have different shapes
    """
    pi = _as_matrix(pi)
    ref = _as_matrix(ref)
    if pi.shape != ref.shape:
        raise StructuralError(f"coupling shape {pi.shape} does not match reference {ref.shape}")

    if sparse.issparse(pi) or sparse.issparse(ref):
        pi_coo = sparse.coo_matrix(pi)
        ref_csr = sparse.csr_matrix(ref)
        mask = pi_coo.data != 0
        rows, cols, masses = pi_coo.row[mask], pi_coo.col[mask], pi_coo.data[mask]
        ref_at = np.asarray(ref_csr[rows, cols]).ravel() if rows.size else np.zeros(0)
        entropy = rel_entr(masses, ref_at)
        pi_total = accurate_sum(masses)
        ref_total = accurate_sum(ref_csr.data)
    else:
        pi_arr = np.asarray(pi, dtype=np.float64)
        ref_arr = np.asarray(ref, dtype=np.float64)
        entropy = rel_entr(pi_arr, ref_arr)
        pi_total = accurate_sum(pi_arr)
        ref_total = accurate_sum(ref_arr)

    if np.any(np.isinf(entropy)):
        return math.inf
    return accurate_sum(entropy) - pi_total + ref_total


class ReferenceKernel:
    """
    The global reference measure ``K = exp(-c/eps) * (mu x nu)``, never
    materialized; integrals are accumulated over chunks of X rows.
    """

    def __init__(
        self,
        cost: CostOracle,
        mu: DiscreteMeasure,
        nu: DiscreteMeasure,
        epsilon: float,
        chunk_rows: int = DEFAULT_CHUNK_ROWS,
    ):
        self.cost = cost
        self.mu = mu
        self.nu = nu
        self.epsilon = float(epsilon)
        self.chunk_rows = chunk_rows
        self._x = mu.support
        self._y = nu.support
        self._log_mu = np.log(mu.weights[self._x])
        self._log_nu = np.log(nu.weights[self._y])
        self._norm: Optional[float] = None

    def log_integral(self, alpha: np.ndarray, beta: np.ndarray) -> float:
        """log of sum exp((alpha + beta - c)/eps) mu nu over the supports."""
        a = alpha[self._x] / self.epsilon + self._log_mu
        b = beta[self._y] / self.epsilon + self._log_nu
        partial = []
        for start in range(0, self._x.size, self.chunk_rows):
            stop = min(start + self.chunk_rows, self._x.size)
            block = self.cost.block(self._x[start:stop], self._y) / self.epsilon
            partial.append(logsumexp(a[start:stop, None] + b[None, :] - block))
        return float(logsumexp(partial)) if partial else -math.inf

    def norm(self) -> float:
        """Total mass ||K||."""
        if self._norm is None:
            zeros_x = np.zeros(self.mu.size)
            zeros_y = np.zeros(self.nu.size)
            self._norm = math.exp(self.log_integral(zeros_x, zeros_y))
        return self._norm

    def integral(self, alpha: np.ndarray, beta: np.ndarray) -> float:
        """The integral of ``u x v`` against K for potentials ``alpha, beta``."""
        log_value = self.log_integral(alpha, beta)
        if log_value > 709.0:
            return math.inf
        return math.exp(log_value)

    def log_kernel(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Pointwise ``log K`` at coordinate pairs."""
        with np.errstate(divide="ignore"):
            c = self._pair_cost(rows, cols)
            return (
                -c / self.epsilon
                + np.log(self.mu.weights[rows])
                + np.log(self.nu.weights[cols])
            )

    def _pair_cost(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        if self.cost.is_dense:
            return self.cost.matrix[rows, cols]
        diff = self.cost.x_points[rows] - self.cost.y_points[cols]
        return np.einsum("ij,ij->i", diff, diff)

    def entropy_terms(self, rows: np.ndarray, cols: np.ndarray, masses: np.ndarray) -> float:
        """
        ``sum pi (log pi - log K) - sum pi`` over coordinate entries.

        Adding ``norm()`` to the sum over a partition of a coupling's entries
        gives KL(pi | K).
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        masses = np.asarray(masses, dtype=np.float64)
        keep = masses > 0
        rows, cols, masses = rows[keep], cols[keep], masses[keep]
        if masses.size == 0:
            return 0.0
        log_k = self.log_kernel(rows, cols)
        if np.any(np.isinf(log_k)):
            return math.inf
        return accurate_sum(masses * (np.log(masses) - log_k)) - accurate_sum(masses)

    def kl_of_coupling(self, rows: np.ndarray, cols: np.ndarray, masses: np.ndarray) -> float:
        """KL(pi | K) of a coupling given in coordinate form."""
        return self.entropy_terms(rows, cols, masses) + self.norm()


def dual_score(
    log_u: np.ndarray,
    log_v: np.ndarray,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    kernel: ReferenceKernel,
) -> float:
    """
    Entropic dual objective for potentials in ``eps * log`` form.

    ``J = int log u dmu + int log v dnu - int u x v dK + ||K||``; returns -inf
    when a potential is not finite on a positive-mass point.
    """
    log_u = np.asarray(log_u, dtype=np.float64)
    log_v = np.asarray(log_v, dtype=np.float64)
    x, y = mu.support, nu.support
    if not (np.all(np.isfinite(log_u[x])) and np.all(np.isfinite(log_v[y]))):
        return -math.inf
    eps = kernel.epsilon
    linear = accurate_sum(log_u[x] * mu.weights[x]) / eps + accurate_sum(
        log_v[y] * nu.weights[y]
    ) / eps
    log_integral = kernel.log_integral(log_u, log_v)
    if log_integral > 709.0:
        return -math.inf
    return linear - math.exp(log_integral) + kernel.norm()

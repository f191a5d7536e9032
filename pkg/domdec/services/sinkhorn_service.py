"""
Log-stabilized Sinkhorn sub-solver with sparse kernel truncation.
"""

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from domdec.core.config import SinkhornConfig, sinkhorn_config
from domdec.core.errors import (
    ConfigurationError,
    ConvergenceError,
    NumericallyInfeasibleError,
    ValidationError,
)
from domdec.models.measures import (
    DEFAULT_CHUNK_ROWS,
    CostOracle,
    KernelBlock,
    empty_lines,
    scaled_kernel,
)
from domdec.utils.logger import LoggerFactory

logger = LoggerFactory.get_logger(__name__)

MASS_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SinkhornProblem:
    """
    Transport between ``mu_hat`` on ``rows`` and ``nu_hat`` on ``cols``.

    ``reference_mu`` / ``reference_nu`` are the global measures restricted to
    the same index sets; potentials are reported against them.
    """

    rows: np.ndarray
    cols: np.ndarray
    mu_hat: np.ndarray
    nu_hat: np.ndarray
    cost: CostOracle
    epsilon: float
    reference_mu: np.ndarray
    reference_nu: np.ndarray

    def __post_init__(self):
        for name in ("rows", "cols"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        for name in ("mu_hat", "nu_hat", "reference_mu", "reference_nu"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.epsilon <= 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if self.mu_hat.size != self.rows.size or self.nu_hat.size != self.cols.size:
            raise ValidationError("marginals are not aligned with their index sets")
        if np.any(self.mu_hat <= 0) or np.any(self.nu_hat <= 0):
            raise ValidationError("sub-problem marginals must be positive on their index sets")
        mu_mass, nu_mass = self.mu_mass, float(np.sum(self.nu_hat))
        if abs(mu_mass - nu_mass) > MASS_TOLERANCE * max(mu_mass, nu_mass):
            raise ValidationError(
                f"marginal masses differ: {mu_mass!r} vs {nu_mass!r}"
            )

    @property
    def mu_mass(self) -> float:
        return float(np.sum(self.mu_hat))

    def with_epsilon(self, epsilon: float) -> "SinkhornProblem":
        return replace(self, epsilon=epsilon)

    @classmethod
    def global_problem(cls, cost: CostOracle, mu: np.ndarray, nu: np.ndarray, epsilon: float):
        mu = np.asarray(mu, dtype=np.float64)
        nu = np.asarray(nu, dtype=np.float64)
        rows = np.flatnonzero(mu > 0)
        cols = np.flatnonzero(nu > 0)
        return cls(rows, cols, mu[rows], nu[cols], cost, epsilon, mu[rows], nu[cols])


@dataclass(frozen=True)
class SinkhornResult:
    """
    Potentials in ``eps * log`` form against the reference measures, and the
    coupling (local coordinates) after the final Y-iteration.
    """

    rows: np.ndarray
    cols: np.ndarray
    log_u: np.ndarray
    log_v: np.ndarray
    coupling: sparse.csr_matrix
    x_marginal_error: float
    iterations: int
    kernel_entries: int
    absorptions: int = 0

    def to_coordinates(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        coo = self.coupling.tocoo()
        return self.rows[coo.row], self.cols[coo.col], coo.data

    def dense_coupling(self, shape: Tuple[int, int]) -> np.ndarray:
        dense = np.zeros(shape)
        r, c, m = self.to_coordinates()
        dense[r, c] = m
        return dense


def rescale_potentials(
    log_u: np.ndarray, log_v: np.ndarray, eps_old: float, eps_new: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Potentials in ``eps * log`` form carry over unchanged between epsilons."""
    if eps_old <= 0 or eps_new <= 0:
        raise ConfigurationError("epsilons must be positive")
    return np.array(log_u, dtype=np.float64), np.array(log_v, dtype=np.float64)


def rescale_scaling(u: np.ndarray, eps_old: float, eps_new: float) -> np.ndarray:
    """Scaling-form counterpart: ``u_new = u_old ** (eps_old / eps_new)``."""
    if eps_old <= 0 or eps_new <= 0:
        raise ConfigurationError("epsilons must be positive")
    return np.power(np.asarray(u, dtype=np.float64), eps_old / eps_new)


def truncate_kernel(
    block: KernelBlock, log_u: np.ndarray, log_v: np.ndarray, theta: float
) -> KernelBlock:
    """Keep exactly the kernel entries with ``(u x v) * k >= theta``."""
    if theta < 0 or theta >= 1:
        raise ConfigurationError(f"theta must lie in [0, 1), got {theta}")
    return block.truncate(log_u, log_v, theta)


def log_y_update(
    cost: CostOracle,
    rows: np.ndarray,
    cols: np.ndarray,
    alpha: np.ndarray,
    log_mu: np.ndarray,
    epsilon: float,
    chunk_rows: int = DEFAULT_CHUNK_ROWS,
) -> np.ndarray:
    """``-eps * LSE_x((alpha_x - c_xy)/eps + log mu_x)`` for every column."""
    total = np.full(len(cols), -np.inf)
    shifted = alpha / epsilon + log_mu
    for start in range(0, len(rows), chunk_rows):
        stop = min(start + chunk_rows, len(rows))
        block = shifted[start:stop, None] - cost.block(rows[start:stop], cols) / epsilon
        total = np.logaddexp(total, logsumexp(block, axis=0))
    return -epsilon * total


class SinkhornSolver:
    """
    Alternating Y-/X-iterations on a truncated, absorbed kernel.

    Internally the problem is scaled against ``mu_hat x nu_hat``; on the
    transport plans between these marginals this differs from the global
    reference by a constant, so the optimizer is the same.
    """

    def __init__(self, config: Optional[SinkhornConfig] = None):
        self.config = config or sinkhorn_config

    def _build(self, problem, alpha, beta, log_mu, log_nu) -> sparse.csr_matrix:
        kernel = scaled_kernel(
            problem.cost, problem.rows, problem.cols, problem.epsilon,
            alpha=alpha, beta=beta, log_weight_x=log_mu, log_weight_y=log_nu,
            theta=self.config.truncation_theta,
        )
        empty_rows, empty_cols = empty_lines(kernel)
        if empty_rows.size or empty_cols.size:
            raise NumericallyInfeasibleError(
                f"truncated kernel has {empty_rows.size} empty rows and "
                f"{empty_cols.size} empty columns at eps={problem.epsilon:g}",
                empty_rows=problem.rows[empty_rows],
                empty_cols=problem.cols[empty_cols],
            )
        return kernel

    def _marginal_error(self, x_marginal: np.ndarray, mu_hat: np.ndarray) -> float:
        diff = np.abs(x_marginal - mu_hat)
        if self.config.stopping == "linf":
            return float(diff.max()) if diff.size else 0.0
        return float(np.sum(diff))

    def _threshold(self, problem: SinkhornProblem, err_tol: float) -> float:
        if self.config.stopping == "linf":
            return err_tol
        return problem.mu_mass * err_tol

    def solve(
        self,
        problem: SinkhornProblem,
        init_log_u: Optional[np.ndarray] = None,
        err_tol: Optional[float] = None,
    ) -> SinkhornResult:
        """
        Solve from an initial X-potential, starting and ending with a
        Y-iteration.

        Args:
            problem: Sub-problem definition
            init_log_u: Initial X-potential (``eps * log u``), zeros if None
            err_tol: Stopping tolerance, ``config.err`` if None

        Returns:
            SinkhornResult with potentials against the reference measures

        Raises:
            NumericallyInfeasibleError: If the truncated kernel has an empty
                row or column
            ConvergenceError: If max_iterations is exceeded
        """
        cfg = self.config
        err_tol = cfg.err if err_tol is None else err_tol
        if err_tol <= 0:
            raise ConfigurationError(f"error tolerance must be positive, got {err_tol}")
        eps = problem.epsilon
        alpha = (
            np.zeros(problem.rows.size)
            if init_log_u is None
            else np.array(init_log_u, dtype=np.float64)
        )
        if alpha.shape != problem.rows.shape or not np.all(np.isfinite(alpha)):
            raise ValidationError("initial potential must be finite and aligned with rows")

        log_mu = np.log(problem.mu_hat)
        log_nu = np.log(problem.nu_hat)
        threshold = self._threshold(problem, err_tol)

        # first Y-iteration in the log domain, so no column starts empty
        beta = log_y_update(problem.cost, problem.rows, problem.cols, alpha, log_mu, eps)
        kernel = self._build(problem, alpha, beta, log_mu, log_nu)
        max_entries = kernel.nnz
        a = np.ones(problem.rows.size)
        b = np.ones(problem.cols.size)
        iterations = 1
        absorptions = 0
        error = self._marginal_error(kernel @ b, problem.mu_hat)

        while error > threshold:
            if iterations >= cfg.max_iterations:
                raise ConvergenceError(
                    f"Sinkhorn did not reach {threshold:.3g} within {iterations} "
                    f"iterations (error {error:.3g})",
                    last_error=error,
                    iterations=iterations,
                )
            for _ in range(cfg.check_every):
                a = problem.mu_hat / (kernel @ b)
                b = problem.nu_hat / (kernel.T @ a)
                iterations += 1
                if (
                    np.max(np.abs(np.log(a))) > cfg.absorption_bound
                    or np.max(np.abs(np.log(b))) > cfg.absorption_bound
                ):
                    alpha = alpha + eps * np.log(a)
                    beta = beta + eps * np.log(b)
                    a = np.ones_like(a)
                    kernel = self._build(problem, alpha, beta, log_mu, log_nu)
                    # re-truncation may revive entries; restore the Y-marginal
                    b = problem.nu_hat / (kernel.T @ a)
                    max_entries = max(max_entries, kernel.nnz)
                    absorptions += 1
                if iterations >= cfg.max_iterations:
                    break
            error = self._marginal_error(a * (kernel @ b), problem.mu_hat)

        coupling = sparse.diags(a) @ kernel @ sparse.diags(b)
        alpha = alpha + eps * np.log(a)
        beta = beta + eps * np.log(b)
        log_u = alpha + eps * (log_mu - np.log(problem.reference_mu))
        log_v = beta + eps * (log_nu - np.log(problem.reference_nu))
        l1_error = float(np.sum(np.abs(np.asarray(coupling.sum(axis=1)).ravel() - problem.mu_hat)))
        logger.debug(
            "Sinkhorn: %d iterations, %d absorptions, L1 error %.3g, %d entries",
            iterations, absorptions, l1_error, kernel.nnz,
        )
        return SinkhornResult(
            rows=problem.rows,
            cols=problem.cols,
            log_u=log_u,
            log_v=log_v,
            coupling=sparse.csr_matrix(coupling),
            x_marginal_error=l1_error,
            iterations=iterations,
            kernel_entries=max_entries,
            absorptions=absorptions,
        )

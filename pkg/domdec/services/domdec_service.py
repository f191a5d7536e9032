"""
Domain decomposition engine: alternating sweeps over composite cells with
per-cell Sinkhorn solves, marginal extraction, balancing and truncation.
"""

import time
from dataclasses import dataclass
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from domdec.core.config import DomDecConfig, SinkhornConfig, domdec_config, sinkhorn_config
from domdec.core.errors import (
    CellSolveError,
    ConfigurationError,
    ConsistencyError,
    ConvergenceError,
    NumericallyInfeasibleError,
)
from domdec.models.measures import DiscreteMeasure, SparseMarginal
from domdec.models.partition import LABELS, BasicPartition
from domdec.models.state import CellState, ProblemData
from domdec.schemas import CellStats, SweepStats
from domdec.services.divergence import ReferenceKernel
from domdec.services.executor import CellTask, TaskRunner
from domdec.services.sinkhorn_service import (
    SinkhornProblem,
    SinkhornResult,
    SinkhornSolver,
    rescale_potentials,
)
from domdec.utils.logger import LoggerFactory
from domdec.utils.timing import PhaseTimer

logger = LoggerFactory.get_logger(__name__)

BALANCE_TOLERANCE = 1e-9


def initialize_product_state(
    basic: BasicPartition, nu: DiscreteMeasure, epsilon: float = 1.0
) -> CellState:
    """Basic marginals ``nu_i = ||mu_i|| * nu`` and zero potentials."""
    support = nu.support
    marginals = {
        i: SparseMarginal(support, mass * nu.weights[support])
        for i, mass in enumerate(basic.cell_masses)
    }
    return CellState(basic_marginals=marginals, epsilon=epsilon)


def state_from_coupling(
    basic: BasicPartition, coupling: np.ndarray, epsilon: float = 1.0
) -> CellState:
    """Basic marginals read off a dense initial coupling."""
    coupling = np.asarray(coupling, dtype=np.float64)
    marginals = {
        i: SparseMarginal.from_dense(coupling[cell].sum(axis=0))
        for i, cell in enumerate(basic.cells)
    }
    return CellState(basic_marginals=marginals, epsilon=epsilon)


def truncate_marginal(marginal: SparseMarginal, floor: float) -> SparseMarginal:
    """Drop entries below ``floor``; the rest stay untouched."""
    if floor < 0:
        raise ConfigurationError(f"truncation floor must be nonnegative, got {floor}")
    keep = marginal.values >= floor
    if np.all(keep):
        return marginal
    return SparseMarginal(marginal.indices[keep], marginal.values[keep])


@dataclass
class BalanceOutcome:
    mass_moved: float = 0.0
    new_entries: int = 0


def balance_dense(matrix: np.ndarray, targets: np.ndarray) -> BalanceOutcome:
    """
    Rebalance rows of ``matrix`` in place so row sums hit ``targets``.

    Donors (excess mass) and receivers (deficit) are visited in ascending
    row order; a donor gives from its largest entries first and the receiver
    takes the mass at the same column, so column sums are preserved.

    Raises:
        ConsistencyError: If total mass and total target differ beyond tolerance
    """
    targets = np.asarray(targets, dtype=np.float64)
    deviation = matrix.sum(axis=1) - targets
    total = float(np.sum(targets))
    if abs(float(np.sum(deviation))) > BALANCE_TOLERANCE * max(total, 1e-300):
        raise ConsistencyError(
            f"basic marginal masses sum to {float(matrix.sum())!r}, targets to {total!r}"
        )
    outcome = BalanceOutcome()
    donors = [i for i in range(len(targets)) if deviation[i] > 0]
    receivers = [j for j in range(len(targets)) if deviation[j] < 0]
    if not donors or not receivers:
        return outcome

    r = 0
    deficit = -deviation[receivers[0]]
    for i in donors:
        excess = deviation[i]
        order = np.argsort(-matrix[i], kind="stable")
        pos = 0
        while excess > 0 and r < len(receivers) and pos < order.size:
            j = receivers[r]
            y = order[pos]
            amount = min(excess, deficit, matrix[i, y])
            if amount > 0:
                if matrix[j, y] == 0:
                    outcome.new_entries += 1
                if amount == matrix[i, y]:
                    matrix[i, y] = 0.0
                    pos += 1
                else:
                    matrix[i, y] -= amount
                matrix[j, y] += amount
                excess -= amount
                deficit -= amount
                outcome.mass_moved += amount
            else:
                pos += 1
            if deficit <= 0:
                r += 1
                if r < len(receivers):
                    deficit = -deviation[receivers[r]]
    return outcome


def balance_measures(
    marginals: Sequence[SparseMarginal], target_masses: Sequence[float]
) -> List[SparseMarginal]:
    """Rebalance basic marginals of one composite cell on their union support."""
    if not marginals:
        return []
    support = np.unique(np.concatenate([m.indices for m in marginals]))
    matrix = np.zeros((len(marginals), support.size))
    for k, m in enumerate(marginals):
        matrix[k, np.searchsorted(support, m.indices)] = m.values
    outcome = balance_dense(matrix, np.asarray(target_masses, dtype=np.float64))
    if outcome.new_entries:
        logger.debug("Balancing created %d receiver entries", outcome.new_entries)
    return [SparseMarginal.from_dense(row, support) for row in matrix]


def build_cell_problem(
    state: CellState, data: ProblemData, label: str, group: int
) -> Tuple[SinkhornProblem, np.ndarray]:
    """Sub-problem of composite cell ``group`` and its stored warm start."""
    composite = data.composite(label)
    rows = composite.points(data.basic, group)
    nu_cell = state.cell_marginal(composite.groups[group])
    problem = SinkhornProblem(
        rows=rows,
        cols=nu_cell.indices,
        mu_hat=data.mu.weights[rows],
        nu_hat=nu_cell.values,
        cost=data.cost,
        epsilon=data.epsilon,
        reference_mu=data.mu.weights[rows],
        reference_nu=data.nu.weights[nu_cell.indices],
    )
    return problem, state.potential(label, group, rows.size)


def solve_with_safeguard(
    solver: SinkhornSolver,
    problem: SinkhornProblem,
    init_log_u: np.ndarray,
    err_tol: float,
    attempts: int,
    label: str,
    group: int,
) -> Tuple[SinkhornResult, int]:
    """
    Solve a cell; on numerical failure retry from ``2**k * eps`` and walk the
    epsilon ladder back down to the target, for k = 1..attempts.

    Returns:
        (result, k) with k = 0 when no retry was needed

    Raises:
        CellSolveError: If every attempt fails
    """
    failures = (NumericallyInfeasibleError, ConvergenceError)
    try:
        return solver.solve(problem, init_log_u, err_tol), 0
    except failures as exc:
        last = exc
    eps = problem.epsilon
    for k in range(1, attempts + 1):
        logger.warning(
            "Cell %s%d failed at eps=%g (%s); retrying from eps=%g",
            label, group, eps, last, eps * 2 ** k,
        )
        try:
            log_u = init_log_u
            for level in range(k, -1, -1):
                step_eps = eps * 2 ** level
                result = solver.solve(problem.with_epsilon(step_eps), log_u, err_tol)
                log_u, _ = rescale_potentials(
                    result.log_u, result.log_v, step_eps, step_eps / 2
                )
            return result, k
        except failures as exc:
            last = exc
    raise CellSolveError(
        f"composite cell failed after {attempts} safeguard attempts: {last}",
        label=label,
        cell=group,
        epsilon=eps,
    )


@dataclass
class CellOutcome:
    group: int
    marginals: Dict[int, SparseMarginal]
    log_u: np.ndarray
    stats: CellStats
    phases: Dict[str, float]
    coupling: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None


def _row_sums(result: SinkhornResult) -> np.ndarray:
    return np.asarray(result.coupling.sum(axis=1)).ravel()


def _solve_composite_cell(
    state: CellState,
    data: ProblemData,
    label: str,
    group: int,
    solver: SinkhornSolver,
    config: DomDecConfig,
    err_tol: float,
    keep_coupling: bool,
) -> CellOutcome:
    timer = PhaseTimer()
    composite = data.composite(label)
    members = composite.groups[group]
    with timer.phase("sinkhorn"):
        problem, init = build_cell_problem(state, data, label, group)
        result, level = solve_with_safeguard(
            solver, problem, init, err_tol, config.safeguard_attempts, label, group
        )

    with timer.phase("balance"):
        # local row positions of each basic cell inside the composite cell
        matrix = np.zeros((len(members), problem.cols.size))
        for k, i in enumerate(members):
            local = np.searchsorted(problem.rows, data.basic.cells[i])
            matrix[k] = np.asarray(result.coupling[local].sum(axis=0)).ravel()
        entries_before = int(np.count_nonzero(matrix))
        targets = data.basic.cell_masses[list(members)]
        outcome = balance_dense(matrix, targets)

    with timer.phase("truncate"):
        marginals = {
            i: truncate_marginal(
                SparseMarginal.from_dense(matrix[k], problem.cols), config.truncation_floor
            )
            for k, i in enumerate(members)
        }
        entries_after = sum(m.nnz for m in marginals.values())

    stats = CellStats(
        label=label,
        cell=group,
        iterations=result.iterations,
        x_marginal_error=result.x_marginal_error,
        kernel_entries=result.kernel_entries,
        safeguard_level=level,
        entries_before_truncation=entries_before,
        entries_after_truncation=entries_after,
        mass_moved=outcome.mass_moved,
        new_receiver_entries=outcome.new_entries,
    )
    return CellOutcome(
        group=group,
        marginals=marginals,
        log_u=result.log_u,
        stats=stats,
        phases=timer.as_dict(),
        coupling=result.to_coordinates() if keep_coupling else None,
    )


@dataclass
class AssembledCoupling:
    """Cell-wise assembled primal score and marginal errors."""

    primal_score: float
    x_marginal_l1: float
    y_marginal_l1: float
    entries: int
    rows: Optional[np.ndarray] = None
    cols: Optional[np.ndarray] = None
    masses: Optional[np.ndarray] = None

    def dense(self, shape: Tuple[int, int]) -> np.ndarray:
        dense = np.zeros(shape)
        dense[self.rows, self.cols] = self.masses
        return dense


def _assemble(
    parts: List[Tuple[np.ndarray, np.ndarray, np.ndarray]],
    data: ProblemData,
    kernel: ReferenceKernel,
    include_coupling: bool,
) -> AssembledCoupling:
    entropy = 0.0
    x_marginal = np.zeros(data.mu.size)
    y_marginal = np.zeros(data.nu.size)
    for rows, cols, masses in parts:
        entropy += kernel.entropy_terms(rows, cols, masses)
        np.add.at(x_marginal, rows, masses)
        np.add.at(y_marginal, cols, masses)
    assembled = AssembledCoupling(
        primal_score=entropy + kernel.norm(),
        x_marginal_l1=float(np.sum(np.abs(x_marginal - data.mu.weights))),
        y_marginal_l1=float(np.sum(np.abs(y_marginal - data.nu.weights))),
        entries=int(sum(p[2].size for p in parts)),
    )
    if include_coupling:
        assembled.rows = np.concatenate([p[0] for p in parts])
        assembled.cols = np.concatenate([p[1] for p in parts])
        assembled.masses = np.concatenate([p[2] for p in parts])
    return assembled


class DomainDecompositionSolver:
    """Sweeps, assembly and feasibility checks on one problem at one layer."""

    def __init__(
        self,
        data: ProblemData,
        sinkhorn: Optional[SinkhornConfig] = None,
        config: Optional[DomDecConfig] = None,
        runner: Optional[TaskRunner] = None,
    ):
        self.data = data
        self.sinkhorn_config = sinkhorn or sinkhorn_config
        self.config = config or domdec_config
        self.solver = SinkhornSolver(self.sinkhorn_config)
        self.runner = runner or TaskRunner(self.config.workers)
        self._kernel: Optional[ReferenceKernel] = None

    @property
    def kernel(self) -> ReferenceKernel:
        if self._kernel is None or self._kernel.epsilon != self.data.epsilon:
            self._kernel = ReferenceKernel(
                self.data.cost, self.data.mu, self.data.nu, self.data.epsilon
            )
        return self._kernel

    def set_epsilon(self, epsilon: float) -> None:
        self.data = self.data.with_epsilon(epsilon)

    def _run_cells(
        self, state: CellState, label: str, err_tol: float, keep_coupling: bool
    ) -> List[CellOutcome]:
        if label not in LABELS:
            raise ConfigurationError(f"label must be one of {LABELS}, got {label!r}")
        composite = self.data.composite(label)
        tasks = [
            CellTask(
                g,
                partial(
                    _solve_composite_cell, state, self.data, label, g,
                    self.solver, self.config, err_tol, keep_coupling,
                ),
            )
            for g in range(composite.num_groups)
        ]
        return self.runner.run_batch(tasks)

    def sweep(
        self,
        state: CellState,
        label: str,
        err_tol: Optional[float] = None,
        keep_coupling: bool = False,
    ) -> Tuple[SweepStats, Optional[AssembledCoupling]]:
        """
        Solve every composite cell of ``label`` and merge the results into
        ``state`` by cell id.

        The merged coupling is only assembled when ``keep_coupling`` is set.
        """
        err_tol = self.sinkhorn_config.err if err_tol is None else err_tol
        start = time.perf_counter()
        outcomes = self._run_cells(state, label, err_tol, keep_coupling)

        timer = PhaseTimer()
        for outcome in outcomes:
            state.basic_marginals.update(outcome.marginals)
            state.potentials[label][outcome.group] = outcome.log_u
            timer.merge(outcome.phases)
        state.epsilon = self.data.epsilon

        stats = SweepStats.from_cells(
            label, self.data.epsilon, [o.stats for o in outcomes]
        )
        stats.wall_time = time.perf_counter() - start
        stats.phase_times = timer.as_dict()
        if stats.safeguard_activations:
            logger.warning(
                "Sweep %s at eps=%g needed the safeguard on %d cells",
                label, self.data.epsilon, stats.safeguard_activations,
            )
        logger.debug(
            "Sweep %s eps=%g: iterations=%d err_sum=%.3g entries=%d",
            label, self.data.epsilon, sum(stats.per_cell_iterations),
            stats.x_marginal_error_sum, stats.entries_after_truncation,
        )

        assembled = None
        if keep_coupling:
            assembled = _assemble(
                [o.coupling for o in outcomes], self.data, self.kernel, True
            )
        return stats, assembled

    def assemble_coupling(
        self, state: CellState, label: str = "B", include_coupling: bool = False
    ) -> AssembledCoupling:
        """
        Re-solve the cells of ``label`` from the stored potentials without
        touching ``state`` and accumulate the primal score cell by cell.
        """
        err_tol = self.sinkhorn_config.err

        def solve_only(group: int):
            problem, init = build_cell_problem(state, self.data, label, group)
            result, _ = solve_with_safeguard(
                self.solver, problem, init, err_tol,
                self.config.safeguard_attempts, label, group,
            )
            return result.to_coordinates()

        composite = self.data.composite(label)
        parts = self.runner.run_batch(
            [CellTask(g, partial(solve_only, g)) for g in range(composite.num_groups)]
        )
        return _assemble(parts, self.data, self.kernel, include_coupling)

    def check_feasibility(self, state: CellState, tol: float = 1e-7) -> Dict[str, float]:
        """
        L1 drift of ``sum_i nu_i`` from nu and the largest relative mass error
        of a basic marginal.

        Raises:
            ConsistencyError: If the pointwise drift exceeds ``tol``
        """
        drift = float(np.sum(np.abs(state.y_marginal(self.data.nu.size) - self.data.nu.weights)))
        masses = np.array([state.basic_marginals[i].total_mass for i in range(self.data.basic.num_cells)])
        mass_error = float(np.max(np.abs(masses - self.data.basic.cell_masses) / self.data.basic.cell_masses))
        if drift > tol:
            raise ConsistencyError(f"basic marginals drifted from nu by {drift:.3g} in L1")
        return {"y_drift": drift, "mass_error": mass_error}

    def run(
        self, state: CellState, sweeps: int, first_label: str = "A"
    ) -> List[SweepStats]:
        """Alternate ``sweeps`` sweeps starting with ``first_label``."""
        order = LABELS if first_label == "A" else tuple(reversed(LABELS))
        return [self.sweep(state, order[k % 2])[0] for k in range(sweeps)]

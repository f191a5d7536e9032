"""
End-to-end multiscale solve and the single-Sinkhorn reference run.
"""

import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from domdec.core.config import DomDecConfig, SinkhornConfig, domdec_config, sinkhorn_config
from domdec.core.errors import CellSolveError, StructuralError
from domdec.models.measures import CostOracle, DiscreteMeasure
from domdec.models.state import CellState, MultiscaleHierarchy
from domdec.schemas import BaselineReport, LayerReport, SolveReport
from domdec.services.divergence import ReferenceKernel, dual_score
from domdec.services.domdec_service import (
    AssembledCoupling,
    DomainDecompositionSolver,
    initialize_product_state,
)
from domdec.services.dualglue_service import certificate
from domdec.services.executor import TaskRunner
from domdec.services.multiscale_service import build_hierarchy, build_schedule, refine_state
from domdec.services.sinkhorn_service import SinkhornProblem, SinkhornSolver
from domdec.utils.logger import LoggerFactory
from domdec.utils.timing import PhaseTimer

logger = LoggerFactory.get_logger(__name__)

REFERENCE_ERR = 1e-9


@dataclass
class SolveOutcome:
    """Report plus the objects needed for coupling export and rendering."""

    report: SolveReport
    state: CellState
    hierarchy: MultiscaleHierarchy
    engine: DomainDecompositionSolver
    last_label: str

    def coupling(self) -> AssembledCoupling:
        return self.engine.assemble_coupling(self.state, self.last_label, include_coupling=True)


@dataclass
class ReferenceOutcome:
    report: BaselineReport
    log_u: np.ndarray
    log_v: np.ndarray
    coupling: Tuple[np.ndarray, np.ndarray, np.ndarray]


def reference_solve(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    epsilons: List[float],
    config: Optional[SinkhornConfig] = None,
) -> ReferenceOutcome:
    """
    One global Sinkhorn solve walked down an epsilon ladder with warm starts.

    Defaults to the dense oracle kernel (no truncation) with L-infinity
    stopping at 1e-9.
    """
    if mu.geometry is None or nu.geometry is None:
        raise StructuralError("reference solves need grid measures")
    config = config or SinkhornConfig.oracle().with_overrides(err=REFERENCE_ERR)
    start = time.perf_counter()
    cost = CostOracle.squared_euclidean(mu.geometry, nu.geometry)
    solver = SinkhornSolver(config)
    problem = SinkhornProblem.global_problem(cost, mu.weights, nu.weights, epsilons[0])

    log_u = None
    iterations, max_entries = [], 0
    for eps in epsilons:
        result = solver.solve(problem.with_epsilon(eps), log_u)
        log_u = result.log_u
        iterations.append(result.iterations)
        max_entries = max(max_entries, result.kernel_entries)
        logger.info("Reference eps=%g: %d iterations, %d entries", eps, result.iterations, result.kernel_entries)

    final_eps = epsilons[-1]
    kernel = ReferenceKernel(cost, mu, nu, final_eps)
    alpha = np.zeros(mu.size)
    beta = np.zeros(nu.size)
    alpha[result.rows] = result.log_u
    beta[result.cols] = result.log_v
    rows, cols, masses = result.to_coordinates()
    x_marg = np.bincount(rows, weights=masses, minlength=mu.size)
    y_marg = np.bincount(cols, weights=masses, minlength=nu.size)

    report = BaselineReport(
        primal_score=kernel.entropy_terms(rows, cols, masses) + kernel.norm(),
        dual_score=dual_score(alpha, beta, mu, nu, kernel),
        x_marginal_l1=float(np.sum(np.abs(x_marg - mu.weights))),
        y_marginal_l1=float(np.sum(np.abs(y_marg - nu.weights))),
        epsilons=list(epsilons),
        iterations=iterations,
        max_entries=max_entries,
        final_entries=int(masses.size),
        wall_time=time.perf_counter() - start,
    )
    return ReferenceOutcome(report, alpha, beta, (rows, cols, masses))


class MultiscaleSolver:
    """Coarse-to-fine domain decomposition with epsilon scaling."""

    def __init__(
        self,
        sinkhorn: Optional[SinkhornConfig] = None,
        config: Optional[DomDecConfig] = None,
        runner: Optional[TaskRunner] = None,
    ):
        self.sinkhorn_config = sinkhorn or sinkhorn_config
        self.config = config or domdec_config
        self.runner = runner or TaskRunner(self.config.workers)

    def solve(
        self,
        mu: DiscreteMeasure,
        nu: DiscreteMeasure,
        seed: Optional[int] = None,
        with_reference: bool = False,
    ) -> SolveOutcome:
        """
        Run the full schedule: per layer its epsilon stages with alternating
        A/B sweeps, refinement between layers and a final certificate.

        Raises:
            CellSolveError: With the failing layer attached
        """
        start = time.perf_counter()
        hierarchy = build_hierarchy(mu, nu, self.config.cell_size)
        finest = hierarchy.finest.level
        schedule = build_schedule(finest)
        total = PhaseTimer()

        state: Optional[CellState] = None
        engine: Optional[DomainDecompositionSolver] = None
        layers: List[LayerReport] = []
        label = "A"
        sweeps_done = 0
        finest_max_entries = 0

        for level in schedule.layers:
            layer = hierarchy.layers[level]
            stages = schedule.for_layer(level)
            layer_start = time.perf_counter()
            timer = PhaseTimer()
            if state is None:
                state = initialize_product_state(layer.basic, layer.nu, stages[0].epsilon)
            else:
                with timer.phase("refine"):
                    state = refine_state(state, hierarchy, level)

            engine = DomainDecompositionSolver(
                layer.problem(stages[0].epsilon), self.sinkhorn_config, self.config, self.runner
            )
            report = LayerReport(
                level=level,
                side=layer.geometry.side,
                cell_size=layer.basic.cell_size,
            )
            max_entries = state.total_entries()
            k = 0
            try:
                for stage in stages:
                    engine.set_epsilon(stage.epsilon)
                    for _ in range(stage.sweeps):
                        label = "A" if k % 2 == 0 else "B"
                        stats, _ = engine.sweep(state, label)
                        timer.merge(stats.phase_times)
                        max_entries = max(max_entries, state.total_entries())
                        k += 1
                    report.stages.append({"epsilon": stage.epsilon, "sweeps": stage.sweeps})
            except CellSolveError as exc:
                exc.layer = level
                raise

            report.sweeps = k
            report.max_entries = max_entries
            report.final_entries = state.total_entries()
            report.wall_time = time.perf_counter() - layer_start
            report.phase_times = timer.as_dict()
            total.merge(report.phase_times)
            layers.append(report)
            sweeps_done += k
            if level == finest:
                finest_max_entries = max_entries
            logger.info(
                "Layer %d (%dx%d): %d sweeps, %d entries, %.2fs",
                level, layer.geometry.side, layer.geometry.side, k,
                report.final_entries, report.wall_time,
            )

        baseline = None
        if with_reference:
            with total.phase("reference"):
                baseline = reference_solve(mu, nu, schedule.epsilons()).report

        with total.phase("certificate"):
            cert = certificate(
                state, engine, label,
                baseline_dual=baseline.dual_score if baseline is not None else None,
            )
        engine.check_feasibility(state)

        final_entries = state.total_entries()
        report = SolveReport(
            side=mu.geometry.side,
            cell_size=self.config.cell_size,
            sweeps=sweeps_done,
            final_epsilon=schedule.stages[-1].epsilon,
            primal_score=cert.primal_score,
            dual_score=cert.dual_score,
            relative_pd_gap=cert.relative_pd_gap,
            x_marginal_l1=cert.x_marginal_l1,
            y_marginal_l1=cert.y_marginal_l1,
            max_entries=finest_max_entries,
            final_entries=final_entries,
            entries_per_pixel=final_entries / mu.size,
            worker_count=self.runner.num_workers,
            seed=seed,
            wall_time=time.perf_counter() - start,
            phase_times=total.as_dict(),
            layers=layers,
            certificate=cert,
            baseline=baseline,
            relative_dual_score=cert.relative_dual_score,
        )
        logger.info(
            "Solve finished: gap=%.3g x-err=%.3g y-err=%.3g entries/pixel=%.2f",
            report.relative_pd_gap, report.x_marginal_l1, report.y_marginal_l1,
            report.entries_per_pixel,
        )
        return SolveOutcome(report, state, hierarchy, engine, label)

"""
Worst-case instances and the convergence-rate studies run on them.
"""

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import linregress

from domdec.core.config import (
    DomDecConfig,
    SinkhornConfig,
    WorstCaseConfig,
    domdec_config,
    worstcase_config,
)
from domdec.core.errors import DomainError
from domdec.models.measures import CostOracle, DiscreteMeasure
from domdec.models.state import WorstCaseInstance
from domdec.schemas import BoundReport, ConvergenceTrace, StudyReport
from domdec.services.divergence import kl_divergence
from domdec.services.domdec_service import DomainDecompositionSolver, state_from_coupling
from domdec.services.executor import CellTask, TaskRunner
from domdec.services.partition_service import (
    build_chain_partitions,
    build_interval_partitions,
    build_partition_graph,
    rate_bounds,
)
from domdec.services.sinkhorn_service import SinkhornProblem, SinkhornSolver
from domdec.utils.logger import LoggerFactory

logger = LoggerFactory.get_logger(__name__)

STEP_SLACK = 1e-9


def _require_positive_eps(eps: float) -> None:
    if not (math.isfinite(eps) and eps > 0):
        raise DomainError(f"epsilon must be a finite positive number, got {eps!r}")


def make_three_cell(q: float, eps: float) -> WorstCaseInstance:
    """
    Three points with masses (p, q, p), p = (1 - q) / 2, and an anti-diagonal
    start that has to swap the mass of the outer cells.

    Raises:
        DomainError: If q is outside (0, 1) or eps is not positive
    """
    if not (0.0 < q < 1.0):
        raise DomainError(f"q must lie in (0, 1), got {q!r}")
    _require_positive_eps(eps)
    p = (1.0 - q) / 2.0
    cost = np.array([[0.0, 10.0, 1.0], [10.0, 0.0, 10.0], [1.0, 10.0, 0.0]])
    masses = np.array([p, q, p])
    initial = np.array([[0.0, 0.0, p], [0.0, q, 0.0], [p, 0.0, 0.0]])
    mu = DiscreteMeasure(masses)
    basic, a, b = build_chain_partitions(3, mu)
    return WorstCaseInstance(
        "three-cell", cost, mu, DiscreteMeasure(masses), initial, basic, a, b, eps, q
    )


def make_chain(n: int, eps: Optional[float] = None) -> WorstCaseInstance:
    """
    Chain of n uniform cells; swapping the two end masses is cheap only along
    the direct corner pairing.

    Raises:
        DomainError: If n < 3 or eps is not positive
    """
    if n < 3:
        raise DomainError(f"chains need n >= 3, got {n}")
    eps = worstcase_config.chain_eps if eps is None else eps
    _require_positive_eps(eps)
    cost = np.full((n, n), 10.0)
    np.fill_diagonal(cost, 0.0)
    cost[0, n - 1] = cost[n - 1, 0] = 1.0
    initial = np.diag(np.full(n, 1.0 / n))
    initial[0, 0] = initial[n - 1, n - 1] = 0.0
    initial[0, n - 1] = initial[n - 1, 0] = 1.0 / n
    mu = DiscreteMeasure(np.full(n, 1.0 / n))
    basic, a, b = build_chain_partitions(n, mu)
    return WorstCaseInstance(
        f"chain-{n}", cost, mu, DiscreteMeasure(np.full(n, 1.0 / n)), initial, basic, a, b, eps
    )


def make_interval_three_cell(
    points: int = 128, splits: Sequence[int] = (48, 80), eps: float = 0.01
) -> WorstCaseInstance:
    """Uniform measures on [0, 1] sampled at pixel centers, anti-diagonal start."""
    _require_positive_eps(eps)
    x = (np.arange(points) + 0.5) / points
    cost = CostOracle.squared_distance_1d(x, x).block(np.arange(points), np.arange(points))
    weights = np.full(points, 1.0 / points)
    initial = np.fliplr(np.diag(weights))
    mu = DiscreteMeasure(weights)
    basic, a, b = build_interval_partitions(mu, splits)
    return WorstCaseInstance(
        "interval-three-cell", cost, mu, DiscreteMeasure(weights), initial, basic, a, b, eps
    )


def oracle_coupling(instance: WorstCaseInstance, epsilon: Optional[float] = None) -> np.ndarray:
    """Dense high-precision optimal coupling of an instance."""
    eps = instance.epsilon if epsilon is None else epsilon
    problem = SinkhornProblem.global_problem(
        instance.cost, instance.mu.weights, instance.nu.weights, eps
    )
    result = SinkhornSolver(SinkhornConfig.oracle()).solve(problem)
    return result.dense_coupling(instance.cost_matrix.shape)


def oracle_engine(
    instance: WorstCaseInstance, config: Optional[WorstCaseConfig] = None
) -> DomainDecompositionSolver:
    """Engine with dense exact sub-solves and no marginal truncation."""
    config = config or worstcase_config
    return DomainDecompositionSolver(
        instance.problem(),
        sinkhorn=SinkhornConfig.oracle().with_overrides(err=config.sub_solve_err),
        config=domdec_config.with_overrides(truncation_floor=0.0, workers=1),
        runner=TaskRunner(1),
    )


@dataclass
class ContractionFit:
    fitted_lambda: float
    slope: float
    r_squared: float
    start: int
    end: int
    floor_reached: bool


def fit_contraction(
    deltas: Sequence[float],
    fit_fraction: float = 0.5,
    min_points: int = 20,
    floor: float = 1e-14,
) -> ContractionFit:
    """
    Least-squares line through log(delta) over the trailing window.

    The usable segment ends where delta reaches ``floor`` or stops decreasing
    (numerical noise); in that case ``floor_reached`` is set.
    """
    d = np.asarray(deltas, dtype=np.float64)
    end = d.size
    floor_reached = False
    for k in range(d.size):
        if d[k] <= floor or (k > 0 and d[k] >= d[k - 1]):
            end = k
            floor_reached = True
            break
    window = max(min_points, int(math.ceil(end * fit_fraction)))
    start = max(0, end - window)
    if end - start < 2:
        return ContractionFit(math.nan, math.nan, 0.0, start, end, floor_reached)
    fit = linregress(np.arange(start, end), np.log(d[start:end]))
    return ContractionFit(
        math.exp(fit.slope), float(fit.slope), float(fit.rvalue ** 2), start, end, floor_reached
    )


def run_trace(
    instance: WorstCaseInstance,
    sweeps: int,
    config: Optional[WorstCaseConfig] = None,
) -> ConvergenceTrace:
    """
    Alternate A/B sweeps from the instance's initial coupling and record
    ``KL(pi_l | pi*)`` after every sweep.
    """
    config = config or worstcase_config
    if sweeps < 10:
        raise DomainError(f"traces need at least 10 sweeps, got {sweeps}")
    target = oracle_coupling(instance)
    engine = oracle_engine(instance, config)
    state = state_from_coupling(instance.basic, instance.initial_coupling, instance.epsilon)
    shape = instance.cost_matrix.shape

    deltas = [kl_divergence(instance.initial_coupling, target)]
    for k in range(sweeps):
        _, assembled = engine.sweep(state, "A" if k % 2 == 0 else "B", keep_coupling=True)
        deltas.append(max(kl_divergence(assembled.dense(shape), target), 0.0))

    fit = fit_contraction(deltas, config.fit_fraction, config.min_fit_points, config.delta_floor)
    if fit.floor_reached:
        logger.info(
            "%s eps=%g: delta hit its floor at sweep %d; fit over [%d, %d)",
            instance.name, instance.epsilon, fit.end, fit.start, fit.end,
        )
    return ConvergenceTrace(
        instance=instance.name,
        epsilon=instance.epsilon,
        deltas=[float(d) for d in deltas],
        fitted_lambda=fit.fitted_lambda,
        slope=fit.slope,
        r_squared=fit.r_squared,
        fit_start=fit.start,
        fit_end=fit.end,
        floor_reached=fit.floor_reached,
    )


def step_violations(
    deltas: Sequence[float], bound: float, lag: int = 1, slack: float = STEP_SLACK
) -> Tuple[int, float]:
    """Count of ``delta[l] > bound * delta[l - lag] + slack`` for l > lag."""
    d = np.asarray(deltas, dtype=np.float64)
    if d.size <= lag + 1:
        return 0, 0.0
    # the first sweep leaves the start coupling, so pairs begin at l = lag + 1
    excess = d[lag + 1:] - bound * d[1:-lag] - slack
    return int(np.sum(excess > 0)), float(max(excess.max(), 0.0))


def bound_comparison(
    trace: ConvergenceTrace, instance: WorstCaseInstance, study: str = "eps"
) -> BoundReport:
    """
    Compare the fitted contraction with the theoretical bound.

    ``eps`` compares -log(1/lambda - 1) against 2||c||/eps - log(q/(1-q));
    ``q`` compares 1/lambda - 1 against exp(-2||c||/eps) q/(1-q); ``chain``
    compares lambda^M against the n-cell bound.
    """
    graph = build_partition_graph(instance.basic, instance.composite_a, instance.composite_b)
    masses = instance.basic.cell_masses
    bounds = rate_bounds(graph, masses, instance.cost_norm, instance.epsilon)
    lam = trace.fitted_lambda
    vacuous = not (0.0 < lam < 1.0)
    c_over_eps = instance.cost_norm / instance.epsilon

    report = BoundReport(
        instance=instance.name,
        epsilon=instance.epsilon,
        empirical_lambda=lam,
        theoretical_bound=None,
        transformed_empirical=None,
        transformed_bound=None,
        holds=False,
        vacuous=vacuous,
        q=instance.q,
        cells=instance.num_cells,
        r_squared=trace.r_squared,
    )

    if study in ("eps", "q"):
        ratio = masses[1] / (masses[0] + masses[2])
        report.theoretical_bound = bounds.three_cell
        report.step_violations, report.max_step_excess = step_violations(
            trace.deltas, bounds.three_cell
        )
        if study == "eps":
            report.transformed_bound = 2.0 * c_over_eps - math.log(ratio)
            if not vacuous:
                report.transformed_empirical = -math.log(1.0 / lam - 1.0)
                report.holds = report.transformed_empirical <= report.transformed_bound
        else:
            report.transformed_bound = math.exp(-2.0 * c_over_eps) * ratio
            if not vacuous:
                report.transformed_empirical = 1.0 / lam - 1.0
                report.holds = report.transformed_empirical >= report.transformed_bound
    elif study == "chain":
        report.theoretical_bound = bounds.n_cell
        report.vacuous = vacuous or bounds.vacuous
        report.step_violations, report.max_step_excess = step_violations(
            trace.deltas, bounds.n_cell, lag=max(bounds.diameter, 1)
        )
        report.transformed_bound = bounds.n_cell
        if not vacuous:
            report.transformed_empirical = lam ** bounds.diameter
            report.holds = report.transformed_empirical <= bounds.n_cell
    else:
        raise DomainError(f"unknown study {study!r}")
    return report


def _trace_point(instance: WorstCaseInstance, sweeps: int, study: str, config: WorstCaseConfig):
    trace = run_trace(instance, sweeps, config)
    return trace, bound_comparison(trace, instance, study)


def _run_points(
    instances: List[WorstCaseInstance],
    sweeps: int,
    study: str,
    config: WorstCaseConfig,
    runner: Optional[TaskRunner],
) -> List[Tuple[ConvergenceTrace, BoundReport]]:
    runner = runner or TaskRunner()
    tasks = [
        CellTask(k, partial(_trace_point, inst, sweeps, study, config))
        for k, inst in enumerate(instances)
    ]
    return runner.run_batch(tasks)


@dataclass
class StudyResult:
    report: StudyReport
    traces: List[ConvergenceTrace] = field(default_factory=list)


def _law_fit(x: Sequence[float], y: Sequence[Optional[float]]) -> Tuple[float, float, float]:
    pairs = [(a, b) for a, b in zip(x, y) if b is not None and math.isfinite(b)]
    if len(pairs) < 2:
        return math.nan, math.nan, 0.0
    fit = linregress([p[0] for p in pairs], [p[1] for p in pairs])
    return float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2)


def _strictly_increasing(values: Sequence[Optional[float]]) -> bool:
    if any(v is None or not math.isfinite(v) for v in values):
        return False
    return all(b > a for a, b in zip(values, values[1:]))


def eps_study(
    q: Optional[float] = None,
    eps_grid: Optional[Sequence[float]] = None,
    sweeps: Optional[int] = None,
    config: Optional[WorstCaseConfig] = None,
    runner: Optional[TaskRunner] = None,
) -> StudyResult:
    """Three-cell contraction versus epsilon; the law is affine in 1/eps."""
    config = config or worstcase_config
    q = config.three_cell_q if q is None else q
    grid = sorted(config.eps_grid if eps_grid is None else eps_grid)
    sweeps = sweeps or config.three_cell_sweeps
    results = _run_points(
        [make_three_cell(q, e) for e in grid], sweeps, "eps", config, runner
    )
    points = [r[1] for r in results]
    slope, intercept, r2 = _law_fit([1.0 / e for e in grid], [p.transformed_empirical for p in points])
    report = StudyReport(
        study="eps",
        parameter="epsilon",
        values=list(grid),
        points=points,
        law_slope=slope,
        law_intercept=intercept,
        law_r_squared=r2,
        # increasing in 1/eps means decreasing along the ascending eps grid
        monotone=_strictly_increasing([p.transformed_empirical for p in reversed(points)]),
        holds_all=all(p.holds and p.step_violations == 0 for p in points),
    )
    logger.info("Epsilon study: holds=%s monotone=%s R^2=%.4f", report.holds_all, report.monotone, r2)
    return StudyResult(report, [r[0] for r in results])


def q_study(
    eps: Optional[float] = None,
    q_grid: Optional[Sequence[float]] = None,
    sweeps: Optional[int] = None,
    config: Optional[WorstCaseConfig] = None,
    runner: Optional[TaskRunner] = None,
    fit_below: float = 0.2,
) -> StudyResult:
    """Three-cell contraction versus q; 1/lambda - 1 grows proportionally to q."""
    config = config or worstcase_config
    eps = config.q_study_eps if eps is None else eps
    grid = sorted(config.q_grid if q_grid is None else q_grid)
    sweeps = sweeps or config.three_cell_sweeps
    results = _run_points(
        [make_three_cell(q, eps) for q in grid], sweeps, "q", config, runner
    )
    points = [r[1] for r in results]
    small = [(q, p.transformed_empirical) for q, p in zip(grid, points) if q <= fit_below + 1e-12]
    slope, intercept, r2 = _law_fit([s[0] for s in small], [s[1] for s in small])
    report = StudyReport(
        study="q",
        parameter="q",
        values=list(grid),
        points=points,
        law_slope=slope,
        law_intercept=intercept,
        law_r_squared=r2,
        monotone=_strictly_increasing([p.transformed_empirical for p in points]),
        holds_all=all(p.holds and p.step_violations == 0 for p in points),
    )
    logger.info("q study: holds=%s R^2=%.4f", report.holds_all, r2)
    return StudyResult(report, [r[0] for r in results])


def chain_study(
    n_grid: Optional[Sequence[int]] = None,
    eps: Optional[float] = None,
    sweeps: Optional[int] = None,
    config: Optional[WorstCaseConfig] = None,
    runner: Optional[TaskRunner] = None,
) -> StudyResult:
    """Chain contraction versus length; lambda(N) increases toward 1."""
    config = config or worstcase_config
    eps = config.chain_eps if eps is None else eps
    grid = sorted(config.n_grid if n_grid is None else n_grid)
    sweeps = sweeps or config.chain_sweeps
    results = _run_points([make_chain(n, eps) for n in grid], sweeps, "chain", config, runner)
    points = [r[1] for r in results]
    slope, intercept, r2 = _law_fit(list(grid), [p.empirical_lambda for p in points])
    report = StudyReport(
        study="chain",
        parameter="n",
        values=[float(n) for n in grid],
        points=points,
        law_slope=slope,
        law_intercept=intercept,
        law_r_squared=r2,
        monotone=_strictly_increasing([p.empirical_lambda for p in points]),
        holds_all=all(p.step_violations == 0 for p in points),
    )
    logger.info("Chain study: monotone=%s step checks=%s", report.monotone, report.holds_all)
    return StudyResult(report, [r[0] for r in results])


def partial_optimality(
    instance: WorstCaseInstance, samples: int = 101, tol: float = 1e-12
) -> Dict[str, Dict[int, bool]]:
    """
    Whether the initial coupling is optimal for the linear cost within each
    composite cell, checked by sampling every two-by-two exchange that keeps
    the cell's row and column sums.
    """
    pi = instance.initial_coupling
    cost = instance.cost_matrix
    result: Dict[str, Dict[int, bool]] = {}
    for composite in (instance.composite_a, instance.composite_b):
        result[composite.label] = {}
        for g in range(composite.num_groups):
            rows = composite.points(instance.basic, g)
            cols = np.flatnonzero(pi[rows].sum(axis=0) > 0)
            block, c = pi[np.ix_(rows, cols)], cost[np.ix_(rows, cols)]
            optimal = True
            for r1 in range(len(rows)):
                for r2 in range(r1 + 1, len(rows)):
                    for c1 in range(len(cols)):
                        for c2 in range(c1 + 1, len(cols)):
                            lo = -min(block[r1, c1], block[r2, c2])
                            hi = min(block[r1, c2], block[r2, c1])
                            if hi - lo <= 0:
                                continue
                            change = c[r1, c1] + c[r2, c2] - c[r1, c2] - c[r2, c1]
                            ts = np.linspace(lo, hi, samples)
                            if np.any(ts * change < -tol):
                                optimal = False
            result[composite.label][g] = optimal
    return result

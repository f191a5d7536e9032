"""
Command-line entry point.

    python -m domdec solve mu.csv nu.csv --report report.json
    python -m domdec generate --side 64 --seed 7 --out mu.csv
    python -m domdec worstcase three --q 0.3
    python -m domdec worstcase chain --n 8
"""

import argparse
import sys
from typing import List, Optional, Tuple

from domdec.core.config import domdec_config, settings, sinkhorn_config, worstcase_config
from domdec.core.errors import ConfigurationError, DomDecError
from domdec.models.measures import DiscreteMeasure
from domdec.services.executor import TaskRunner
from domdec.services.image_service import generate_image, ingest_image, visualize
from domdec.services.solve_service import MultiscaleSolver
from domdec.services.worstcase_service import (
    StudyResult,
    bound_comparison,
    chain_study,
    eps_study,
    make_chain,
    make_interval_three_cell,
    make_three_cell,
    partial_optimality,
    q_study,
    run_trace,
)
from domdec.utils.file_handler import FileHandler
from domdec.utils.logger import LoggerFactory

logger = LoggerFactory.get_logger(__name__)


def _open_unit(raw: str) -> float:
    try:
        value = float(raw)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"{raw!r} is not a number") from e
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"q must lie in (0, 1), got {value}")
    return value


def _positive(raw: str) -> float:
    try:
        value = float(raw)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"{raw!r} is not a number") from e
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {value}")
    return value


def _add_image_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("mu", nargs="?", help="source image (csv or pgm)")
    p.add_argument("nu", nargs="?", help="target image (csv or pgm)")
    p.add_argument("--format", choices=("csv", "pgm"), help="image format (default: by extension)")
    p.add_argument("--pad", action="store_true", help="zero-pad to the next power of two")
    p.add_argument("--side", type=int, help="generate a random pair of this side instead")
    p.add_argument("--seed", type=int, default=0, help="seed for generated pairs")


def _add_solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cellsize", type=int, default=domdec_config.cell_size)
    p.add_argument("--err", type=_positive, default=sinkhorn_config.err)
    p.add_argument("--truncation", type=float, default=domdec_config.truncation_floor)
    p.add_argument("--theta", type=float, default=sinkhorn_config.truncation_theta)
    p.add_argument("--workers", type=int, help="parallel workers (default: DOMDEC_WORKERS)")
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--coupling", help="export the final coupling as i<TAB>j<TAB>mass")
    p.add_argument("--png", help="write the colored-cell visualization")


def parse_args(argv: List[str]) -> argparse.Namespace:
    """Parse command line arguments."""
    p = argparse.ArgumentParser(
        prog="domdec", description="Entropic optimal transport by domain decomposition"
    )
    p.add_argument("--log-level", default=settings.LOG_LEVEL)
    sub = p.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="multiscale solve of an image pair")
    _add_image_args(solve)
    _add_solver_args(solve)

    reference = sub.add_parser("reference", help="solve plus a single-Sinkhorn baseline")
    _add_image_args(reference)
    _add_solver_args(reference)

    vis = sub.add_parser("visualize", help="solve and render the colored-cell image")
    _add_image_args(vis)
    _add_solver_args(vis)

    gen = sub.add_parser("generate", help="write a seeded Gaussian-mixture image")
    gen.add_argument("--side", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--components", type=int)
    gen.add_argument("--out", required=True, help="CSV output path")

    wc = sub.add_parser("worstcase", help="worst-case convergence studies")
    wc.add_argument("instance", choices=("three", "chain", "interval"))
    wc.add_argument("--q", type=_open_unit, help="middle-cell mass of the three-cell instance")
    wc.add_argument("--eps", type=_positive, help="single epsilon instead of the study grid")
    wc.add_argument("--study", choices=("eps", "q"), default="eps")
    wc.add_argument("--n", type=int, help="single chain length instead of the study grid")
    wc.add_argument("--sweeps", type=int)
    wc.add_argument("--workers", type=int)
    wc.add_argument("--out-dir", default=settings.OUTPUT_DIR)
    return p.parse_args(argv)


def _load_pair(args: argparse.Namespace) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
    if args.side is not None:
        return generate_image(args.side, args.seed), generate_image(args.side, args.seed + 1)
    if not (args.mu and args.nu):
        raise ConfigurationError("give two image paths or --side to generate a pair")
    return (
        ingest_image(args.mu, args.format, args.pad),
        ingest_image(args.nu, args.format, args.pad),
    )


def _solve(args: argparse.Namespace) -> int:
    mu, nu = _load_pair(args)
    config = domdec_config.with_overrides(
        cell_size=args.cellsize, truncation_floor=args.truncation, workers=args.workers
    )
    sinkhorn = sinkhorn_config.with_overrides(err=args.err, truncation_theta=args.theta)
    solver = MultiscaleSolver(sinkhorn, config, TaskRunner(config.workers))
    outcome = solver.solve(
        mu, nu,
        seed=args.seed if args.side is not None else None,
        with_reference=args.command == "reference",
    )

    if args.report:
        FileHandler.write_json(args.report, outcome.report.to_dict())
    if args.coupling:
        coupling = outcome.coupling()
        FileHandler.write_coupling(args.coupling, coupling.rows, coupling.cols, coupling.masses)
    png = args.png or (
        FileHandler.output_path(settings.OUTPUT_DIR, "cells.png")
        if args.command == "visualize" else None
    )
    if png:
        visualize(png, outcome.state, outcome.hierarchy.finest.basic, nu)

    r = outcome.report
    print(
        f"primal={r.primal_score:.10g} dual={r.dual_score:.10g} gap={r.relative_pd_gap:.3g} "
        f"x_err={r.x_marginal_l1:.3g} y_err={r.y_marginal_l1:.3g} "
        f"entries/pixel={r.entries_per_pixel:.2f} time={r.wall_time:.2f}s"
    )
    if r.relative_dual_score is not None:
        print(f"relative dual score={r.relative_dual_score:.3g}")
    return 0


def _generate(args: argparse.Namespace) -> int:
    measure = generate_image(args.side, args.seed, args.components)
    FileHandler.write_csv_image(args.out, measure.as_image())
    return 0


def _write_study(result: StudyResult, out_dir: str) -> None:
    for trace, point in zip(result.traces, result.report.points):
        name = f"trace_{trace.instance}_eps{trace.epsilon:g}"
        if point.q is not None and result.report.study == "q":
            name += f"_q{point.q:g}"
        FileHandler.write_trace_csv(FileHandler.output_path(out_dir, name + ".csv"), trace.rows())
    FileHandler.write_json(
        FileHandler.output_path(out_dir, f"study_{result.report.study}.json"),
        result.report.to_dict(),
    )
    for point in result.report.points:
        print(
            f"{point.instance} eps={point.epsilon:g} q={point.q} lambda={point.empirical_lambda:.6g} "
            f"lhs={point.transformed_empirical} rhs={point.transformed_bound} holds={point.holds}"
        )
    print(
        f"study={result.report.study} holds_all={result.report.holds_all} "
        f"monotone={result.report.monotone} law_r2={result.report.law_r_squared:.4f}"
    )


def _single_trace(instance, sweeps: int, study: str, out_dir: str) -> int:
    trace = run_trace(instance, sweeps)
    report = bound_comparison(trace, instance, study)
    base = f"trace_{instance.name}_eps{instance.epsilon:g}"
    FileHandler.write_trace_csv(FileHandler.output_path(out_dir, base + ".csv"), trace.rows())
    FileHandler.write_json(
        FileHandler.output_path(out_dir, base + ".json"),
        {"trace": trace.to_dict(), "bound": report.to_dict()},
    )
    print(
        f"{instance.name} eps={instance.epsilon:g} lambda={trace.fitted_lambda:.6g} "
        f"r2={trace.r_squared:.4f} holds={report.holds}"
    )
    return 0


def _worstcase(args: argparse.Namespace) -> int:
    runner = TaskRunner(args.workers) if args.workers else None
    out_dir = args.out_dir
    if args.instance == "three":
        q = worstcase_config.three_cell_q if args.q is None else args.q
        instance = make_three_cell(q, args.eps or 1.0)
        logger.info("Three-cell start is cell-wise optimal for the linear cost: %s", partial_optimality(instance))
        sweeps = args.sweeps or worstcase_config.three_cell_sweeps
        if args.eps is not None:
            return _single_trace(instance, sweeps, args.study, out_dir)
        if args.study == "q":
            result = q_study(sweeps=sweeps, runner=runner)
        else:
            result = eps_study(q=q, sweeps=sweeps, runner=runner)
        _write_study(result, out_dir)
        return 0
    if args.instance == "chain":
        sweeps = args.sweeps or worstcase_config.chain_sweeps
        if args.n is not None:
            return _single_trace(make_chain(args.n, args.eps), sweeps, "chain", out_dir)
        _write_study(chain_study(eps=args.eps, sweeps=sweeps, runner=runner), out_dir)
        return 0
    instance = make_interval_three_cell(eps=args.eps or 0.01)
    return _single_trace(instance, args.sweeps or 20, "eps", out_dir)


COMMANDS = {
    "solve": _solve,
    "reference": _solve,
    "visualize": _solve,
    "generate": _generate,
    "worstcase": _worstcase,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main function for command-line usage."""
    args = parse_args(sys.argv[1:] if argv is None else argv)
    LoggerFactory.setup_logging(args.log_level, force=True)
    try:
        return COMMANDS[args.command](args)
    except DomDecError as e:
        logger.error("%s failed: %s", args.command, e)
        return e.exit_code


if __name__ == "__main__":
    raise SystemExit(main())

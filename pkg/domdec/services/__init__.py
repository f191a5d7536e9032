"""Service layer: solvers, partitions, gluing, studies and image handling."""

from .domdec_service import DomainDecompositionSolver
from .executor import CellTask, TaskRunner
from .sinkhorn_service import SinkhornProblem, SinkhornSolver
from .solve_service import MultiscaleSolver, reference_solve

__all__ = [
    "CellTask",
    "DomainDecompositionSolver",
    "MultiscaleSolver",
    "SinkhornProblem",
    "SinkhornSolver",
    "TaskRunner",
    "reference_solve",
]

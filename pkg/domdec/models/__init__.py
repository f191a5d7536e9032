"""
Value types shared by the services.
"""

from .measures import (
    CostOracle,
    DiscreteMeasure,
    GridGeometry,
    KernelBlock,
    SparseMarginal,
    scaled_kernel,
)
from .partition import (
    LABELS,
    BasicPartition,
    CompositePartition,
    PartitionGraph,
    RateBounds,
)
from .state import (
    CellState,
    MultiscaleHierarchy,
    MultiscaleLayer,
    ProblemData,
    Schedule,
    Stage,
    WorstCaseInstance,
)

__all__ = [
    "LABELS",
    "BasicPartition",
    "CellState",
    "CompositePartition",
    "CostOracle",
    "DiscreteMeasure",
    "GridGeometry",
    "KernelBlock",
    "MultiscaleHierarchy",
    "MultiscaleLayer",
    "PartitionGraph",
    "ProblemData",
    "RateBounds",
    "Schedule",
    "SparseMarginal",
    "Stage",
    "WorstCaseInstance",
    "scaled_kernel",
]

"""
Deterministic batch execution of composite-cell tasks.
"""

from __future__ import annotations

import concurrent.futures
import threading
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

from domdec.core.config import domdec_config
from domdec.core.errors import ConfigurationError
from domdec.utils.logger import LoggerFactory

logger = LoggerFactory.get_logger(__name__)


@dataclass(frozen=True)
class CellTask:
    """A unit of work keyed by its composite cell id."""

    cell_id: int
    run: Callable[[], Any]


class _FailureTracker:
    """Smallest failing cell id seen so far, shared by the workers."""

    def __init__(self):
        self._lock = threading.Lock()
        self.cell_id: Optional[int] = None

    def record(self, cell_id: int) -> None:
        with self._lock:
            if self.cell_id is None or cell_id < self.cell_id:
                self.cell_id = cell_id

    def skips(self, cell_id: int) -> bool:
        with self._lock:
            return self.cell_id is not None and cell_id > self.cell_id


class TaskRunner:
    """
    Runs batches of disjoint cell tasks on a thread pool.

    Tasks are sorted by cell id and split into contiguous blocks, one per
    worker. Results come back in cell-id order whatever the completion order.
    """

    def __init__(self, num_workers: Optional[int] = None):
        """Initialize the runner.

        Args:
            num_workers: Number of parallel workers (uses config default if None)
        """
        self.num_workers = num_workers or domdec_config.workers
        if self.num_workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.num_workers}")

    @staticmethod
    def _blocks(tasks: Sequence[CellTask], parts: int) -> List[List[CellTask]]:
        size, extra = divmod(len(tasks), parts)
        blocks, start = [], 0
        for k in range(parts):
            stop = start + size + (1 if k < extra else 0)
            if stop > start:
                blocks.append(list(tasks[start:stop]))
            start = stop
        return blocks

    @staticmethod
    def _run_block(
        block: List[CellTask],
        results: Dict[int, Any],
        errors: Dict[int, BaseException],
        tracker: _FailureTracker,
    ) -> None:
        for task in block:
            if tracker.skips(task.cell_id):
                return
            try:
                results[task.cell_id] = task.run()
            except Exception as exc:
                errors[task.cell_id] = exc
                tracker.record(task.cell_id)
                return

    def run_batch(self, tasks: Sequence[CellTask]) -> List[Any]:
        """Run all tasks and return their results ordered by cell id.

        Raises:
            Exception: The failure of the smallest failing cell id; tasks with
                larger ids may have been skipped
        """
        ordered = sorted(tasks, key=lambda t: t.cell_id)
        ids = [t.cell_id for t in ordered]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("cell ids in a batch must be unique")

        results: Dict[int, Any] = {}
        errors: Dict[int, BaseException] = {}
        tracker = _FailureTracker()

        if self.num_workers == 1 or len(ordered) <= 1:
            # Sequential processing for single worker
            self._run_block(ordered, results, errors, tracker)
        else:
            blocks = self._blocks(ordered, min(self.num_workers, len(ordered)))
            with concurrent.futures.ThreadPoolExecutor(
                max_workers=len(blocks)
            ) as executor:
                futures = [
                    executor.submit(self._run_block, block, results, errors, tracker)
                    for block in blocks
                ]
                for fut in concurrent.futures.as_completed(futures):
                    fut.result()

        if errors:
            first = min(errors)
            logger.error(
                "Cell task %d failed (%d failures in batch of %d)",
                first, len(errors), len(ordered),
            )
            raise errors[first]
        return [results[i] for i in ids]

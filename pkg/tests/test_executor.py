import threading

import pytest

from domdec.core.errors import ConfigurationError
from domdec.services.executor import CellTask, TaskRunner


def _counter_tasks(n: int):
    return [CellTask(i, lambda i=i: i * i) for i in range(n)]


@pytest.mark.parametrize("workers", [1, 2, 4])
def test_results_ordered_by_cell_id(workers):
    tasks = list(reversed(_counter_tasks(4)))
    assert TaskRunner(workers).run_batch(tasks) == [0, 1, 4, 9]


def test_single_worker_runs_in_id_order():
    seen = []
    tasks = [CellTask(i, lambda i=i: seen.append(i)) for i in (3, 0, 2, 1)]
    TaskRunner(1).run_batch(tasks)
    assert seen == [0, 1, 2, 3]


@pytest.mark.parametrize("workers", [1, 2, 4, 8])
def test_smallest_failing_id_is_raised(workers):
    def fail(i):
        raise RuntimeError(f"cell {i}")

    tasks = [
        CellTask(i, (lambda i=i: fail(i)) if i in (3, 5) else (lambda i=i: i))
        for i in range(8)
    ]
    with pytest.raises(RuntimeError, match="cell 3"):
        TaskRunner(workers).run_batch(tasks)


def test_tasks_run_concurrently_with_several_workers():
    barrier = threading.Barrier(2, timeout=5)
    tasks = [CellTask(i, lambda: barrier.wait() is not None) for i in range(2)]
    assert TaskRunner(2).run_batch(tasks) == [True, True]


def test_duplicate_ids_rejected():
    with pytest.raises(ConfigurationError):
        TaskRunner(2).run_batch([CellTask(1, lambda: 0), CellTask(1, lambda: 1)])


def test_invalid_worker_count():
    with pytest.raises(ConfigurationError):
        TaskRunner(-1)


def test_empty_batch():
    assert TaskRunner(3).run_batch([]) == []

from types import SimpleNamespace

import numpy as np
import pytest

from conftest import make_engine
from domdec.core.errors import (
    CellSolveError,
    ConfigurationError,
    ConsistencyError,
    NumericallyInfeasibleError,
)
from domdec.models.measures import SparseMarginal
from domdec.services.domdec_service import (
    balance_dense,
    balance_measures,
    initialize_product_state,
    solve_with_safeguard,
    state_from_coupling,
    truncate_marginal,
)
from domdec.services.worstcase_service import make_three_cell, oracle_engine


class TestBalance:
    def test_donor_gives_from_largest_entry(self):
        matrix = np.array([[0.3, 0.2], [0.1, 0.0]])
        columns = matrix.sum(axis=0)
        outcome = balance_dense(matrix, np.array([0.4, 0.2]))
        np.testing.assert_allclose(matrix, [[0.2, 0.2], [0.2, 0.0]])
        np.testing.assert_allclose(matrix.sum(axis=0), columns)
        assert outcome.new_entries == 0
        assert outcome.mass_moved == pytest.approx(0.1)

    def test_receiver_entries_are_counted(self):
        matrix = np.array([[0.3, 0.2], [0.0, 0.1]])
        outcome = balance_dense(matrix, np.array([0.4, 0.2]))
        np.testing.assert_allclose(matrix.sum(axis=1), [0.4, 0.2])
        assert outcome.new_entries == 1

    def test_balanced_input_untouched(self):
        matrix = np.array([[0.25, 0.25], [0.5, 0.0]])
        before = matrix.copy()
        outcome = balance_dense(matrix, np.array([0.5, 0.5]))
        np.testing.assert_array_equal(matrix, before)
        assert outcome.mass_moved == 0.0

    def test_mass_mismatch_rejected(self):
        with pytest.raises(ConsistencyError):
            balance_dense(np.array([[0.5], [0.5]]), np.array([0.5, 0.6]))

    def test_small_excess_moves_from_largest_entry(self):
        marginals = [
            SparseMarginal(np.array([0, 1]), np.array([0.3, 0.2 + 1e-5])),
            SparseMarginal(np.array([0, 2]), np.array([0.1, 0.4 - 1e-5])),
        ]
        before = marginals[0].to_dense(3) + marginals[1].to_dense(3)
        balanced = balance_measures(marginals, [0.5, 0.5])
        assert [m.total_mass for m in balanced] == pytest.approx([0.5, 0.5], abs=1e-15)
        np.testing.assert_allclose(balanced[1].to_dense(3), [0.1 + 1e-5, 0.0, 0.4 - 1e-5])
        np.testing.assert_allclose(balanced[0].to_dense(3) + balanced[1].to_dense(3), before, rtol=1e-14)

    def test_balance_on_union_support(self):
        marginals = [
            SparseMarginal(np.array([0, 2]), np.array([0.4, 0.2])),
            SparseMarginal(np.array([5]), np.array([0.4])),
        ]
        balanced = balance_measures(marginals, [0.5, 0.5])
        assert [m.total_mass for m in balanced] == pytest.approx([0.5, 0.5])
        total = balanced[0].to_dense(6) + balanced[1].to_dense(6)
        np.testing.assert_allclose(total, [0.4, 0, 0.2, 0, 0, 0.4])


def test_truncate_marginal_keeps_large_entries():
    m = SparseMarginal(np.array([1, 4, 7]), np.array([1e-16, 0.5, 1e-15]))
    kept = truncate_marginal(m, 1e-15)
    assert kept.indices.tolist() == [4, 7]
    assert kept.values.tolist() == [0.5, 1e-15]
    with pytest.raises(ConfigurationError):
        truncate_marginal(m, -1.0)


def test_product_state_is_feasible(grid_problem):
    state = initialize_product_state(grid_problem.basic, grid_problem.nu)
    np.testing.assert_allclose(state.y_marginal(grid_problem.nu.size), grid_problem.nu.weights)
    masses = [state.basic_marginals[i].total_mass for i in range(grid_problem.basic.num_cells)]
    np.testing.assert_allclose(masses, grid_problem.basic.cell_masses)


class TestSweeps:
    def test_sweeps_preserve_basic_masses(self, grid_problem):
        engine = make_engine(grid_problem)
        state = initialize_product_state(grid_problem.basic, grid_problem.nu, 4.0)
        engine.run(state, 4)
        masses = [state.basic_marginals[i].total_mass for i in range(grid_problem.basic.num_cells)]
        np.testing.assert_allclose(masses, grid_problem.basic.cell_masses, rtol=1e-10)
        drift = engine.check_feasibility(state)
        assert drift["y_drift"] < 1e-10

    def test_results_independent_of_worker_count(self, grid_problem):
        states = []
        for workers in (1, 3):
            engine = make_engine(grid_problem, workers=workers, err=1e-6)
            state = initialize_product_state(grid_problem.basic, grid_problem.nu, 4.0)
            engine.run(state, 4)
            states.append(state)
        first, second = states
        for i in first.basic_marginals:
            np.testing.assert_array_equal(first.basic_marginals[i].indices, second.basic_marginals[i].indices)
            np.testing.assert_array_equal(first.basic_marginals[i].values, second.basic_marginals[i].values)

    def test_three_cell_score_decreases(self):
        instance = make_three_cell(0.3, 2.0)
        engine = oracle_engine(instance)
        state = state_from_coupling(instance.basic, instance.initial_coupling, instance.epsilon)
        rows, cols = np.nonzero(instance.initial_coupling)
        initial = engine.kernel.kl_of_coupling(rows, cols, instance.initial_coupling[rows, cols])

        engine.sweep(state, "A")
        _, assembled = engine.sweep(state, "B", keep_coupling=True)
        assert assembled.primal_score < initial
        assert assembled.y_marginal_l1 < 1e-12

    def test_unknown_label_rejected(self, grid_problem):
        engine = make_engine(grid_problem)
        state = initialize_product_state(grid_problem.basic, grid_problem.nu, 4.0)
        with pytest.raises(ConfigurationError):
            engine.sweep(state, "C")

    def test_feasibility_check_detects_drift(self, grid_problem):
        engine = make_engine(grid_problem)
        state = initialize_product_state(grid_problem.basic, grid_problem.nu, 4.0)
        state.basic_marginals[0] = state.basic_marginals[0].scaled(1.5)
        with pytest.raises(ConsistencyError):
            engine.check_feasibility(state)


class _FlakySolver:
    """Fails the first ``failures`` calls, then returns a fixed result."""

    def __init__(self, failures: int):
        self.failures = failures
        self.epsilons = []

    def solve(self, problem, init_log_u, err_tol):
        self.epsilons.append(problem.epsilon)
        if len(self.epsilons) <= self.failures:
            raise NumericallyInfeasibleError("empty row", empty_rows=[0])
        return SimpleNamespace(log_u=np.zeros(2), log_v=np.zeros(2))


class _Problem(SimpleNamespace):
    def with_epsilon(self, epsilon):
        return _Problem(epsilon=epsilon)


def test_safeguard_walks_epsilon_ladder_down():
    solver = _FlakySolver(failures=1)
    _, level = solve_with_safeguard(solver, _Problem(epsilon=0.5), np.zeros(2), 1e-4, 3, "A", 0)
    assert level == 1
    assert solver.epsilons == [0.5, 1.0, 0.5]


def test_safeguard_exhausted():
    solver = _FlakySolver(failures=100)
    with pytest.raises(CellSolveError) as info:
        solve_with_safeguard(solver, _Problem(epsilon=0.5), np.zeros(2), 1e-4, 2, "B", 7)
    assert info.value.label == "B"
    assert info.value.cell == 7
    assert info.value.epsilon == 0.5

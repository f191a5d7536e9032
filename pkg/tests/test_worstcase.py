import math

import numpy as np
import pytest

from domdec.core.errors import DomainError
from domdec.schemas import ConvergenceTrace
from domdec.services.executor import TaskRunner
from domdec.services.worstcase_service import (
    bound_comparison,
    eps_study,
    fit_contraction,
    make_chain,
    make_interval_three_cell,
    make_three_cell,
    oracle_coupling,
    partial_optimality,
    run_trace,
    step_violations,
)


class TestInstances:
    def test_three_cell_masses(self):
        instance = make_three_cell(0.3, 2.0)
        np.testing.assert_allclose(instance.mu.weights, [0.35, 0.3, 0.35])
        np.testing.assert_allclose(instance.initial_coupling.sum(axis=0), instance.nu.weights)
        np.testing.assert_allclose(instance.initial_coupling.sum(axis=1), instance.mu.weights)
        assert instance.q == 0.3
        assert instance.num_cells == 3

    @pytest.mark.parametrize("q", [0.0, 1.0, 1.5, -0.2])
    def test_three_cell_rejects_q(self, q):
        with pytest.raises(DomainError):
            make_three_cell(q, 1.0)

    @pytest.mark.parametrize("eps", [0.0, -1.0, math.inf])
    def test_rejects_epsilon(self, eps):
        with pytest.raises(DomainError):
            make_three_cell(0.3, eps)

    def test_chain_start_is_feasible(self):
        instance = make_chain(6)
        np.testing.assert_allclose(instance.initial_coupling.sum(axis=0), np.full(6, 1 / 6))
        np.testing.assert_allclose(instance.initial_coupling.sum(axis=1), np.full(6, 1 / 6))
        assert instance.initial_coupling[0, 5] == pytest.approx(1 / 6)
        assert instance.epsilon == 1.4

    def test_chain_too_short(self):
        with pytest.raises(DomainError):
            make_chain(2)

    def test_interval_instance(self):
        instance = make_interval_three_cell()
        assert instance.cost_matrix.shape == (128, 128)
        assert [c.size for c in instance.basic.cells] == [48, 32, 48]
        assert instance.initial_coupling[0, 127] == pytest.approx(1 / 128)

    @pytest.mark.parametrize("instance", [make_three_cell(0.2, 1.0), make_chain(4), make_chain(8)])
    def test_start_is_optimal_within_every_cell(self, instance):
        result = partial_optimality(instance, samples=11)
        assert all(all(groups.values()) for groups in result.values())


def test_oracle_coupling_has_instance_marginals():
    instance = make_three_cell(0.3, 2.0)
    pi = oracle_coupling(instance)
    np.testing.assert_allclose(pi.sum(axis=0), instance.nu.weights, rtol=1e-12)
    np.testing.assert_allclose(pi.sum(axis=1), instance.mu.weights, rtol=1e-10)


class TestContractionFit:
    def test_geometric_sequence(self):
        fit = fit_contraction(0.9 ** np.arange(100))
        assert fit.fitted_lambda == pytest.approx(0.9, rel=1e-10)
        assert fit.r_squared == pytest.approx(1.0)
        assert (fit.start, fit.end) == (50, 100)
        assert not fit.floor_reached

    def test_floor_cuts_the_segment(self):
        fit = fit_contraction(0.5 ** np.arange(60))
        assert fit.floor_reached
        assert fit.end == 47
        assert fit.fitted_lambda == pytest.approx(0.5, rel=1e-10)

    def test_plateau_cuts_the_segment(self):
        deltas = np.concatenate([0.8 ** np.arange(30), np.full(10, 0.8 ** 29)])
        fit = fit_contraction(deltas)
        assert fit.floor_reached
        assert fit.end == 30
        assert fit.start == 10
        assert fit.fitted_lambda == pytest.approx(0.8, rel=1e-10)

    def test_too_few_points(self):
        assert math.isnan(fit_contraction([1.0]).fitted_lambda)


def test_step_violations():
    count, excess = step_violations([1.0, 0.5, 0.25, 0.2], 0.5)
    assert count == 1
    assert excess == pytest.approx(0.075)
    assert step_violations([1.0, 0.5], 0.5) == (0, 0.0)
    # lagged pairs compare l with l - 2 starting at l = 3
    count, _ = step_violations([1.0, 0.5, 0.4, 0.2, 0.15], 0.5, lag=2)
    assert count == 0


@pytest.fixture(scope="module")
def short_trace():
    instance = make_three_cell(0.3, 4.0)
    return instance, run_trace(instance, 40)


class TestTrace:
    def test_deltas_never_increase(self, short_trace):
        _, trace = short_trace
        assert len(trace.deltas) == 41
        assert trace.deltas[0] > 0
        assert all(b <= a + 1e-12 for a, b in zip(trace.deltas, trace.deltas[1:]))

    def test_bound_holds(self, short_trace):
        instance, trace = short_trace
        report = bound_comparison(trace, instance, "eps")
        expected = 1.0 / (1.0 + math.exp(-2.0 * instance.cost_norm / 4.0) * 0.3 / 0.7)
        assert report.theoretical_bound == pytest.approx(expected)
        assert report.step_violations == 0
        assert 0.0 < report.empirical_lambda < 1.0
        assert report.holds
        assert report.transformed_bound == pytest.approx(
            2.0 * instance.cost_norm / 4.0 - math.log(0.3 / 0.7)
        )

    def test_q_transform(self, short_trace):
        instance, trace = short_trace
        report = bound_comparison(trace, instance, "q")
        assert report.transformed_empirical == pytest.approx(1.0 / trace.fitted_lambda - 1.0)
        assert report.holds

    def test_unknown_study(self, short_trace):
        instance, trace = short_trace
        with pytest.raises(DomainError):
            bound_comparison(trace, instance, "size")

    def test_too_few_sweeps(self):
        with pytest.raises(DomainError):
            run_trace(make_three_cell(0.3, 4.0), 5)


def test_non_contracting_fit_is_vacuous():
    instance = make_three_cell(0.3, 2.0)
    trace = ConvergenceTrace(instance.name, 2.0, [1.0] * 12, 1.0, 0.0, 0.0, 0, 12)
    report = bound_comparison(trace, instance, "eps")
    assert report.vacuous
    assert not report.holds
    assert report.transformed_empirical is None


def test_small_epsilon_study():
    result = eps_study(q=0.3, eps_grid=[4.0, 3.0], sweeps=30, runner=TaskRunner(2))
    report = result.report
    assert report.values == [3.0, 4.0]
    assert [t.epsilon for t in result.traces] == [3.0, 4.0]
    assert report.holds_all

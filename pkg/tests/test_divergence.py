import math

import numpy as np
import pytest
from scipy import sparse

from domdec.core.errors import DomainError, StructuralError
from domdec.models.measures import CostOracle, DiscreteMeasure
from domdec.services.divergence import ReferenceKernel, dual_score, kl_divergence, phi


def _dense_kernel(cost: CostOracle, mu: DiscreteMeasure, nu: DiscreteMeasure, eps: float):
    return np.exp(-cost.matrix / eps) * np.outer(mu.weights, nu.weights)


def test_phi_values():
    assert phi(0.0) == 1.0
    assert phi(1.0) == 0.0
    assert phi(math.e) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        phi(-0.1)


def test_kl_of_identical_measures_is_zero():
    p = np.array([[0.2, 0.3], [0.1, 0.4]])
    assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-15)


def test_kl_known_value():
    pi = np.array([[0.5, 0.0], [0.0, 0.5]])
    ref = np.full((2, 2), 0.25)
    assert kl_divergence(pi, ref) == pytest.approx(math.log(2.0), rel=1e-14)


def test_kl_is_infinite_without_absolute_continuity():
    pi = np.array([[0.5, 0.5]])
    ref = np.array([[1.0, 0.0]])
    assert kl_divergence(pi, ref) == math.inf


def test_kl_shape_mismatch():
    with pytest.raises(StructuralError):
        kl_divergence(np.ones((2, 2)), np.ones((2, 3)))


def test_kl_sparse_matches_dense(rng):
    pi = rng.uniform(size=(4, 6)) * (rng.uniform(size=(4, 6)) > 0.4)
    ref = rng.uniform(0.1, 1.0, size=(4, 6))
    dense = kl_divergence(pi, ref)
    assert kl_divergence(sparse.csr_matrix(pi), ref) == pytest.approx(dense, rel=1e-12)


def test_kernel_norm_matches_dense_sum(small_dense):
    mu, nu, cost = small_dense
    kernel = ReferenceKernel(cost, mu, nu, 0.7)
    assert kernel.norm() == pytest.approx(_dense_kernel(cost, mu, nu, 0.7).sum(), rel=1e-13)


def test_kl_decomposes_over_cells(small_dense):
    mu, nu, cost = small_dense
    eps = 0.5
    kernel = ReferenceKernel(cost, mu, nu, eps)
    pi = np.outer(mu.weights, nu.weights)
    expected = kl_divergence(pi, _dense_kernel(cost, mu, nu, eps))

    rows, cols = np.nonzero(pi)
    masses = pi[rows, cols]
    first = rows < 2
    split = (
        kernel.entropy_terms(rows[first], cols[first], masses[first])
        + kernel.entropy_terms(rows[~first], cols[~first], masses[~first])
        + kernel.norm()
    )
    assert split == pytest.approx(expected, abs=1e-12)
    assert kernel.kl_of_coupling(rows, cols, masses) == pytest.approx(expected, abs=1e-12)


def test_weak_duality_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        n, m = rng.integers(2, 6, size=2)
        mu = DiscreteMeasure(rng.uniform(0.1, 1.0, n)).normalized()
        nu = DiscreteMeasure(rng.uniform(0.1, 1.0, m)).normalized()
        cost = CostOracle.dense(rng.uniform(0.0, 3.0, (n, m)))
        eps = float(rng.uniform(0.2, 2.0))
        kernel = ReferenceKernel(cost, mu, nu, eps)

        # random feasible coupling: product plus a marginal-preserving exchange
        pi = np.outer(mu.weights, nu.weights)
        t = rng.uniform(0.0, 1.0) * min(pi[0, 0], pi[1, 1])
        pi[0, 0] -= t
        pi[1, 1] -= t
        pi[0, 1] += t
        pi[1, 0] += t

        alpha = rng.uniform(-1.0, 1.0, n)
        beta = rng.uniform(-1.0, 1.0, m)
        primal = kl_divergence(pi, _dense_kernel(cost, mu, nu, eps))
        assert dual_score(alpha, beta, mu, nu, kernel) <= primal + 1e-9


def test_dual_score_is_minus_inf_for_non_finite_potentials(small_dense):
    mu, nu, cost = small_dense
    kernel = ReferenceKernel(cost, mu, nu, 1.0)
    alpha = np.zeros(mu.size)
    alpha[0] = -np.inf
    assert dual_score(alpha, np.zeros(nu.size), mu, nu, kernel) == -math.inf


def test_dual_score_of_zero_potentials_is_zero(small_dense):
    mu, nu, cost = small_dense
    kernel = ReferenceKernel(cost, mu, nu, 1.0)
    assert dual_score(np.zeros(mu.size), np.zeros(nu.size), mu, nu, kernel) == pytest.approx(
        0.0, abs=1e-15
    )


def test_dual_score_is_gauge_invariant(small_dense, rng):
    mu, nu, cost = small_dense
    kernel = ReferenceKernel(cost, mu, nu, 0.5)
    alpha, beta = rng.normal(size=mu.size), rng.normal(size=nu.size)
    shifted = dual_score(alpha + 0.3, beta - 0.3, mu, nu, kernel)
    assert shifted == pytest.approx(dual_score(alpha, beta, mu, nu, kernel), abs=1e-12)

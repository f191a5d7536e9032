"""
Gluing of per-cell dual potentials into one global dual pair, and the
primal-dual certificate.
"""

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Tuple

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.sparse.linalg import cg
from scipy.special import logsumexp

from domdec.core.errors import ConsistencyError
from domdec.models.state import CellState, ProblemData
from domdec.schemas import Certificate
from domdec.services.divergence import ReferenceKernel, dual_score
from domdec.services.domdec_service import DomainDecompositionSolver
from domdec.services.sinkhorn_service import log_y_update
from domdec.utils.logger import LoggerFactory

logger = LoggerFactory.get_logger(__name__)

# vertex count up to which the normal equations are solved densely
DENSE_SOLVE_LIMIT = 4096


@dataclass(frozen=True)
class GlueGraph:
    """A-cells joined once per B-cell overlapping both ends (j1 < j2)."""

    num_vertices: int
    j1: np.ndarray
    j2: np.ndarray
    via: np.ndarray
    weights: np.ndarray
    root: int = 0

    @property
    def num_edges(self) -> int:
        return int(self.weights.size)

    def incidence(self) -> sparse.csr_matrix:
        e = np.arange(self.num_edges)
        return sparse.csr_matrix(
            (
                np.concatenate([np.ones(e.size), -np.ones(e.size)]),
                (np.concatenate([e, e]), np.concatenate([self.j1, self.j2])),
            ),
            shape=(self.num_edges, self.num_vertices),
        )


@dataclass(frozen=True)
class HelmholtzFit:
    potential: np.ndarray
    objective: float
    components: int

    @property
    def flagged(self) -> bool:
        return self.components > 1


def _log_mean_ratio(numerator: np.ndarray, denominator: np.ndarray, mu: np.ndarray, eps: float) -> float:
    """log of the mu-normalized integral of exp((numerator - denominator)/eps)."""
    return float(logsumexp((numerator - denominator) / eps + np.log(mu)) - math.log(np.sum(mu)))


def build_glue_graph(state: CellState, data: ProblemData) -> GlueGraph:
    """
    Edge weights ``log q`` for every pair of A-cells bridged by a B-cell.

    Raises:
        ConsistencyError: If A- or B-potentials have not been computed yet
    """
    if not (state.has_potentials("A") and state.has_potentials("B")):
        raise ConsistencyError("gluing needs at least one A and one B sweep")
    eps = state.epsilon
    basic, comp_a, comp_b = data.basic, data.composite_a, data.composite_b
    group_a = comp_a.group_of(basic.num_cells)
    point_a = [comp_a.points(basic, g) for g in range(comp_a.num_groups)]
    point_b = [comp_b.points(basic, g) for g in range(comp_b.num_groups)]

    def overlap_terms(a_group: int, b_group: int, b_cells):
        pts = np.sort(np.concatenate([basic.cells[i] for i in b_cells]))
        alpha_a = state.potential("A", a_group, point_a[a_group].size)[
            np.searchsorted(point_a[a_group], pts)
        ]
        alpha_b = state.potential("B", b_group, point_b[b_group].size)[
            np.searchsorted(point_b[b_group], pts)
        ]
        return pts, alpha_a, alpha_b

    j1s, j2s, vias, weights = [], [], [], []
    for gb, group in enumerate(comp_b.groups):
        by_a = {}
        for i in group:
            by_a.setdefault(int(group_a[i]), []).append(i)
        for first, second in combinations(sorted(by_a), 2):
            pts1, a1, b1 = overlap_terms(first, gb, by_a[first])
            pts2, a2, b2 = overlap_terms(second, gb, by_a[second])
            mu1, mu2 = data.mu.weights[pts1], data.mu.weights[pts2]
            if mu1.sum() <= 0 or mu2.sum() <= 0:
                logger.debug("Skipping glue edge %d-%d via B%d: zero-mass overlap", first, second, gb)
                continue
            weight = _log_mean_ratio(a1, b1, mu1, eps) + _log_mean_ratio(b2, a2, mu2, eps)
            j1s.append(first)
            j2s.append(second)
            vias.append(gb)
            weights.append(weight)

    return GlueGraph(
        num_vertices=comp_a.num_groups,
        j1=np.asarray(j1s, dtype=np.int64),
        j2=np.asarray(j2s, dtype=np.int64),
        via=np.asarray(vias, dtype=np.int64),
        weights=np.asarray(weights, dtype=np.float64),
    )


def fit_objective(graph: GlueGraph, potential: np.ndarray) -> float:
    """Sum of squared residuals ``(V(j1) - V(j2)) - w`` over all edges."""
    residual = potential[graph.j1] - potential[graph.j2] - graph.weights
    return float(np.sum(residual * residual))


def helmholtz_fit(graph: GlueGraph) -> HelmholtzFit:
    """
    Least-squares vertex potential with ``V(j1) - V(j2) ~ w`` on every edge.

    Each connected component is gauged to zero at its smallest vertex (the
    root for the root's component).
    """
    n = graph.num_vertices
    potential = np.zeros(n)
    if graph.num_edges == 0:
        return HelmholtzFit(potential, 0.0, n)

    incidence = graph.incidence()
    laplacian = (incidence.T @ incidence).tocsr()
    rhs = incidence.T @ graph.weights
    components, labels = connected_components(laplacian, directed=False)

    for comp in range(components):
        members = np.flatnonzero(labels == comp)
        gauge = graph.root if graph.root in members else members[0]
        free = members[members != gauge]
        if free.size == 0:
            continue
        sub = laplacian[free][:, free]
        if n <= DENSE_SOLVE_LIMIT:
            potential[free] = linalg.solve(sub.toarray(), rhs[free], assume_a="pos")
        else:
            solution, info = cg(sub, rhs[free], rtol=1e-12, maxiter=10 * free.size)
            if info != 0:
                logger.warning("Conjugate gradient stopped with info=%d", info)
            potential[free] = solution

    if components > 1:
        logger.warning("Glue graph has %d components; each gauged separately", components)
    return HelmholtzFit(potential, fit_objective(graph, potential), components)


def chained_fit(graph: GlueGraph) -> np.ndarray:
    """
    Potential obtained by walking a breadth-first tree from the root and
    matching each tree edge exactly.
    """
    n = graph.num_vertices
    potential = np.zeros(n)
    if graph.num_edges == 0:
        return potential
    adjacency = sparse.coo_matrix(
        (np.ones(graph.num_edges), (graph.j1, graph.j2)), shape=(n, n)
    ).tocsr()
    order, predecessors = breadth_first_order(
        adjacency, graph.root, directed=False, return_predecessors=True
    )
    for v in order[1:]:
        p = predecessors[v]
        forward = np.flatnonzero((graph.j1 == p) & (graph.j2 == v))
        if forward.size:
            potential[v] = potential[p] - graph.weights[forward[0]]
        else:
            backward = np.flatnonzero((graph.j1 == v) & (graph.j2 == p))
            potential[v] = potential[p] + graph.weights[backward[0]]
    return potential


def glue_x_potential(state: CellState, fit: HelmholtzFit, data: ProblemData) -> np.ndarray:
    """
    Global X-potential ``alpha_{A,J} - eps * V_J`` on each A-cell.

    The minus sign pairs with edge weights ``V(J1) - V(J2) ~ log q``: with it,
    consistent cell potentials glue to a global maximizer.
    """
    alpha = np.zeros(data.mu.size)
    comp_a = data.composite_a
    for g in range(comp_a.num_groups):
        rows = comp_a.points(data.basic, g)
        alpha[rows] = state.potential("A", g, rows.size) - state.epsilon * fit.potential[g]
    return alpha


def glue_duals(
    state: CellState, fit: HelmholtzFit, data: ProblemData
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Global potentials from the A-cell potentials shifted by ``-eps * V``.

    The Y-potential at each point is the nu_J-weighted mean of the shifted
    per-cell Y-potentials; points no A-cell marginal reaches fall back to the
    c-transform of the glued X-potential.
    """
    eps = state.epsilon
    basic, comp_a = data.basic, data.composite_a
    mu_w, nu_w = data.mu.weights, data.nu.weights
    alpha = glue_x_potential(state, fit, data)
    beta_sum = np.zeros(data.nu.size)
    weight_sum = np.zeros(data.nu.size)

    for g, group in enumerate(comp_a.groups):
        rows = comp_a.points(basic, g)
        alpha_cell = state.potential("A", g, rows.size)

        nu_cell = state.cell_marginal(group)
        cols = nu_cell.indices
        if cols.size == 0:
            continue
        beta_cell = log_y_update(
            data.cost, rows, cols, alpha_cell, np.log(mu_w[rows]), eps
        ) + eps * np.log(nu_cell.values / nu_w[cols])
        beta_sum[cols] += nu_cell.values * (beta_cell + eps * fit.potential[g])
        weight_sum[cols] += nu_cell.values

    beta = np.zeros(data.nu.size)
    reached = weight_sum > 0
    beta[reached] = beta_sum[reached] / weight_sum[reached]
    missing = np.flatnonzero((~reached) & (nu_w > 0))
    if missing.size:
        x = data.mu.support
        beta[missing] = log_y_update(
            data.cost, x, missing, alpha[x], np.log(mu_w[x]), eps
        )
        logger.debug("Y-potential fallback on %d points", missing.size)
    return alpha, beta


def certificate(
    state: CellState,
    engine: DomainDecompositionSolver,
    label: str = "B",
    baseline_dual: Optional[float] = None,
) -> Certificate:
    """
    Assembled primal score, glued dual score and the relative primal-dual gap
    ``(KL - J) / (KL - ||K||)``; also the relative dual score against a
    baseline dual when one is given.
    """
    data = engine.data
    assembled = engine.assemble_coupling(state, label)
    fit = helmholtz_fit(build_glue_graph(state, data))
    alpha, beta = glue_duals(state, fit, data)
    kernel: ReferenceKernel = engine.kernel
    norm = kernel.norm()
    dual = dual_score(alpha, beta, data.mu, data.nu, kernel)
    primal = assembled.primal_score
    gap = (primal - dual) / (primal - norm) if primal != norm else 0.0

    relative_dual = None
    if baseline_dual is not None:
        relative_dual = relative_dual_score(baseline_dual, dual, norm)

    return Certificate(
        primal_score=primal,
        dual_score=dual,
        kernel_norm=norm,
        relative_pd_gap=gap,
        x_marginal_l1=assembled.x_marginal_l1,
        y_marginal_l1=assembled.y_marginal_l1,
        relative_dual_score=relative_dual,
        glue_residual=fit.objective,
        glue_components=fit.components,
    )


def relative_dual_score(baseline_dual: float, dual: float, kernel_norm: float) -> float:
    """``(J_baseline - J) / (J - ||K||)``."""
    return (baseline_dual - dual) / (dual - kernel_norm)

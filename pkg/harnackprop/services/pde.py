"""Monotone upwind discretization of ``L u = 0`` with Dirichlet data on the
inside cells of a grid, and the harmonic-measure machinery built on it.

Nodes are the inside cells in flat-index order. Boundary nodes are inside
cells with a face neighbour outside the domain or beyond the grid edge; the
other nodes are interior. Functions here take node indices; ``node_of`` and
``nodes_of_cells`` translate points and grid cells.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import splu

from harnackprop.errors import (
    DegeneracyError,
    MonotonicityError,
    NonConvergence,
    NonDiagonalError,
    PreconditionError,
)
from harnackprop.services.operator import BarrierParams, OperatorSpec, drift_expand
from harnackprop.services.reach import Grid
from harnackprop.utils import expr

logger = logging.getLogger(__name__)

OFF_DIAGONAL_TOL = 1e-12
EDGE_TOL = 1e-12
MEASURE_SUM_TOL = 1e-8
MEASURE_NEGATIVE_TOL = 1e-10
STAGNATION_WINDOW = 5000


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    grid: Grid
    node_cells: np.ndarray
    boundary: np.ndarray
    offdiag: sparse.csr_matrix
    diagonal: np.ndarray

    @property
    def size(self) -> int:
        return int(self.node_cells.shape[0])

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary

    @property
    def matrix(self) -> sparse.csr_matrix:
        return (self.offdiag + sparse.diags(self.diagonal)).tocsr()

    def points(self) -> np.ndarray:
        return self.grid.centers(self.node_cells)

    def node_of(self, point: Sequence[float]) -> int:
        cell = int(self.grid.cell_of(point)[0])
        nodes = self.nodes_of_cells([cell]) if cell >= 0 else np.empty(0, dtype=np.int64)
        if nodes.size == 0:
            raise PreconditionError(f"point {list(point)} is not in a grid node")
        return int(nodes[0])

    def nodes_of_cells(self, cells: np.ndarray | Sequence[int]) -> np.ndarray:
        """Node indices of the given cells; cells that are not nodes are dropped."""
        cells = np.asarray(cells, dtype=np.int64)
        position = np.searchsorted(self.node_cells, cells)
        position = np.clip(position, 0, max(self.size - 1, 0))
        hit = self.node_cells[position] == cells
        return position[hit]

    def neighbors(self, node: int) -> list[tuple[int, float]]:
        start, stop = self.offdiag.indptr[node], self.offdiag.indptr[node + 1]
        return list(zip(self.offdiag.indices[start:stop].tolist(), self.offdiag.data[start:stop].tolist()))

    def apply(self, values: np.ndarray) -> np.ndarray:
        """``(L v)_i = sum_k w_ik (v_k - v_i)`` at interior nodes, 0 at boundary nodes."""
        values = np.asarray(values, dtype=float)
        counts = np.diff(self.offdiag.indptr)
        rows = np.repeat(np.arange(self.size), counts)
        terms = self.offdiag.data * (values[self.offdiag.indices] - values[rows])
        return np.bincount(rows, weights=terms, minlength=self.size)


@dataclass(frozen=True, eq=False)
class DiscreteSolution:
    values: np.ndarray
    residual: float
    iterations: int
    method: str = "relaxation"


@dataclass(frozen=True, eq=False)
class HarmonicMeasureRow:
    node: int
    weights: np.ndarray
    total: float


@dataclass(frozen=True)
class HarnackEstimate:
    ratio: float
    infinite: bool
    witness_boundary: int
    witness_k: int
    eps: float


@dataclass(frozen=True)
class BarrierReport:
    min_w: float
    max_lw: float

    @property
    def passed(self) -> bool:
        return self.min_w > 0 and self.max_lw < 0


def _check_diagonal(op: OperatorSpec, grid: Grid, samples: int) -> None:
    points = None
    for i in range(op.n):
        for j in range(op.n):
            entry = op.a[i][j]
            if i == j or expr.is_zero(entry):
                continue
            if points is None:
                points = grid.domain.sample(samples)
            values = expr.evaluate(entry, points.T)
            if np.max(np.abs(values)) > OFF_DIAGONAL_TOL:
                raise NonDiagonalError(
                    f"a{i + 1}{j + 1} = {expr.to_string(entry)} is not zero; only diagonal A can be discretized"
                )


def discretize(op: OperatorSpec, grid: Grid, samples: int = 200) -> DiscreteOperator:
    """``sum_j a_jj (second difference) + c_j (upwind difference)`` at interior nodes.

    For ``c_j > 0`` the first difference uses the ``+h`` neighbour, for
    ``c_j < 0`` the ``-h`` neighbour, so every off-diagonal weight is
    ``a_jj / h^2`` plus a nonnegative upwind part.
    """
    if grid.ndim != op.n:
        raise PreconditionError(f"grid dimension {grid.ndim} does not match operator dimension {op.n}")
    _check_diagonal(op, grid, samples)

    node_cells = grid.inside_cells()
    node_of_cell = np.full(grid.size, -1, dtype=np.int64)
    node_of_cell[node_cells] = np.arange(node_cells.size)
    mask = grid.inside.reshape(grid.shape)
    structure = ndimage.generate_binary_structure(grid.ndim, 1)
    interior_mask = ndimage.binary_erosion(mask, structure=structure, border_value=0).ravel()
    interior_nodes = node_of_cell[np.flatnonzero(interior_mask)]
    boundary = np.ones(node_cells.size, dtype=bool)
    boundary[interior_nodes] = False
    if interior_nodes.size == 0:
        raise PreconditionError("grid has no interior nodes")

    cells = node_cells[interior_nodes]
    columns = grid.centers(cells).T
    index = grid.multi_index(cells)
    drift = drift_expand(op)
    h = grid.h

    rows, cols, weights = [], [], []
    for j in range(op.n):
        a = np.asarray(expr.evaluate(op.a[j][j], columns))
        c = np.asarray(expr.evaluate(drift[j], columns))
        forward = a / h**2 + np.maximum(c, 0.0) / h
        backward = a / h**2 + np.maximum(-c, 0.0) / h
        for shift, weight in ((1, forward), (-1, backward)):
            neighbour = index.copy()
            neighbour[:, j] += shift
            flat = np.ravel_multi_index(tuple(neighbour.T), grid.shape)
            rows.append(interior_nodes)
            cols.append(node_of_cell[flat])
            weights.append(weight)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    weights = np.concatenate(weights)

    negative = weights < 0
    if np.any(negative):
        node = int(rows[np.flatnonzero(negative)[0]])
        raise MonotonicityError(f"negative stencil weight at node {grid.centers([node_cells[node]])[0].tolist()}")
    keep = weights > 0
    offdiag = sparse.csr_matrix((weights[keep], (rows[keep], cols[keep])), shape=(node_cells.size,) * 2)
    offdiag.sum_duplicates()
    diagonal = -np.asarray(offdiag.sum(axis=1)).ravel()

    dead = interior_nodes[diagonal[interior_nodes] == 0]
    if dead.size:
        where = grid.centers([node_cells[dead[0]]])[0].tolist()
        raise DegeneracyError(f"all coefficients vanish at node {where} ({dead.size} such nodes)")

    L = DiscreteOperator(grid=grid, node_cells=node_cells, boundary=boundary, offdiag=offdiag, diagonal=diagonal)
    _check_irreducible(L)
    logger.info(
        "Discretized on %d nodes (%d interior, %d boundary), %d couplings",
        L.size,
        interior_nodes.size,
        int(boundary.sum()),
        offdiag.nnz,
    )
    return L


def _edge_graph(L: DiscreteOperator) -> sparse.csr_matrix:
    graph = L.offdiag.copy()
    graph.data[graph.data <= EDGE_TOL] = 0.0
    graph.eliminate_zeros()
    return graph


def _check_irreducible(L: DiscreteOperator) -> None:
    """Every interior node must couple through positive weights to a boundary node."""
    reverse = _edge_graph(L).T.tocsr()
    source = L.size
    boundary_nodes = np.flatnonzero(L.boundary)
    extra = sparse.csr_matrix(
        (np.ones(boundary_nodes.size), (np.full(boundary_nodes.size, source), boundary_nodes)),
        shape=(source + 1, source + 1),
    )
    padded = sparse.bmat([[reverse, None], [None, sparse.csr_matrix((1, 1))]]).tocsr() + extra
    seen = csgraph.breadth_first_order(padded, source, directed=True, return_predecessors=False)
    stranded = np.setdiff1d(np.flatnonzero(L.interior), seen)
    if stranded.size:
        where = L.points()[stranded[0]].tolist()
        raise DegeneracyError(f"node {where} does not couple to the boundary ({stranded.size} such nodes)")


def boundary_values(L: DiscreteOperator, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Data vector over all nodes with ``func`` (on rows of centres) at boundary nodes."""
    g = np.zeros(L.size)
    g[L.boundary] = func(L.points()[L.boundary])
    return g


def _full_data(L: DiscreteOperator, g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    values = np.zeros(L.size)
    if g.shape == (L.size,):
        values[L.boundary] = g[L.boundary]
    elif g.shape == (int(L.boundary.sum()),):
        values[L.boundary] = g
    else:
        raise PreconditionError(f"boundary data has shape {g.shape}, expected ({L.size},) or per boundary node")
    return values


def solve(
    L: DiscreteOperator,
    g: np.ndarray,
    tol: float = 1e-10,
    maxiter: int = 10**6,
    method: str = "relaxation",
) -> DiscreteSolution:
    """Dirichlet problem with data ``g`` (over all nodes or over boundary nodes only).

    ``relaxation`` updates every interior node from the previous iterate
    (``u_i <- sum_k w_ik u_k / sum_k w_ik``) until the largest update is below
    ``tol``. ``direct`` factorizes the interior block.
    """
    u = _full_data(L, g)
    interior = L.interior
    if method == "direct":
        return _solve_direct(L, u)
    if method != "relaxation":
        raise PreconditionError(f"unknown solver method {method!r}")

    boundary_data = u[L.boundary]
    u[interior] = float(np.mean(boundary_data)) if boundary_data.size else 0.0
    scale = np.where(interior, -L.diagonal, 1.0)
    best = np.inf
    best_at = 0
    residual = np.inf
    for sweep in range(1, maxiter + 1):
        update = L.apply(u) / scale
        residual = float(np.max(np.abs(update[interior])))
        if residual <= tol:
            logger.info("Relaxation converged in %d sweeps, residual %.3e", sweep, residual)
            return DiscreteSolution(values=u, residual=residual, iterations=sweep)
        if residual < best:
            best, best_at = residual, sweep
        elif sweep - best_at >= STAGNATION_WINDOW:
            logger.warning("Relaxation stagnated at residual %.3e after %d sweeps", best, sweep)
            raise NonConvergence(best, sweep)
        u = u + update
        if sweep % 10000 == 0:
            logger.debug("Sweep %d: residual %.3e", sweep, residual)
    raise NonConvergence(residual, maxiter)


def _solve_direct(L: DiscreteOperator, u: np.ndarray) -> DiscreteSolution:
    interior = np.flatnonzero(L.interior)
    boundary = np.flatnonzero(L.boundary)
    full = L.matrix
    block = full[interior][:, interior].tocsc()
    rhs = -(full[interior][:, boundary] @ u[boundary])
    u[interior] = splu(block).solve(rhs)
    residual = float(np.max(np.abs(L.apply(u)[interior] / L.diagonal[interior])))
    logger.info("Direct solve on %d interior nodes, residual %.3e", interior.size, residual)
    return DiscreteSolution(values=u, residual=residual, iterations=1, method="direct")


def harmonic_measures(L: DiscreteOperator, nodes: Sequence[int]) -> np.ndarray:
    """Measure weights ``(len(nodes), boundary nodes)`` from one factorization.

    Row ``x`` is ``-(L_IB)^T L_II^{-T} e_x``: the value at ``x`` of the solution
    with indicator data at each boundary node.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    interior = np.flatnonzero(L.interior)
    position = np.full(L.size, -1, dtype=np.int64)
    position[interior] = np.arange(interior.size)
    if nodes.size and np.any(position[nodes] < 0):
        bad = int(nodes[np.flatnonzero(position[nodes] < 0)[0]])
        raise PreconditionError(f"node {L.points()[bad].tolist()} is not an interior node")

    boundary = np.flatnonzero(L.boundary)
    full = L.matrix
    factor = splu(full[interior][:, interior].tocsc())
    unit = np.zeros((interior.size, nodes.size))
    unit[position[nodes], np.arange(nodes.size)] = 1.0
    adjoint = factor.solve(unit, trans="T")
    weights = -(full[interior][:, boundary].T @ adjoint).T
    totals = weights.sum(axis=1)
    if weights.size and (np.max(np.abs(totals - 1.0)) > MEASURE_SUM_TOL or weights.min() < -MEASURE_NEGATIVE_TOL):
        logger.warning(
            "Harmonic measure drift: sums in [%.12g, %.12g], smallest weight %.3e",
            totals.min(),
            totals.max(),
            weights.min(),
        )
    return weights


def harmonic_measure(L: DiscreteOperator, x: int) -> HarmonicMeasureRow:
    weights = harmonic_measures(L, [x])[0]
    return HarmonicMeasureRow(node=int(x), weights=weights, total=float(weights.sum()))


def boundary_nodes(L: DiscreteOperator) -> np.ndarray:
    return np.flatnonzero(L.boundary)


def nodes_in_box(L: DiscreteOperator, box: Sequence[Sequence[float]], interior_only: bool = True) -> np.ndarray:
    """Nodes whose centres lie in the closed box ``[[lo, hi], ...]``."""
    box = np.asarray(box, dtype=float)
    points = L.points()
    hit = np.all((points >= box[:, 0]) & (points <= box[:, 1]), axis=1)
    if interior_only:
        hit &= L.interior
    return np.flatnonzero(hit)


def harnack_ratio(L: DiscreteOperator, x0: int, K: Sequence[int], eps: float = 1e-12) -> HarnackEstimate:
    """Best constant ``C`` with ``max_K u <= C u(x0)`` for every nonnegative
    discrete solution: the largest ratio ``mu_x(y) / mu_x0(y)`` over ``x`` in
    ``K`` and boundary atoms ``y`` that ``K`` sees with weight above ``eps``.

    An atom seen from ``K`` that the stencil graph cannot carry ``x0`` to makes
    the ratio infinite. Atoms inside that support keep their (possibly tiny)
    weight at ``x0``.
    """
    K = np.asarray(K, dtype=np.int64)
    if K.size == 0:
        raise PreconditionError("K has no interior nodes")
    weights = harmonic_measures(L, np.concatenate([[x0], K]))
    at_x0, on_k = weights[0], weights[1:]
    best_k = on_k.max(axis=0)
    which_k = on_k.argmax(axis=0)
    boundary = boundary_nodes(L)

    support = np.zeros(L.size, dtype=bool)
    support[csgraph.breadth_first_order(_edge_graph(L), int(x0), directed=True, return_predecessors=False)] = True
    visible = best_k > eps
    seen = visible & support[boundary] & (at_x0 > 0)
    hidden = visible & ~seen
    if np.any(hidden):
        atom = int(np.argmax(np.where(hidden, best_k, -np.inf)))
        logger.info("Harnack ratio infinite: %d atoms seen from K but not from x0", int(hidden.sum()))
        return HarnackEstimate(
            ratio=float("inf"),
            infinite=True,
            witness_boundary=int(boundary[atom]),
            witness_k=int(K[which_k[atom]]),
            eps=eps,
        )
    ratios = np.where(seen, best_k / np.where(seen, at_x0, 1.0), -np.inf)
    atom = int(np.argmax(ratios))
    ratio = float(ratios[atom])
    logger.info("Harnack ratio %.6g over %d nodes of K", ratio, K.size)
    return HarnackEstimate(
        ratio=ratio,
        infinite=False,
        witness_boundary=int(boundary[atom]),
        witness_k=int(K[which_k[atom]]),
        eps=eps,
    )


def absorbent_hull(L: DiscreteOperator, x0: int) -> np.ndarray:
    """Grid cells of the forward closure of ``x0`` along couplings above ``1e-12``."""
    order = csgraph.breadth_first_order(_edge_graph(L), int(x0), directed=True, return_predecessors=False)
    return np.sort(L.node_cells[order])


def check_barrier(L: DiscreteOperator, bp: BarrierParams) -> BarrierReport:
    w = bp.w(L.points())
    lw = L.apply(w)[L.interior]
    report = BarrierReport(min_w=float(w.min()), max_lw=float(lw.max()))
    logger.info("Barrier check: min w=%.6g, max Lw=%.6g", report.min_w, report.max_lw)
    return report


def check_amano(
    L: DiscreteOperator, u: DiscreteSolution, x0: int, P: Sequence[int], tol: float = 1e-8
) -> bool:
    """If ``u`` peaks at ``x0``, ``u`` must equal ``u(x0)`` on ``P`` up to ``tol``."""
    values = u.values
    peak = float(values[x0])
    if peak < float(values.max()) - tol:
        return True
    P = np.asarray(P, dtype=np.int64)
    if P.size == 0:
        return True
    return bool(np.max(np.abs(values[P] - peak)) <= tol)

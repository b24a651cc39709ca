from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from harnackprop.errors import ConfigError
from harnackprop.handlers.common import RunContext
from harnackprop.services import pde, reach
from harnackprop.ui.renderers import render_flag, render_record
from harnackprop.utils import expr
from harnackprop.utils.tables import coordinate_headers

logger = logging.getLogger(__name__)


def boundary_data(ctx: RunContext, L: pde.DiscreteOperator, x0: int) -> np.ndarray:
    data = ctx.config.pde.boundary
    kind = data["kind"]
    if kind == "constant":
        return pde.boundary_values(L, lambda p: np.full(p.shape[0], data["value"]))
    if kind == "expression":
        tree = expr.parse(data["expr"], ctx.op.n)
        return pde.boundary_values(L, lambda p: np.asarray(expr.evaluate(tree, p.T), dtype=float))
    if kind == "indicator":
        box = np.asarray(data["box"], dtype=float)
        if box.shape != (ctx.op.n, 2):
            raise ConfigError(f"pde.boundary.box needs {ctx.op.n} intervals")

        def indicator(p: np.ndarray) -> np.ndarray:
            inside = np.all((p >= box[:, 0]) & (p <= box[:, 1]), axis=1)
            return np.where(inside, data["inside"], data["outside"])

        return pde.boundary_values(L, indicator)
    row = pde.harmonic_measure(L, x0)
    g = np.zeros(L.size)
    g[pde.boundary_nodes(L)] = (row.weights > ctx.config.harnack.eps).astype(float)
    return g


def _setup(ctx: RunContext) -> tuple[pde.DiscreteOperator, int]:
    L = pde.discretize(ctx.op, ctx.grid(), ctx.config.analysis.samples)
    return L, L.node_of(ctx.x0)


def solve_command(ctx: RunContext) -> list[Path]:
    section = ctx.config.pde
    L, x0 = _setup(ctx)
    g = boundary_data(ctx, L, x0)
    solution = pde.solve(L, g, tol=section.tol, maxiter=section.maxiter, method=section.method)
    values = solution.values
    data = values[L.boundary]
    inner = values[L.interior]
    principle = bool(inner.min() >= data.min() - 1e-9 and inner.max() <= data.max() + 1e-9)
    hull = L.nodes_of_cells(pde.absorbent_hull(L, x0))
    peak_on_hull = pde.check_amano(L, solution, x0, hull[L.interior[hull]])

    points = L.points()
    rows = [
        [int(node), *points[node].tolist(), bool(L.boundary[node]), float(values[node])]
        for node in range(L.size)
    ]
    record = render_record(
        "solve",
        [
            ("method", solution.method),
            ("nodes", L.size),
            ("boundary nodes", int(L.boundary.sum())),
            ("iterations", solution.iterations),
            ("residual", solution.residual),
            ("u(x0)", float(values[x0])),
            ("min u", float(values.min())),
            ("max u", float(values.max())),
            ("maximum principle", render_flag(principle)),
            ("constant on hull if peak at x0", render_flag(peak_on_hull)),
        ],
        ctx.precision,
    )
    headers = ["node", *coordinate_headers(ctx.op.n), "boundary", "u"]
    return [ctx.write_csv("solve", headers, rows), ctx.write_text("solve", record)]


def measure_command(ctx: RunContext) -> list[Path]:
    L, x0 = _setup(ctx)
    node = L.node_of(ctx.config.pde.node) if ctx.config.pde.node is not None else x0
    row = pde.harmonic_measure(L, node)
    boundary = pde.boundary_nodes(L)
    points = L.points()
    rows = [
        [int(b), *points[b].tolist(), float(w)]
        for b, w in zip(boundary, row.weights)
    ]
    record = render_record(
        "measure",
        [
            ("node", node),
            ("point", points[node]),
            ("atoms", boundary.size),
            ("atoms above eps", int(np.count_nonzero(row.weights > ctx.config.harnack.eps))),
            ("sum", row.total),
            ("min weight", float(row.weights.min())),
        ],
        ctx.precision,
    )
    headers = ["node", *coordinate_headers(ctx.op.n), "weight"]
    return [ctx.write_csv("measure", headers, rows), ctx.write_text("measure", record)]


def harnack_command(ctx: RunContext) -> list[Path]:
    section = ctx.config.harnack
    if not section.K:
        raise ConfigError("harnack.K is required")
    L, x0 = _setup(ctx)
    K = pde.nodes_in_box(L, section.K)
    estimate = pde.harnack_ratio(L, x0, K, section.eps)
    points = L.points()
    record = render_record(
        "harnack",
        [
            ("ratio", "INF" if estimate.infinite else estimate.ratio),
            ("witness boundary", points[estimate.witness_boundary]),
            ("witness K", points[estimate.witness_k]),
            ("K nodes", K.size),
            ("eps", estimate.eps),
            ("h", L.grid.h),
        ],
        ctx.precision,
    )
    return [ctx.write_text("harnack", record)]


def absorbent_command(ctx: RunContext) -> list[Path]:
    L, x0 = _setup(ctx)
    hull = pde.absorbent_hull(L, x0)
    rs = reach.compute(ctx.op, L.grid, ctx.x0, ctx.reach_config())
    reached = rs.cells()
    in_reach = np.isin(hull, reached)
    contained = reach.contained_with_band(reached, hull, L.grid)
    centers = L.grid.centers(hull)
    rows = [[int(c), *p.tolist(), bool(r)] for c, p, r in zip(hull, centers, in_reach)]
    record = render_record(
        "absorbent",
        [
            ("hull cells", hull.size),
            ("reached cells", reached.size),
            ("nodes", L.size),
            ("reach inside hull (one-cell band)", render_flag(contained)),
        ],
        ctx.precision,
    )
    headers = ["cell", *coordinate_headers(ctx.op.n), "reached"]
    return [ctx.write_csv("absorbent", headers, rows), ctx.write_text("absorbent", record)]

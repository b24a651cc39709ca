from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from harnackprop.errors import ConfigError, PreconditionError
from harnackprop.handlers.common import RunContext
from harnackprop.services import path as paths
from harnackprop.services import reach
from harnackprop.services.operator import Box, BoxBall
from harnackprop.ui.renderers import render_flag, render_record
from harnackprop.utils.tables import coordinate_headers

logger = logging.getLogger(__name__)

CLOSED_FORM_TOL = 1e-3
EXTRACT_TOL_FACTOR = 10.0


def _reach_set(ctx: RunContext) -> reach.ReachSet:
    grid = ctx.grid()
    return reach.compute(ctx.op, grid, ctx.x0, ctx.reach_config())


def reach_command(ctx: RunContext) -> list[Path]:
    rs = _reach_set(ctx)
    grid = rs.grid
    inside = grid.inside_cells()
    rows = []
    for cell, index, center in zip(inside, grid.multi_index(inside), grid.centers(inside)):
        via = int(rs.via[cell])
        rows.append(
            [
                *index.tolist(),
                *center.tolist(),
                bool(rs.reachable[cell]),
                int(rs.iteration[cell]),
                int(rs.parent[cell]),
                rs.directions[via].label if via >= 0 else "",
                rs.duration(cell),
            ]
        )
    headers = [
        *coordinate_headers(grid.ndim, "i"),
        *coordinate_headers(grid.ndim),
        "reachable",
        "iteration",
        "parent",
        "direction",
        "duration",
    ]
    record = render_record(
        "reach",
        [
            ("h", grid.h),
            ("shape", grid.shape),
            ("x0", rs.x0),
            ("inside cells", int(np.count_nonzero(grid.inside))),
            ("reached cells", int(np.count_nonzero(rs.reachable))),
            ("fraction", rs.fraction()),
            ("sweeps", rs.iterations),
            ("capped", rs.capped),
            ("dt", rs.dt),
            ("directions", [d.label for d in rs.directions]),
        ],
        ctx.precision,
    )
    return [ctx.write_csv("reach", headers, rows), ctx.write_text("reach", record)]


def _closed_form(ctx: RunContext, target: np.ndarray) -> paths.PropagationPath:
    mode = ctx.config.path.mode
    domain = ctx.domain
    step = ctx.config.path.sample_step
    if ctx.lifted:
        raise ConfigError(f"path.mode {mode} does not apply to a lifted operator")
    if mode == "mumford":
        if not isinstance(domain, BoxBall) or len(domain.intervals) != 1 or any(domain.center):
            raise ConfigError("path.mode mumford needs an interval times a ball centred at 0")
        lo, hi = domain.intervals[0]
        if lo != -hi:
            raise ConfigError("path.mode mumford needs a symmetric x1 interval")
        return paths.mumford_path(hi, domain.radius, target, sample_step=step)
    if not isinstance(domain, Box) or domain.dim != 2:
        raise ConfigError("path.mode ou needs a two-dimensional box")
    (lo, hi), (blo, bhi) = domain.intervals
    if blo != -bhi:
        raise ConfigError("path.mode ou needs a symmetric x2 interval")
    return paths.ou_path(max(abs(lo), abs(hi)), bhi, target, x1_bounds=(lo, hi), sample_step=step)


def path_command(ctx: RunContext) -> list[Path]:
    section = ctx.config.path
    if section.target is None:
        raise ConfigError("path.target is required")
    target = np.asarray(section.target, dtype=float)
    if ctx.lifted and target.shape == (ctx.base.n,):
        target = np.append(target, 0.0)

    if section.mode == "extract":
        rs = _reach_set(ctx)
        result = paths.extract(rs, target, ctx.op, rs.grid)
        tol = section.tol if section.tol is not None else EXTRACT_TOL_FACTOR * rs.grid.h
    else:
        result = _closed_form(ctx, target)
        tol = section.tol if section.tol is not None else CLOSED_FORM_TOL
    report = paths.validate(result, ctx.op, ctx.domain, tol)

    n = ctx.op.n
    headers = ["time", *coordinate_headers(n), "segment", *coordinate_headers(n, "lambda"), "mu"]
    record = render_record(
        "path",
        [
            ("mode", section.mode),
            ("x0", result.x0),
            ("target", result.target),
            ("segments", len(result.segments)),
            ("labels", [s.label for s in result.segments]),
            ("total time", result.total_time),
            ("endpoint error", report.endpoint_error),
            ("max velocity error", report.max_velocity_error),
            ("contained", report.contained),
            ("chained", report.chained),
            ("mu nonnegative", report.mu_nonnegative),
            ("tol", tol),
            ("validation", render_flag(report.passed)),
        ],
        ctx.precision,
    )
    written = [ctx.write_csv("path", headers, result.rows()), ctx.write_text("path", record)]
    if not report.passed:
        raise PreconditionError("path failed validation, see path.txt")
    return written

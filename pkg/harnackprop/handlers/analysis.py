from __future__ import annotations

import logging
from pathlib import Path

from harnackprop.errors import H2Violation, NonDiagonalError, PreconditionError
from harnackprop.handlers.common import LIFT_INTERVAL, RunContext
from harnackprop.services import operator as operators
from harnackprop.services import pde
from harnackprop.ui.renderers import render_flag, render_record
from harnackprop.utils import expr
from harnackprop.utils.tables import coordinate_headers

logger = logging.getLogger(__name__)


def _rank_rows(op: operators.OperatorSpec, domain: operators.DomainSpec, depth: int, count: int) -> list[list]:
    family = operators.bracket_family(op, depth)
    rows = []
    for point in domain.sample(count):
        rank, pivot = operators.span_rank(family, point)
        rows.append([*point.tolist(), rank, pivot])
    return rows


def check(ctx: RunContext) -> list[Path]:
    cfg = ctx.config.analysis
    op, domain = ctx.op, ctx.domain
    operators.validate_operator(op, domain, cfg.samples)
    axis = ctx.barrier_axis
    h2 = operators.check_h2(op, domain, cfg.samples, axis)

    rank_rows = _rank_rows(op, domain, cfg.depth, cfg.rank_points)
    min_rank = min((row[op.n] for row in rank_rows), default=0)
    fields: list[tuple[str, object]] = [
        ("dimension", op.n),
        ("lifted", ctx.lifted),
        (f"inf a{axis}{axis}", h2.infimum),
        ("h2", render_flag(h2.passed)),
        ("bracket depth", cfg.depth),
        ("min rank", min_rank),
        ("hoermander", render_flag(min_rank == op.n)),
    ]
    failures = []
    if min_rank < op.n:
        failures.append(f"bracket rank {min_rank} < {op.n} at depth {cfg.depth}")

    if h2.passed:
        bp = operators.barrier_params(op, domain, cfg.samples, axis)
        fields += [("barrier lambda", bp.lam), ("barrier M", bp.M)]
        try:
            report = pde.check_barrier(pde.discretize(op, ctx.grid(), cfg.samples), bp)
        except NonDiagonalError as exc:
            logger.warning("Discrete barrier check skipped: %s", exc)
            fields.append(("barrier", "SKIPPED (non-diagonal A)"))
        else:
            fields += [("min w", report.min_w), ("max Lw", report.max_lw), ("barrier", render_flag(report.passed))]
            if not report.passed:
                failures.append(f"barrier check failed: min w={report.min_w:.6g}, max Lw={report.max_lw:.6g}")
    else:
        lifted = operators.lift(ctx.op)
        lifted_domain = domain.extend(LIFT_INTERVAL)
        lifted_h2 = operators.check_h2(lifted, lifted_domain, cfg.samples, lifted.n)
        lifted_rank = min(row[lifted.n] for row in _rank_rows(lifted, lifted_domain, cfg.depth, cfg.rank_points))
        fields += [
            ("lifted h2", render_flag(lifted_h2.passed)),
            ("lifted min rank", lifted_rank),
            ("lifted hoermander", render_flag(lifted_rank == lifted.n)),
        ]

    paths = [
        ctx.write_text("check", render_record("check", fields, ctx.precision)),
        ctx.write_csv("check", coordinate_headers(op.n) + ["rank", "smallest_pivot"], rank_rows),
    ]
    if not h2.passed:
        raise H2Violation(f"sampled inf of a{axis}{axis} is {h2.infimum:.3e}, must be positive")
    if failures:
        raise PreconditionError("; ".join(failures))
    return paths


def fields(ctx: RunContext) -> list[Path]:
    xs, y = operators.vector_fields(ctx.op)
    drift = operators.drift_expand(ctx.op)
    rows = [[f"X{j + 1}", str(x)] for j, x in enumerate(xs)]
    rows.append(["Y", str(y)])
    rows += [[f"c{j + 1}", expr.to_string(c)] for j, c in enumerate(drift)]
    lines = ["# fields", *ctx.op.describe(), *(f"{name} = {text}" for name, text in rows)]
    return [ctx.write_text("fields", lines), ctx.write_csv("fields", ["name", "expression"], rows)]


def brackets(ctx: RunContext) -> list[Path]:
    cfg = ctx.config.analysis
    family = operators.bracket_family(ctx.op, cfg.depth)
    rows = [[name, str(vf)] for name, vf in family]
    rank_rows = _rank_rows(ctx.op, ctx.domain, cfg.depth, cfg.rank_points)
    ranks = [row[ctx.op.n] for row in rank_rows]
    record = render_record(
        "brackets",
        [
            ("depth", cfg.depth),
            ("family size", len(family)),
            ("points", len(ranks)),
            ("min rank", min(ranks, default=0)),
            ("max rank", max(ranks, default=0)),
        ],
        ctx.precision,
    )
    return [
        ctx.write_csv("brackets", ["name", "field"], rows),
        ctx.write_text("brackets", record + [f"{name} = {text}" for name, text in rows]),
    ]


def lift(ctx: RunContext) -> list[Path]:
    cfg = ctx.config.analysis
    lifted = operators.lift(ctx.base)
    lifted_domain = ctx.base_domain.extend(LIFT_INTERVAL)
    h2 = operators.check_h2(lifted, lifted_domain, cfg.samples, lifted.n)
    fields: list[tuple[str, object]] = [
        ("dimension", lifted.n),
        (f"inf a{lifted.n}{lifted.n}", h2.infimum),
        ("h2", render_flag(h2.passed)),
    ]
    if h2.passed:
        bp = operators.barrier_params(lifted, lifted_domain, cfg.samples, lifted.n)
        fields += [("barrier lambda", bp.lam), ("barrier M", bp.M)]
    return [ctx.write_text("lift", render_record("lift", fields, ctx.precision) + lifted.describe())]

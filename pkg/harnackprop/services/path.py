"""Piecewise-constant control paths: extraction from a reach set, the closed-form
Mumford and Ornstein-Uhlenbeck constructions, and admissibility checks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from harnackprop.errors import NotReachable, OutOfGridError, PathDomainError
from harnackprop.services.operator import (
    DomainSpec,
    OperatorSpec,
    control_field,
    mumford_domain,
    ou_domain,
)
from harnackprop.services.reach import Grid, ReachConfig, ReachSet, dilate, hop, rk4_step

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_STEP = 1e-3
CHAIN_TOL = 1e-8


@dataclass(frozen=True)
class ControlSegment:
    lam: tuple[float, ...]
    mu: float
    duration: float
    start: np.ndarray
    end: np.ndarray
    label: str = ""


@dataclass(frozen=True, eq=False)
class PropagationPath:
    x0: np.ndarray
    target: np.ndarray
    segments: tuple[ControlSegment, ...]
    times: np.ndarray
    points: np.ndarray
    segment_index: np.ndarray

    @property
    def total_time(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def endpoint(self) -> np.ndarray:
        return self.points[-1]

    def rows(self) -> list[list[float]]:
        """``time, x1..xn, segment, lam1..lamn, mu`` per sample."""
        n = self.x0.shape[0]
        out = []
        for t, p, k in zip(self.times, self.points, self.segment_index):
            if k >= 0:
                seg = self.segments[k]
                controls = list(seg.lam) + [seg.mu]
            else:
                controls = [0.0] * (n + 1)
            out.append([float(t), *p.tolist(), int(k), *controls])
        return out


@dataclass(frozen=True)
class ValidationReport:
    max_velocity_error: float
    contained: bool
    chained: bool
    mu_nonnegative: bool
    endpoint_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return (
            self.max_velocity_error <= self.tol
            and self.contained
            and self.chained
            and self.mu_nonnegative
        )


def _sample_straight(seg: ControlSegment, sample_step: float) -> np.ndarray:
    count = max(1, math.ceil(seg.duration / sample_step))
    s = np.linspace(0.0, 1.0, count + 1)[:, None]
    return seg.start + s * (seg.end - seg.start)


def _integrate(op: OperatorSpec, seg: ControlSegment, count: int) -> np.ndarray:
    field = control_field(op, seg.lam, seg.mu)
    step = seg.duration / count
    p = np.asarray(seg.start, dtype=float)[None, :]
    trace = [p[0]]
    for _ in range(count):
        p = rk4_step(field, p, step)
        trace.append(p[0])
    return np.array(trace)


def _assemble(
    x0: np.ndarray,
    target: np.ndarray,
    segments: Sequence[ControlSegment],
    traces: Sequence[np.ndarray],
) -> PropagationPath:
    if not segments:
        return PropagationPath(
            x0=x0,
            target=target,
            segments=(),
            times=np.zeros(1),
            points=x0[None, :].copy(),
            segment_index=np.full(1, -1, dtype=np.int64),
        )
    times, points, index = [], [], []
    offset = 0.0
    for k, (seg, trace) in enumerate(zip(segments, traces)):
        times.append(offset + np.linspace(0.0, seg.duration, trace.shape[0]))
        points.append(trace)
        index.append(np.full(trace.shape[0], k, dtype=np.int64))
        offset += seg.duration
    return PropagationPath(
        x0=x0,
        target=target,
        segments=tuple(segments),
        times=np.concatenate(times),
        points=np.vstack(points),
        segment_index=np.concatenate(index),
    )


def from_segments(
    segments: Sequence[ControlSegment],
    *,
    x0: Sequence[float] | None = None,
    target: Sequence[float] | None = None,
    op: OperatorSpec | None = None,
    sample_step: float = DEFAULT_SAMPLE_STEP,
) -> PropagationPath:
    """Sample segments into a path.

    Without ``op`` each segment is sampled on the straight line from ``start`` to
    ``end``. With ``op`` it is integrated with RK4 and ``end`` is replaced by the
    integrated endpoint.
    """
    if op is None:
        kept = list(segments)
        traces = [_sample_straight(seg, sample_step) for seg in kept]
    else:
        kept, traces = [], []
        for seg in segments:
            trace = _integrate(op, seg, max(1, math.ceil(seg.duration / sample_step)))
            kept.append(replace(seg, end=trace[-1]))
            traces.append(trace)
    if x0 is None:
        x0 = kept[0].start if kept else target
    if x0 is None:
        raise PathDomainError("an empty path needs x0 or target")
    x0 = np.asarray(x0, dtype=float)
    target = np.asarray(target, dtype=float) if target is not None else (kept[-1].end if kept else x0)
    return _assemble(x0, target, kept, traces)


@dataclass(frozen=True, eq=False)
class _HopTree:
    reached: np.ndarray
    parent: np.ndarray
    via: np.ndarray
    steps: np.ndarray
    position: np.ndarray


def _hop_tree(
    rs: ReachSet, op: OperatorSpec, allowed: np.ndarray, target_cell: int, max_sweeps: int | None = None
) -> _HopTree:
    """Flood over ``allowed`` cells hopping from actual landing points instead of centres.

    Starts at ``x0`` itself and stops once ``target_cell`` is reached or after
    ``max_sweeps`` sweeps.
    """
    grid = rs.grid
    cfg = ReachConfig(dt=rs.dt, substeps=rs.substeps, max_hop_steps=rs.max_hop_steps)
    fields = [d.field(op) for d in rs.directions]
    reached = np.zeros(grid.size, dtype=bool)
    parent = np.full(grid.size, -1, dtype=np.int64)
    via = np.full(grid.size, -1, dtype=np.int64)
    steps = np.zeros(grid.size, dtype=np.int64)
    position = np.full((grid.size, grid.ndim), np.nan)
    reached[rs.x0_cell] = True
    position[rs.x0_cell] = rs.x0

    frontier = np.array([rs.x0_cell], dtype=np.int64)
    sweeps = 0
    while frontier.size and not reached[target_cell]:
        if max_sweeps is not None and sweeps >= max_sweeps:
            break
        sweeps += 1
        found = []
        for k, field in enumerate(fields):
            landed, used, ends = hop(field, position[frontier], frontier, grid, rs.dt, cfg)
            hit = np.flatnonzero(landed >= 0)
            found.extend((int(landed[i]), int(frontier[i]), k, int(used[i]), ends[i]) for i in hit)
        fresh = []
        for cell, source, k, used, end in found:
            if not allowed[cell] or reached[cell]:
                continue
            reached[cell] = True
            parent[cell], via[cell], steps[cell] = source, k, used
            position[cell] = end
            fresh.append(cell)
        frontier = np.array(fresh, dtype=np.int64)
    return _HopTree(reached=reached, parent=parent, via=via, steps=steps, position=position)


def extract(rs: ReachSet, target: Sequence[float], op: OperatorSpec, grid: Grid) -> PropagationPath:
    """Continuous piecewise-constant path from ``x0`` into the target's cell.

    The parent chain of the target's cell fixes a corridor (the chain and one
    layer of neighbours). Hops are replayed from actual points inside that
    corridor, starting at ``x0``, so every segment starts where the previous one
    ended. Hops are first limited to the flood iteration of the target's cell; if
    the corridor does not lead to the target's cell within that, the limit is
    dropped and then the whole reach set (plus one layer) is searched.
    """
    target = np.asarray(target, dtype=float)
    cell = int(grid.cell_of(target)[0])
    if cell < 0:
        raise OutOfGridError(f"point {target.tolist()} is outside the grid box")
    if not rs.reachable[cell]:
        raise NotReachable(f"cell of {target.tolist()} was not reached from {rs.x0.tolist()}")
    if cell == rs.x0_cell:
        return _assemble(rs.x0.copy(), target, [], [])

    chain = [cell]
    while chain[-1] != rs.x0_cell:
        chain.append(int(rs.parent[chain[-1]]))

    tree = None
    for cells, max_sweeps in ((chain, int(rs.iteration[cell])), (chain, None), (rs.cells(), None)):
        allowed = np.zeros(grid.size, dtype=bool)
        allowed[dilate(grid, cells)] = True
        allowed &= grid.inside
        tree = _hop_tree(rs, op, allowed, cell, max_sweeps)
        if tree.reached[cell]:
            break
        logger.info("Hop corridor of %d cells does not reach cell %d, widening", int(allowed.sum()), cell)

    end_cell = cell
    if not tree.reached[cell]:
        candidates = np.flatnonzero(tree.reached)
        end_cell = int(candidates[np.argmin(np.linalg.norm(tree.position[candidates] - target, axis=1))])
        logger.warning("Replayed hops never enter cell %d, stopping in cell %d", cell, end_cell)

    hops = []
    while end_cell != rs.x0_cell:
        hops.append(end_cell)
        end_cell = int(tree.parent[end_cell])
    hops.reverse()

    step = rs.dt / rs.substeps
    point = rs.x0.copy()
    segments, traces = [], []
    for child in hops:
        direction = rs.directions[int(tree.via[child])]
        field = direction.field(op)
        p = point[None, :]
        trace = [point]
        for _ in range(int(tree.steps[child]) * rs.substeps):
            p = rk4_step(field, p, step)
            trace.append(p[0])
        trace = np.array(trace)
        segments.append(
            ControlSegment(
                lam=direction.lam,
                mu=direction.mu,
                duration=float(tree.steps[child]) * rs.dt,
                start=point,
                end=trace[-1],
                label=direction.label,
            )
        )
        traces.append(trace)
        point = trace[-1]
    logger.info("Extracted path with %d segments", len(segments))
    return _assemble(rs.x0.copy(), target, segments, traces)


def _x_segment(start: np.ndarray, x1: float, n: int) -> ControlSegment | None:
    shift = x1 - start[0]
    if shift == 0:
        return None
    lam = [0.0] * n
    lam[0] = 1.0 if shift > 0 else -1.0
    end = start.copy()
    end[0] = x1
    return ControlSegment(tuple(lam), 0.0, abs(shift), start, end, "+X1" if shift > 0 else "-X1")


def _y_segment(start: np.ndarray, end: np.ndarray, duration: float, n: int) -> ControlSegment:
    return ControlSegment((0.0,) * n, 1.0, duration, start, end, "+Y")


def mumford_path(
    a: float, r: float, z: Sequence[float], *, sample_step: float = DEFAULT_SAMPLE_STEP
) -> PropagationPath:
    """Path from the origin to ``z`` for ``d1^2 + sin(x1) d2 + cos(x1) d3`` on
    ``(-a, a) x B(0, r)``: turn to ``t* = atan2(z2, z3)``, ride ``Y`` for
    ``hypot(z2, z3)``, then move ``x1`` to ``z1``."""
    if not a > math.pi:
        raise PathDomainError(f"half-width a={a} must exceed pi")
    z = np.asarray(z, dtype=float)
    if z.shape != (3,) or not mumford_domain(a, r).contains(z):
        raise PathDomainError(f"target {z.tolist()} is outside (-{a}, {a}) x B(0, {r})")

    turn = math.atan2(z[1], z[2])
    rho = math.hypot(z[1], z[2])
    segments = []
    point = np.zeros(3)
    first = _x_segment(point, turn, 3)
    if first is not None:
        segments.append(first)
        point = first.end
    if rho > 0:
        end = np.array([turn, z[1], z[2]])
        segments.append(_y_segment(point, end, rho, 3))
        point = end
    last = _x_segment(point, float(z[0]), 3)
    if last is not None:
        segments.append(replace(last, end=z.copy()))
    return from_segments(segments, x0=np.zeros(3), target=z, sample_step=sample_step)


def ou_path(
    a: float,
    b: float,
    z: Sequence[float],
    *,
    x1_bounds: tuple[float, float] | None = None,
    sample_step: float = DEFAULT_SAMPLE_STEP,
) -> PropagationPath:
    """Staircase path for ``d1^2 + x1 d2``.

    On ``(-a, a) x (-b, b)`` the path starts at the origin, moves ``x1`` to
    ``sign(z2) * a/2``, rides ``Y`` and moves ``x1`` to ``z1``. With
    ``x1_bounds`` of one sign it starts at the midpoint of the interval and only
    targets on that side of ``x2 = 0`` are reachable.
    """
    lo, hi = x1_bounds if x1_bounds is not None else (-a, a)
    z = np.asarray(z, dtype=float)
    if z.shape != (2,) or not ou_domain(a, b, (lo, hi)).contains(z):
        raise PathDomainError(f"target {z.tolist()} is outside ({lo}, {hi}) x (-{b}, {b})")

    if lo < 0 < hi:
        x0 = np.zeros(2)
        ride = hi / 2.0 if z[1] > 0 else lo / 2.0
    else:
        ride = (lo + hi) / 2.0
        x0 = np.array([ride, 0.0])
        if z[1] * ride < 0:
            raise PathDomainError(
                f"target {z.tolist()} lies on the side of x2 = 0 that x1 in ({lo}, {hi}) cannot reach"
            )

    segments = []
    point = x0.copy()
    if z[1] != 0:
        first = _x_segment(point, ride, 2)
        if first is not None:
            segments.append(first)
            point = first.end
        end = np.array([ride, z[1]])
        segments.append(_y_segment(point, end, abs(z[1] / ride), 2))
        point = end
    last = _x_segment(point, float(z[0]), 2)
    if last is not None:
        segments.append(replace(last, end=z.copy()))
    return from_segments(segments, x0=x0, target=z, sample_step=sample_step)


def validate(p: PropagationPath, op: OperatorSpec, dom: DomainSpec, tol: float) -> ValidationReport:
    worst = 0.0
    for k, seg in enumerate(p.segments):
        rows = np.flatnonzero(p.segment_index == k)
        if rows.size < 2:
            continue
        pts = p.points[rows]
        dt = np.diff(p.times[rows])
        moving = dt > 0
        if not np.any(moving):
            continue
        velocity = np.diff(pts, axis=0)[moving] / dt[moving, None]
        midpoints = 0.5 * (pts[1:] + pts[:-1])[moving]
        expected = control_field(op, seg.lam, seg.mu)(midpoints)
        worst = max(worst, float(np.max(np.linalg.norm(velocity - expected, axis=1))))

    contained = bool(np.all(dom.contains(p.points)))
    chained = True
    previous = p.x0
    for seg in p.segments:
        if np.linalg.norm(np.asarray(seg.start) - previous) > CHAIN_TOL:
            chained = False
            break
        previous = np.asarray(seg.end)
    report = ValidationReport(
        max_velocity_error=worst,
        contained=contained,
        chained=chained,
        mu_nonnegative=all(seg.mu >= 0 for seg in p.segments),
        endpoint_error=float(np.linalg.norm(p.endpoint - p.target)),
        tol=tol,
    )
    if not report.passed:
        logger.info("Path failed validation: %s", report)
    return report

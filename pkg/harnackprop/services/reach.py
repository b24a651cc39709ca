"""Grid approximation of the propagation set by flood fill over short hops.

A hop integrates one admissible direction (``+X_j``, ``-X_j``, ``+Y``) from a
cell centre with RK4 until the trajectory leaves the start cell. The landing
cell is marked reachable with the start cell as parent. ``-Y`` is never a
direction.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from harnackprop.errors import ConfigError, OutOfGridError, ResolutionError, UnreachedStart
from harnackprop.services.operator import (
    DomainSpec,
    OperatorSpec,
    VectorField,
    active_fields,
    control_field,
)

logger = logging.getLogger(__name__)

MIN_CELLS_PER_AXIS = 3
DT_MIN = 1e-4
DT_MAX = 1.0
SPEED_SAMPLES = 500


@dataclass(frozen=True, eq=False)
class Grid:
    domain: DomainSpec
    origin: np.ndarray
    h: float
    shape: tuple[int, ...]
    inside: np.ndarray

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def multi_index(self, cells: np.ndarray | Sequence[int]) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(cells, dtype=np.int64), self.shape), axis=-1)

    def centers(self, cells: np.ndarray | Sequence[int]) -> np.ndarray:
        return self.origin + (self.multi_index(cells) + 0.5) * self.h

    def cell_of(self, points: np.ndarray | Sequence[float]) -> np.ndarray:
        """Flat index of the cell containing each point, -1 outside the grid box."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        with np.errstate(invalid="ignore"):
            scaled = np.floor((pts - self.origin) / self.h)
        valid = np.all(np.isfinite(scaled), axis=1)
        valid &= np.all((scaled >= 0) & (scaled < np.asarray(self.shape)), axis=1)
        cells = np.full(pts.shape[0], -1, dtype=np.int64)
        if np.any(valid):
            index = scaled[valid].astype(np.int64)
            cells[valid] = np.ravel_multi_index(tuple(index.T), self.shape)
        return cells

    def inside_cells(self) -> np.ndarray:
        return np.flatnonzero(self.inside)

    def as_mask(self, cells: np.ndarray | Sequence[int]) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[np.asarray(cells, dtype=np.int64)] = True
        return mask.reshape(self.shape)


@dataclass(frozen=True)
class ReachConfig:
    dt: float | None = None
    substeps: int = 4
    max_iterations: int = 100_000
    controls: tuple[float, ...] = (1.0,)
    combined: bool = False
    max_hop_steps: int = 32

    def __post_init__(self) -> None:
        for name in ("substeps", "max_iterations", "max_hop_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"reach.{name} must be at least 1, got {getattr(self, name)}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError(f"reach.dt must be positive, got {self.dt}")
        if not self.controls or any(not c > 0 for c in self.controls):
            raise ConfigError(f"reach.controls must be positive magnitudes, got {list(self.controls)}")


@dataclass(frozen=True)
class Direction:
    label: str
    lam: tuple[float, ...]
    mu: float

    def field(self, op: OperatorSpec) -> VectorField:
        return control_field(op, self.lam, self.mu)


@dataclass(frozen=True, eq=False)
class ReachSet:
    grid: Grid
    x0: np.ndarray
    x0_cell: int
    reachable: np.ndarray
    parent: np.ndarray
    via: np.ndarray
    steps: np.ndarray
    iteration: np.ndarray
    directions: tuple[Direction, ...]
    dt: float
    substeps: int
    iterations: int
    capped: bool
    max_hop_steps: int = 32

    def cells(self) -> np.ndarray:
        return np.flatnonzero(self.reachable)

    def fraction(self) -> float:
        inside = int(np.count_nonzero(self.grid.inside))
        return float(np.count_nonzero(self.reachable)) / inside if inside else 0.0

    def duration(self, cell: int) -> float:
        return float(self.steps[cell]) * self.dt


def build_grid(dom: DomainSpec, h: float) -> Grid:
    if not h > 0:
        raise ResolutionError(f"grid spacing must be positive, got {h}")
    lower, upper = dom.bounds()
    counts = np.ceil((upper - lower) / h - 1e-9).astype(np.int64)
    if np.any(counts < MIN_CELLS_PER_AXIS):
        raise ResolutionError(
            f"spacing {h} gives {counts.tolist()} cells per axis, need at least {MIN_CELLS_PER_AXIS}"
        )
    shape = tuple(int(c) for c in counts)
    index = np.indices(shape).reshape(len(shape), -1).T
    centers = lower + (index + 0.5) * h
    inside = np.asarray(dom.contains(centers), dtype=bool)
    logger.info("Grid %s with h=%g: %d of %d cells inside", shape, h, int(inside.sum()), inside.size)
    return Grid(domain=dom, origin=lower, h=float(h), shape=shape, inside=inside)


def build_directions(op: OperatorSpec, dom: DomainSpec, cfg: ReachConfig) -> list[Direction]:
    active, drift = active_fields(op, dom)
    n = op.n
    directions: list[Direction] = []
    for magnitude in cfg.controls:
        suffix = "" if magnitude == 1.0 else f"*{magnitude:g}"
        for j, _ in active:
            unit = [0.0] * n
            unit[j - 1] = magnitude
            directions.append(Direction(f"+X{j}{suffix}", tuple(unit), 0.0))
            directions.append(Direction(f"-X{j}{suffix}", tuple(-u for u in unit), 0.0))
        if drift is not None:
            directions.append(Direction(f"+Y{suffix}", (0.0,) * n, magnitude))
        if cfg.combined:
            directions.extend(_combined_directions(active, drift is not None, n, magnitude, suffix))
    return directions


def _combined_directions(
    active: list[tuple[int, VectorField]], has_drift: bool, n: int, magnitude: float, suffix: str
) -> list[Direction]:
    combined = []
    drift_weights = (0.0, 1.0) if has_drift else (0.0,)
    for signs in itertools.product((1.0, -1.0), repeat=len(active)):
        for mu in drift_weights:
            if len(active) + (1 if mu else 0) < 2:
                continue
            norm = float(np.sqrt(len(active) + mu * mu))
            lam = [0.0] * n
            parts = []
            for (j, _), sign in zip(active, signs):
                lam[j - 1] = sign * magnitude / norm
                parts.append(f"{'+' if sign > 0 else '-'}X{j}")
            if mu:
                parts.append("+Y")
            combined.append(Direction("".join(parts) + suffix, tuple(lam), mu * magnitude / norm))
    return combined


def rk4_step(field: Callable[[np.ndarray], np.ndarray], points: np.ndarray, step: float) -> np.ndarray:
    k1 = field(points)
    k2 = field(points + 0.5 * step * k1)
    k3 = field(points + 0.5 * step * k2)
    k4 = field(points + step * k3)
    return points + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def max_speed(fields: Sequence[VectorField], dom: DomainSpec, samples: int = SPEED_SAMPLES) -> float:
    points = dom.sample(samples)
    speeds = [float(np.max(np.linalg.norm(f(points), axis=1))) for f in fields]
    return max(speeds, default=0.0)


def hop_duration(h: float, speed: float) -> float:
    if speed <= 0:
        return DT_MAX
    return float(np.clip(h / (2.0 * speed), DT_MIN, DT_MAX))


def hop(
    field: VectorField,
    starts: np.ndarray,
    start_cells: np.ndarray,
    grid: Grid,
    dt: float,
    cfg: ReachConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Landing cell (-1 for none), dt-step count and end position for every start point."""
    count = starts.shape[0]
    landed = np.full(count, -1, dtype=np.int64)
    steps = np.zeros(count, dtype=np.int64)
    pending = np.linalg.norm(field(starts), axis=1) > 0
    positions = starts.copy()
    substep = dt / cfg.substeps
    for step in range(1, cfg.max_hop_steps + 1):
        idx = np.flatnonzero(pending)
        if idx.size == 0:
            break
        p = positions[idx]
        stayed_inside = np.ones(idx.size, dtype=bool)
        for _ in range(cfg.substeps):
            p = rk4_step(field, p, substep)
            stayed_inside &= grid.domain.contains(p)
        positions[idx] = p
        cells = grid.cell_of(p)
        left = stayed_inside & (cells != start_cells[idx])
        landed[idx[left]] = cells[left]
        steps[idx[left]] = step
        pending[idx[left | ~stayed_inside]] = False
    return landed, steps, positions


def compute(op: OperatorSpec, grid: Grid, x0: Sequence[float], cfg: ReachConfig) -> ReachSet:
    x0 = np.asarray(x0, dtype=float)
    x0_cell = int(grid.cell_of(x0)[0])
    if x0_cell < 0 or not grid.inside[x0_cell]:
        raise UnreachedStart(f"start point {x0.tolist()} is not in an inside cell")

    directions = build_directions(op, grid.domain, cfg)
    fields = [d.field(op) for d in directions]
    if cfg.dt is None:
        dt = hop_duration(grid.h, max_speed(fields, grid.domain))
    else:
        dt = float(cfg.dt)
        speed = max_speed(fields, grid.domain)
        if dt * speed > 2.0 * grid.h:
            logger.warning("dt=%g moves %.3g per step, more than 2h=%g", dt, dt * speed, 2.0 * grid.h)
    logger.info("Flood fill with %d directions, dt=%g", len(directions), dt)

    reachable = np.zeros(grid.size, dtype=bool)
    parent = np.full(grid.size, -1, dtype=np.int64)
    via = np.full(grid.size, -1, dtype=np.int64)
    steps = np.zeros(grid.size, dtype=np.int64)
    iteration = np.full(grid.size, -1, dtype=np.int64)
    reachable[x0_cell] = True
    iteration[x0_cell] = 0

    frontier = np.array([x0_cell], dtype=np.int64)
    sweeps = 0
    capped = False
    while frontier.size:
        if sweeps >= cfg.max_iterations:
            capped = True
            logger.warning("Flood fill stopped at the iteration cap %d with %d frontier cells", sweeps, frontier.size)
            break
        sweeps += 1
        starts = grid.centers(frontier)
        found_cells, found_parent, found_via, found_steps = [], [], [], []
        for k, field in enumerate(fields):
            landed, used, _ = hop(field, starts, frontier, grid, dt, cfg)
            hit = landed >= 0
            found_cells.append(landed[hit])
            found_parent.append(frontier[hit])
            found_via.append(np.full(int(hit.sum()), k, dtype=np.int64))
            found_steps.append(used[hit])
        cells = np.concatenate(found_cells)
        fresh = grid.inside[cells] & ~reachable[cells]
        cells = cells[fresh]
        new_cells, first = np.unique(cells, return_index=True)
        reachable[new_cells] = True
        parent[new_cells] = np.concatenate(found_parent)[fresh][first]
        via[new_cells] = np.concatenate(found_via)[fresh][first]
        steps[new_cells] = np.concatenate(found_steps)[fresh][first]
        iteration[new_cells] = sweeps
        logger.debug("Sweep %d: %d new cells", sweeps, new_cells.size)
        frontier = new_cells

    result = ReachSet(
        grid=grid,
        x0=x0,
        x0_cell=x0_cell,
        reachable=reachable,
        parent=parent,
        via=via,
        steps=steps,
        iteration=iteration,
        directions=tuple(directions),
        dt=dt,
        substeps=cfg.substeps,
        iterations=sweeps,
        capped=capped,
        max_hop_steps=cfg.max_hop_steps,
    )
    logger.info("Reached %d cells (%.4f of inside) in %d sweeps", int(reachable.sum()), result.fraction(), sweeps)
    return result


def contains(rs: ReachSet, p: Sequence[float]) -> bool:
    cell = int(rs.grid.cell_of(p)[0])
    if cell < 0:
        raise OutOfGridError(f"point {list(p)} is outside the grid box")
    return bool(rs.reachable[cell])


def interior_of_closure(rs: ReachSet) -> np.ndarray:
    """Reachable cells whose face neighbours are all reachable."""
    grid = rs.grid
    structure = ndimage.generate_binary_structure(grid.ndim, 1)
    eroded = ndimage.binary_erosion(rs.reachable.reshape(grid.shape), structure=structure, border_value=0)
    return np.flatnonzero(eroded)


def dilate(grid: Grid, cells: np.ndarray | Sequence[int], layers: int = 1) -> np.ndarray:
    """Cells within ``layers`` cells (diagonals included) of ``cells``."""
    mask = grid.as_mask(cells)
    if layers > 0:
        structure = ndimage.generate_binary_structure(grid.ndim, grid.ndim)
        mask = ndimage.binary_dilation(mask, structure=structure, iterations=layers)
    return np.flatnonzero(mask)


def contained_with_band(
    inner: np.ndarray | Sequence[int], outer: np.ndarray | Sequence[int], grid: Grid, layers: int = 1
) -> bool:
    return bool(np.all(np.isin(np.asarray(inner, dtype=np.int64), dilate(grid, outer, layers))))


def equal_with_band(first: np.ndarray, second: np.ndarray, grid: Grid, layers: int = 1) -> bool:
    return contained_with_band(first, second, grid, layers) and contained_with_band(second, first, grid, layers)


def cells_where(grid: Grid, predicate: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Inside cells whose centres satisfy ``predicate`` (called on rows of centres)."""
    cells = grid.inside_cells()
    return cells[predicate(grid.centers(cells))]

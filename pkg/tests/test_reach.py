from __future__ import annotations

import math

import numpy as np
import pytest

from harnackprop.errors import ConfigError, OutOfGridError, ResolutionError, UnreachedStart
from harnackprop.services import operator as ops
from harnackprop.services import reach

SQUARE = ops.Box(((-1.0, 1.0), (-1.0, 1.0)))


def _fill(op: ops.OperatorSpec, dom: ops.DomainSpec, h: float, x0, **kwargs) -> reach.ReachSet:
    grid = reach.build_grid(dom, h)
    return reach.compute(op, grid, x0, reach.ReachConfig(**kwargs))


def _coverage(rs: reach.ReachSet, predicate) -> float:
    cells = reach.cells_where(rs.grid, predicate)
    return float(np.count_nonzero(rs.reachable[cells])) / cells.size


@pytest.fixture(scope="module")
def heat_reach() -> reach.ReachSet:
    return _fill(ops.heat_operator(), SQUARE, 0.1, [0.0, 0.0])


@pytest.fixture(scope="module")
def ou_reach() -> reach.ReachSet:
    return _fill(ops.ou_operator(), ops.ou_domain(4.0, 3.0), 0.05, [0.0, 0.0])


def test_build_grid_uses_lower_corner_and_ceil_counts() -> None:
    grid = reach.build_grid(ops.Box(((-1.0, 1.0), (0.0, 1.5))), 0.5)
    assert grid.shape == (4, 3)
    assert grid.origin.tolist() == [-1.0, 0.0]
    assert int(grid.inside.sum()) == 12


def test_build_grid_rejects_coarse_spacing() -> None:
    with pytest.raises(ResolutionError):
        reach.build_grid(SQUARE, 1.0)
    with pytest.raises(ResolutionError):
        reach.build_grid(SQUARE, 0.0)


def test_cell_of_and_centers() -> None:
    grid = reach.build_grid(SQUARE, 0.5)
    cell = int(grid.cell_of([0.1, -0.9])[0])
    assert grid.multi_index([cell]).tolist() == [[2, 0]]
    assert grid.centers([cell]).tolist() == [[0.25, -0.75]]
    assert grid.cell_of([[2.0, 0.0], [0.0, -1.5]]).tolist() == [-1, -1]


def test_ball_cells_outside_are_not_inside() -> None:
    grid = reach.build_grid(ops.mumford_domain(1.0, 1.0), 0.25)
    corner = int(grid.cell_of([0.0, 0.9, 0.9])[0])
    assert not grid.inside[corner]


def test_directions_exclude_negative_drift() -> None:
    labels = [d.label for d in reach.build_directions(ops.heat_operator(), SQUARE, reach.ReachConfig())]
    assert labels == ["+X1", "-X1", "+Y"]
    combined = reach.build_directions(ops.heat_operator(), SQUARE, reach.ReachConfig(combined=True))
    assert [d.label for d in combined] == ["+X1", "-X1", "+Y", "+X1+Y", "-X1+Y"]
    assert all(d.mu >= 0 for d in combined)
    scaled = reach.build_directions(ops.heat_operator(), SQUARE, reach.ReachConfig(controls=(1.0, 2.0)))
    assert [d.label for d in scaled][3:] == ["+X1*2", "-X1*2", "+Y*2"]


def test_hop_duration_is_clipped() -> None:
    assert reach.hop_duration(0.1, 1.0) == pytest.approx(0.05)
    assert reach.hop_duration(0.1, 0.0) == reach.DT_MAX
    assert reach.hop_duration(1e-6, 10.0) == reach.DT_MIN


def test_heat_reach_is_the_lower_half(heat_reach: reach.ReachSet) -> None:
    grid = heat_reach.grid
    h = grid.h
    expected = reach.cells_where(grid, lambda p: p[:, 1] <= h)
    assert reach.equal_with_band(heat_reach.cells(), expected, grid)
    centers = grid.centers(heat_reach.cells())
    assert centers[:, 1].max() <= h
    assert heat_reach.fraction() == pytest.approx(expected.size / grid.inside.sum(), abs=0.06)


def test_heat_reach_membership(heat_reach: reach.ReachSet) -> None:
    assert reach.contains(heat_reach, [0.5, -0.5])
    assert not reach.contains(heat_reach, [0.5, 0.5])
    with pytest.raises(OutOfGridError):
        reach.contains(heat_reach, [5.0, 5.0])


def test_reach_parents_form_a_tree(heat_reach: reach.ReachSet) -> None:
    for cell in heat_reach.cells():
        if cell == heat_reach.x0_cell:
            assert heat_reach.parent[cell] == -1
            continue
        parent = int(heat_reach.parent[cell])
        assert heat_reach.reachable[parent]
        assert heat_reach.iteration[parent] == heat_reach.iteration[cell] - 1
        assert heat_reach.steps[cell] >= 1


def test_reach_is_deterministic(heat_reach: reach.ReachSet) -> None:
    again = _fill(ops.heat_operator(), SQUARE, 0.1, [0.0, 0.0])
    assert np.array_equal(again.reachable, heat_reach.reachable)
    assert np.array_equal(again.parent, heat_reach.parent)
    assert np.array_equal(again.via, heat_reach.via)


def test_start_outside_domain_is_rejected() -> None:
    with pytest.raises(UnreachedStart):
        _fill(ops.heat_operator(), SQUARE, 0.1, [2.0, 0.0])


def test_iteration_cap_is_reported() -> None:
    rs = _fill(ops.heat_operator(), SQUARE, 0.1, [0.0, 0.0], max_iterations=2)
    assert rs.capped
    assert rs.iterations == 2
    assert rs.iteration.max() == 2


def test_mumford_reaches_whole_domain() -> None:
    rs = _fill(ops.mumford_operator(), ops.mumford_domain(1.5 * math.pi, 1.0), 0.1, [0.0, 0.0, 0.0])
    assert rs.fraction() >= 0.99


def test_mumford_narrow_slab_stays_above_x3_zero() -> None:
    rs = _fill(ops.mumford_operator(), ops.mumford_domain(0.5 * math.pi, 1.0), 0.05, [0.0, 0.0, 0.0])
    h = rs.grid.h
    centers = rs.grid.centers(rs.cells())
    assert np.count_nonzero(centers[:, 2] < -h) == 0
    assert _coverage(rs, lambda p: p[:, 2] > h) >= 0.95


def test_ou_reaches_whole_domain(ou_reach: reach.ReachSet) -> None:
    assert ou_reach.fraction() >= 0.99


def test_one_signed_ou_moves_only_upward() -> None:
    rs = _fill(ops.ou_operator(), ops.ou_domain(3.0, 3.0, (1.0, 3.0)), 0.05, [2.0, 0.0])
    h = rs.grid.h
    centers = rs.grid.centers(rs.cells())
    assert np.count_nonzero(centers[:, 1] < -h) == 0
    assert _coverage(rs, lambda p: p[:, 1] > h) >= 0.95


def test_lifted_ou_reach_is_a_product() -> None:
    h = 0.1
    flat = _fill(ops.ou_operator(), ops.ou_domain(4.0, 3.0), h, [0.0, 0.0])
    lifted = _fill(ops.lift(ops.ou_operator()), ops.ou_domain(4.0, 3.0).extend((-1.0, 1.0)), h, [0.0, 0.0, 0.0])
    grid = lifted.grid
    assert grid.shape[:2] == flat.grid.shape
    product = np.broadcast_to(flat.reachable.reshape(flat.grid.shape)[:, :, None], grid.shape)
    expected = np.flatnonzero(product.ravel() & grid.inside)
    assert reach.equal_with_band(lifted.cells(), expected, grid)


def test_interior_of_closure_and_dilate() -> None:
    grid = reach.build_grid(ops.Box(((0.0, 1.0), (0.0, 1.0))), 0.2)
    block = reach.cells_where(grid, lambda p: (p[:, 0] < 0.6) & (p[:, 1] < 0.6))
    assert block.size == 9
    rs = reach.ReachSet(
        grid=grid,
        x0=np.array([0.1, 0.1]),
        x0_cell=int(block[0]),
        reachable=grid.as_mask(block).ravel(),
        parent=np.full(grid.size, -1),
        via=np.full(grid.size, -1),
        steps=np.zeros(grid.size, dtype=np.int64),
        iteration=np.zeros(grid.size, dtype=np.int64),
        directions=(),
        dt=0.1,
        substeps=4,
        iterations=0,
        capped=False,
    )
    interior = reach.interior_of_closure(rs)
    assert interior.size == 1
    assert grid.centers(interior)[0] == pytest.approx([0.3, 0.3])
    assert reach.dilate(grid, block).size == 16
    assert reach.contained_with_band(block, interior, grid, layers=1)
    assert not reach.contained_with_band(block, interior, grid, layers=0)


@pytest.mark.parametrize(
    "kwargs",
    [{"substeps": 0}, {"max_hop_steps": 0}, {"max_iterations": 0}, {"dt": 0.0}, {"controls": ()}, {"controls": (-1.0,)}],
)
def test_reach_config_rejects_non_positive_settings(kwargs: dict) -> None:
    with pytest.raises(ConfigError):
        reach.ReachConfig(**kwargs)


def _coarsened(fine: reach.ReachSet, grid: reach.Grid) -> np.ndarray:
    cells = grid.cell_of(fine.grid.centers(fine.cells()))
    return np.unique(cells[cells >= 0])


def test_reach_from_a_reached_cell_stays_inside(heat_reach: reach.ReachSet) -> None:
    grid = heat_reach.grid
    start = grid.centers(grid.cell_of([0.5, -0.5]))[0]
    again = reach.compute(ops.heat_operator(), grid, start, reach.ReachConfig())
    assert again.cells().size < heat_reach.cells().size
    assert reach.contained_with_band(again.cells(), heat_reach.cells(), grid)

    one_signed = _fill(ops.ou_operator(), ops.ou_domain(3.0, 3.0, (1.0, 3.0)), 0.1, [2.0, 0.0])
    grid = one_signed.grid
    start = grid.centers(grid.cell_of([1.5, 1.0]))[0]
    again = reach.compute(ops.ou_operator(), grid, start, reach.ReachConfig())
    assert reach.contained_with_band(again.cells(), one_signed.cells(), grid)


def test_reach_grows_with_the_domain() -> None:
    x0 = [2.05, 0.05]
    small = _fill(ops.ou_operator(), ops.ou_domain(3.0, 1.5, (1.0, 3.0)), 0.1, x0)
    large = _fill(ops.ou_operator(), ops.ou_domain(3.0, 3.0, (1.0, 3.0)), 0.1, x0)
    mapped = large.grid.cell_of(small.grid.centers(small.cells()))
    assert np.all(mapped >= 0)
    assert reach.contained_with_band(mapped, large.cells(), large.grid)


def test_drift_free_reach_is_symmetric() -> None:
    op = ops.OperatorSpec.from_strings(2, {(1, 1): "1", (2, 2): "x1^2"})
    rs = _fill(op, SQUARE, 0.2, [0.5, 0.0])
    assert not any("Y" in d.label for d in rs.directions)
    grid = rs.grid
    for cell in rs.cells()[::9]:
        back = reach.compute(op, grid, grid.centers([cell])[0], reach.ReachConfig())
        assert reach.contained_with_band([rs.x0_cell], back.cells(), grid)


@pytest.mark.parametrize(
    ("op", "dom", "h", "x0"),
    [
        (ops.heat_operator(), SQUARE, 0.2, [0.0, 0.0]),
        (ops.ou_operator(), ops.ou_domain(3.0, 3.0, (1.0, 3.0)), 0.2, [2.0, 0.0]),
        (ops.mumford_operator(), ops.mumford_domain(1.5 * math.pi, 1.0), 0.4, [0.0, 0.0, 0.0]),
    ],
)
def test_refining_the_grid_keeps_the_reach_set(op, dom, h: float, x0: list[float]) -> None:
    coarse = _fill(op, dom, h, x0)
    fine = _fill(op, dom, h / 2, x0)
    assert reach.contained_with_band(coarse.cells(), _coarsened(fine, coarse.grid), coarse.grid)

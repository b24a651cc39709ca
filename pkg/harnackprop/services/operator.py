"""Second-order operators in divergence form and their vector fields.

``L u = sum_ij d_i(a_ij d_j u) + sum_j b_j d_j u`` on a bounded open domain.
Rows of ``A`` give the fields ``X_j`` and ``b`` gives the drift ``Y``.
Expression indices (``x1``, axes passed to ``differentiate``) are 1-based;
numpy arrays are 0-based.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg

from harnackprop.errors import ConfigError, H2Violation, PreconditionError
from harnackprop.utils import expr
from harnackprop.utils.expr import Expr
from harnackprop.utils.sampling import halton_filtered

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-9
RANK_TOL = 1e-9
ZERO_FIELD_TOL = 1e-12
ZERO_FIELD_SAMPLES = 50
MAX_BRACKET_DEPTH = 5
BARRIER_INFLATION = 1.1


class DomainSpec:
    """Bounded open domain. Points are rows: shape ``(m, n)`` or ``(n,)``."""

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _contains_rows(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, points: Sequence[float] | np.ndarray) -> np.ndarray | bool:
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return bool(self._contains_rows(pts[None, :])[0])
        return self._contains_rows(pts)

    def sample(self, count: int) -> np.ndarray:
        lower, upper = self.bounds()
        return halton_filtered(lower, upper, count, self._contains_rows)

    def extend(self, interval: tuple[float, float]) -> DomainSpec:
        raise NotImplementedError


def _check_intervals(intervals: tuple[tuple[float, float], ...]) -> None:
    for lo, hi in intervals:
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
            raise PreconditionError(f"empty or unbounded interval ({lo}, {hi})")


@dataclass(frozen=True)
class Box(DomainSpec):
    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if not self.intervals:
            raise PreconditionError("box needs at least one interval")
        _check_intervals(self.intervals)

    @property
    def dim(self) -> int:
        return len(self.intervals)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([i[0] for i in self.intervals], dtype=float)
        hi = np.array([i[1] for i in self.intervals], dtype=float)
        return lo, hi

    def _contains_rows(self, points: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds()
        return np.all((points > lo) & (points < hi), axis=1)

    def extend(self, interval: tuple[float, float]) -> Box:
        return Box(self.intervals + (interval,))


@dataclass(frozen=True)
class BoxBall(DomainSpec):
    """Intervals for the leading axes times an open ball for the trailing ones.

    ``extra`` holds intervals appended after the ball block (used by lifting).
    """

    intervals: tuple[tuple[float, float], ...]
    center: tuple[float, ...]
    radius: float
    extra: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        _check_intervals(self.intervals + self.extra)
        if not self.center:
            raise PreconditionError("ball block needs a center")
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise PreconditionError(f"ball radius must be positive, got {self.radius}")

    @property
    def dim(self) -> int:
        return len(self.intervals) + len(self.center) + len(self.extra)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        center = np.asarray(self.center, dtype=float)
        lo = np.concatenate(
            [[i[0] for i in self.intervals], center - self.radius, [i[0] for i in self.extra]]
        )
        hi = np.concatenate(
            [[i[1] for i in self.intervals], center + self.radius, [i[1] for i in self.extra]]
        )
        return lo.astype(float), hi.astype(float)

    def _contains_rows(self, points: np.ndarray) -> np.ndarray:
        lead = len(self.intervals)
        ball = len(self.center)
        inside = np.ones(points.shape[0], dtype=bool)
        for axis, (lo, hi) in enumerate(self.intervals):
            inside &= (points[:, axis] > lo) & (points[:, axis] < hi)
        offset = points[:, lead : lead + ball] - np.asarray(self.center, dtype=float)
        inside &= np.sum(offset**2, axis=1) < self.radius**2
        for k, (lo, hi) in enumerate(self.extra):
            axis = lead + ball + k
            inside &= (points[:, axis] > lo) & (points[:, axis] < hi)
        return inside

    def extend(self, interval: tuple[float, float]) -> BoxBall:
        return BoxBall(self.intervals, self.center, self.radius, self.extra + (interval,))


@dataclass(frozen=True)
class VectorField:
    components: tuple[Expr, ...]

    @property
    def dim(self) -> int:
        return len(self.components)

    def __str__(self) -> str:
        terms = [
            f"({expr.to_string(c)})*d{i + 1}"
            for i, c in enumerate(self.components)
            if not expr.is_zero(c)
        ]
        return " + ".join(terms) if terms else "0"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at rows of ``points`` (shape ``(m, n)``), returning ``(m, n)``."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return np.array([expr.evaluate(c, pts) for c in self.components])
        columns = pts.T
        return np.stack([expr.evaluate(c, columns) for c in self.components], axis=1)

    def is_structurally_zero(self) -> bool:
        return all(expr.is_zero(c) for c in self.components)


@dataclass(frozen=True)
class OperatorSpec:
    n: int
    a: tuple[tuple[Expr, ...], ...]
    b: tuple[Expr, ...]

    def __post_init__(self) -> None:
        if self.n < 1:
            raise PreconditionError("operator dimension must be positive")
        if len(self.a) != self.n or any(len(row) != self.n for row in self.a):
            raise PreconditionError(f"coefficient matrix must be {self.n}x{self.n}")
        if len(self.b) != self.n:
            raise PreconditionError(f"drift must have {self.n} components")

    @classmethod
    def from_strings(
        cls,
        n: int,
        a: Mapping[tuple[int, int], str],
        b: Sequence[str] = (),
    ) -> OperatorSpec:
        """Build from 1-based ``(i, j) -> text`` entries; missing entries are 0.

        An entry given only as ``(i, j)`` is mirrored to ``(j, i)``.
        """
        texts: dict[tuple[int, int], str] = {}
        for (i, j), text in a.items():
            if not (1 <= i <= n and 1 <= j <= n):
                raise ConfigError(f"coefficient a{i}{j} outside dimension {n}")
            texts[(i, j)] = str(text)
        matrix = [[expr.ZERO] * n for _ in range(n)]
        for (i, j), text in texts.items():
            tree = expr.simplify(expr.parse(text, n))
            mirror = texts.get((j, i))
            if mirror is not None and i != j:
                other = expr.simplify(expr.parse(mirror, n))
                if not expr.equivalent(tree, other, n):
                    raise ConfigError(f"a{i}{j} and a{j}{i} differ: {text!r} vs {mirror!r}")
            matrix[i - 1][j - 1] = tree
            matrix[j - 1][i - 1] = tree
        if len(b) > n:
            raise ConfigError(f"drift has {len(b)} entries for dimension {n}")
        drift = [expr.simplify(expr.parse(str(text), n)) for text in b]
        drift += [expr.ZERO] * (n - len(drift))
        return cls(n=n, a=tuple(tuple(row) for row in matrix), b=tuple(drift))

    def coefficient_matrix(self, points: np.ndarray) -> np.ndarray:
        """``A`` at rows of ``points``: shape ``(m, n, n)``."""
        columns = np.asarray(points, dtype=float).T
        values = [[expr.evaluate(self.a[i][j], columns) for j in range(self.n)] for i in range(self.n)]
        return np.moveaxis(np.array(values), -1, 0)

    def describe(self) -> list[str]:
        lines = [f"n = {self.n}"]
        for i in range(self.n):
            for j in range(self.n):
                if not expr.is_zero(self.a[i][j]):
                    lines.append(f"a{i + 1}{j + 1} = {expr.to_string(self.a[i][j])}")
        for j, bj in enumerate(self.b):
            if not expr.is_zero(bj):
                lines.append(f"b{j + 1} = {expr.to_string(bj)}")
        return lines


@dataclass(frozen=True)
class BarrierParams:
    lam: float
    M: float
    axis: int = 1

    def w(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return self.M - np.exp(self.lam * pts[..., self.axis - 1])


@dataclass(frozen=True)
class H2Check:
    passed: bool
    infimum: float
    axis: int = 1


def validate_operator(op: OperatorSpec, dom: DomainSpec, samples: int = 200) -> None:
    """Sampled symmetry and positive semidefiniteness of ``A``."""
    if dom.dim != op.n:
        raise PreconditionError(f"domain dimension {dom.dim} does not match operator dimension {op.n}")
    matrices = op.coefficient_matrix(dom.sample(samples))
    asymmetry = np.max(np.abs(matrices - np.swapaxes(matrices, 1, 2)))
    if asymmetry > SYMMETRY_TOL:
        raise PreconditionError(f"coefficient matrix is not symmetric (max |a_ij - a_ji| = {asymmetry:.3e})")
    smallest = float(np.min(np.linalg.eigvalsh(matrices)))
    if smallest < -PSD_TOL:
        raise PreconditionError(f"coefficient matrix is not positive semidefinite (eigenvalue {smallest:.3e})")


def vector_fields(op: OperatorSpec) -> tuple[list[VectorField], VectorField]:
    xs = [VectorField(tuple(op.a[j])) for j in range(op.n)]
    return xs, VectorField(tuple(op.b))


def control_field(op: OperatorSpec, lam: Sequence[float], mu: float) -> VectorField:
    """``sum_j lam_j X_j + mu Y`` as a single field."""
    components = []
    for k in range(op.n):
        total = expr.mul(expr.Const(float(mu)), op.b[k])
        for j, weight in enumerate(lam):
            if weight:
                total = expr.add(total, expr.mul(expr.Const(float(weight)), op.a[j][k]))
        components.append(expr.simplify(total))
    return VectorField(tuple(components))


def is_zero_field(vf: VectorField, dom: DomainSpec, samples: int = ZERO_FIELD_SAMPLES) -> bool:
    if vf.is_structurally_zero():
        return True
    values = vf(dom.sample(samples))
    return bool(np.all(np.abs(values) <= ZERO_FIELD_TOL))


def active_fields(
    op: OperatorSpec, dom: DomainSpec
) -> tuple[list[tuple[int, VectorField]], VectorField | None]:
    """Nonzero ``X_j`` with their 1-based index, and ``Y`` unless ``b`` vanishes."""
    xs, y = vector_fields(op)
    active = [(j + 1, x) for j, x in enumerate(xs) if not is_zero_field(x, dom)]
    drift = None if is_zero_field(y, dom) else y
    return active, drift


def drift_expand(op: OperatorSpec) -> tuple[Expr, ...]:
    """``c_j = sum_i d_i a_ij + b_j`` so that ``L u = a_ij d_ij u + c_j d_j u``."""
    drift = []
    for j in range(op.n):
        total = op.b[j]
        for i in range(op.n):
            total = expr.add(total, expr.differentiate(op.a[i][j], i + 1))
        drift.append(expr.simplify(total))
    return tuple(drift)


def apply(op: OperatorSpec, u: Expr) -> Expr:
    """``L u`` in divergence form."""
    total: Expr = expr.ZERO
    gradient = [expr.differentiate(u, j + 1) for j in range(op.n)]
    for i in range(op.n):
        flux: Expr = expr.ZERO
        for j in range(op.n):
            flux = expr.add(flux, expr.mul(op.a[i][j], gradient[j]))
        total = expr.add(total, expr.differentiate(flux, i + 1))
    for j in range(op.n):
        total = expr.add(total, expr.mul(op.b[j], gradient[j]))
    return expr.simplify(total)


def apply_expanded(op: OperatorSpec, u: Expr) -> Expr:
    """``L u`` in non-divergence form, using ``drift_expand``."""
    c = drift_expand(op)
    total: Expr = expr.ZERO
    for j in range(op.n):
        du = expr.differentiate(u, j + 1)
        total = expr.add(total, expr.mul(c[j], du))
        for i in range(op.n):
            total = expr.add(total, expr.mul(op.a[i][j], expr.differentiate(du, i + 1)))
    return expr.simplify(total)


def check_h2(op: OperatorSpec, dom: DomainSpec, samples: int, axis: int = 1) -> H2Check:
    coefficient = op.a[axis - 1][axis - 1]
    values = np.atleast_1d(expr.evaluate(coefficient, dom.sample(samples).T))
    infimum = float(np.min(values))
    return H2Check(passed=infimum > PSD_TOL, infimum=infimum, axis=axis)


def barrier_params(op: OperatorSpec, dom: DomainSpec, samples: int, axis: int = 1) -> BarrierParams:
    """Parameters of ``w = M - exp(lam * x_axis)`` with ``L w < 0`` on the domain.

    ``L w = -lam exp(lam x) (lam a + c)`` with ``a = a_axis,axis`` and ``c`` the
    expanded drift along the axis. Sup and inf are sampled estimates.
    """
    h2 = check_h2(op, dom, samples, axis)
    if not h2.passed:
        raise H2Violation(f"sampled inf of a{axis}{axis} is {h2.infimum:.3e}, must be positive")
    points = dom.sample(samples)
    c = np.atleast_1d(expr.evaluate(drift_expand(op)[axis - 1], points.T))
    sup_c = float(np.max(np.abs(c)))
    lam = (BARRIER_INFLATION * sup_c + 1.0) / h2.infimum
    upper = float(dom.bounds()[1][axis - 1])
    M = math.exp(lam * upper) + 1.0
    a = np.atleast_1d(expr.evaluate(op.a[axis - 1][axis - 1], points.T))
    margin = float(np.min(lam * a + c))
    if margin <= 0:
        logger.warning("Barrier margin lam*a + c is %.3e at a sampled point", margin)
    logger.info("Barrier along x%d: lam=%.6g M=%.6g (inf a=%.6g, sup|c|=%.6g)", axis, lam, M, h2.infimum, sup_c)
    return BarrierParams(lam=lam, M=M, axis=axis)


def lie_bracket(v: VectorField, w: VectorField) -> VectorField:
    """``[V, W]^k = sum_i V^i d_i W^k - W^i d_i V^k``."""
    if v.dim != w.dim:
        raise PreconditionError(f"bracket of fields of dimension {v.dim} and {w.dim}")
    components = []
    for k in range(v.dim):
        total: Expr = expr.ZERO
        for i in range(v.dim):
            total = expr.add(total, expr.mul(v.components[i], expr.differentiate(w.components[k], i + 1)))
            total = expr.sub(total, expr.mul(w.components[i], expr.differentiate(v.components[k], i + 1)))
        components.append(expr.simplify(total))
    return VectorField(tuple(components))


def bracket_family(op: OperatorSpec, depth: int) -> list[tuple[str, VectorField]]:
    """Nonzero ``X_j``, ``Y`` and iterated brackets ``[Z, W]`` up to ``depth``."""
    if not 1 <= depth <= MAX_BRACKET_DEPTH:
        raise PreconditionError(f"bracket depth must be in 1..{MAX_BRACKET_DEPTH}, got {depth}")
    xs, y = vector_fields(op)
    base = [(f"X{j + 1}", x) for j, x in enumerate(xs) if not x.is_structurally_zero()]
    if not y.is_structurally_zero():
        base.append(("Y", y))
    family = list(base)
    seen = {vf.components for _, vf in base}
    level = base
    for _ in range(depth - 1):
        next_level = []
        for left_name, left in base:
            for right_name, right in level:
                bracket = lie_bracket(left, right)
                if bracket.is_structurally_zero():
                    continue
                negated = tuple(expr.neg(c) for c in bracket.components)
                if bracket.components in seen or negated in seen:
                    continue
                seen.add(bracket.components)
                next_level.append((f"[{left_name},{right_name}]", bracket))
        family.extend(next_level)
        level = next_level
    return family


def span_rank(
    family: Sequence[tuple[str, VectorField]], point: Sequence[float]
) -> tuple[int, float]:
    """Rank of the fields at ``point`` and the smallest surviving pivot."""
    p = np.asarray(point, dtype=float)
    if not family:
        return 0, 0.0
    vectors = np.array([vf(p) for _, vf in family], dtype=float)
    _, r, _ = linalg.qr(vectors.T, pivoting=True, mode="economic")
    pivots = np.abs(np.diag(r))
    surviving = pivots[pivots > RANK_TOL]
    if surviving.size == 0:
        return 0, 0.0
    return int(surviving.size), float(surviving.min())


def hoermander_rank(op: OperatorSpec, p: Sequence[float], depth: int) -> int:
    rank, smallest = span_rank(bracket_family(op, depth), p)
    if rank and smallest < 1e3 * RANK_TOL:
        logger.warning("Near rank drop at %s: smallest surviving pivot %.3e", list(p), smallest)
    return rank


def lift(op: OperatorSpec) -> OperatorSpec:
    """``d_{n+1}^2 + L`` on ``R^{n+1}``."""
    n = op.n
    rows = [tuple(op.a[i]) + (expr.ZERO,) for i in range(n)]
    rows.append((expr.ZERO,) * n + (expr.ONE,))
    return OperatorSpec(n=n + 1, a=tuple(rows), b=tuple(op.b) + (expr.ZERO,))


def _diagonal(n: int, diagonal: Sequence[str], drift: Sequence[str]) -> OperatorSpec:
    return OperatorSpec.from_strings(n, {(i + 1, i + 1): text for i, text in enumerate(diagonal)}, drift)


def heat_operator() -> OperatorSpec:
    return _diagonal(2, ["1", "0"], ["0", "-1"])


def mumford_operator() -> OperatorSpec:
    return _diagonal(3, ["1", "0", "0"], ["0", "sin(x1)", "cos(x1)"])


def ou_operator() -> OperatorSpec:
    return _diagonal(2, ["1", "0"], ["0", "x1"])


def grushin_operator() -> OperatorSpec:
    """``x1^2 d_2^2 + d_1``: degenerate on ``x1 = 0``, so (H2) fails along x1."""
    return _diagonal(2, ["0", "x1^2"], ["1", "0"])


def laplacian(n: int) -> OperatorSpec:
    return _diagonal(n, ["1"] * n, [])


def mumford_domain(a: float, r: float) -> BoxBall:
    return BoxBall(intervals=((-a, a),), center=(0.0, 0.0), radius=r)


def ou_domain(a: float, b: float, x1_bounds: tuple[float, float] | None = None) -> Box:
    x1 = x1_bounds if x1_bounds is not None else (-a, a)
    return Box((tuple(x1), (-b, b)))


PRESETS = {
    "heat": heat_operator,
    "mumford": mumford_operator,
    "ou": ou_operator,
    "grushin": grushin_operator,
}

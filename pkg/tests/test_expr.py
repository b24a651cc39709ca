from __future__ import annotations

import math

import numpy as np
import pytest

from harnackprop.errors import EvaluationError, ParseError, PreconditionError
from harnackprop.utils import expr
from harnackprop.utils.expr import Add, Const, Func, Mul, Var


def _random_tree(rng: np.random.Generator, depth: int, dim: int) -> expr.Expr:
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.5:
            return Var(int(rng.integers(1, dim + 1)))
        return Const(float(np.round(rng.uniform(-1.0, 1.0), 3)))
    kind = rng.choice(["add", "sub", "mul", "pow", "neg", "sin", "cos"])
    child = _random_tree(rng, depth - 1, dim)
    if kind in ("add", "sub", "mul"):
        other = _random_tree(rng, depth - 1, dim)
        return {"add": expr.Add, "sub": expr.Sub, "mul": expr.Mul}[kind](child, other)
    if kind == "pow":
        return expr.Pow(child, 2)
    if kind == "neg":
        return expr.Neg(child)
    return Func(str(kind), child)


def test_parse_builds_function_tree() -> None:
    assert expr.parse("sin(x1)", 3) == Func("sin", Var(1))


def test_parse_constant_zero() -> None:
    tree = expr.parse("0", 1)
    assert tree == Const(0.0)
    assert expr.is_zero(tree)


def test_parse_and_evaluate_polynomial() -> None:
    tree = expr.parse("x1^2*x2 + 3", 2)
    assert expr.evaluate(tree, [2.0, 5.0]) == pytest.approx(23.0)


def test_parse_reads_pi_and_scientific_literals() -> None:
    assert expr.evaluate(expr.parse("3*pi/2", 0), ()) == pytest.approx(1.5 * math.pi)
    assert expr.evaluate(expr.parse("2.5e-1 + .5", 0), ()) == pytest.approx(0.75)


def test_power_binds_tighter_than_unary_minus() -> None:
    assert expr.evaluate(expr.parse("-x1^2", 1), [3.0]) == pytest.approx(-9.0)
    assert expr.evaluate(expr.parse("(-x1)^2", 1), [3.0]) == pytest.approx(9.0)
    assert expr.evaluate(expr.parse("2 - 3 - 4", 0), ()) == pytest.approx(-5.0)


@pytest.mark.parametrize(
    ("text", "dim"),
    [("x3", 2), ("x0", 2), ("x1 +", 1), ("sin x1", 1), ("x1^2^3", 1), ("x1^1.5", 1), ("foo(x1)", 1), ("x1 $ 2", 1)],
)
def test_parse_rejects_malformed_input(text: str, dim: int) -> None:
    with pytest.raises(ParseError) as info:
        expr.parse(text, dim)
    assert 0 <= info.value.offset <= len(text)


def test_parse_error_reports_offset_of_bad_variable() -> None:
    with pytest.raises(ParseError) as info:
        expr.parse("x1 + x3", 2)
    assert info.value.offset == 5


def test_parse_error_offset_counts_bytes() -> None:
    with pytest.raises(ParseError) as info:
        expr.parse("x1 +\u00a0x3", 2)
    assert info.value.offset == 6


def test_power_overflow_is_an_evaluation_error() -> None:
    with pytest.raises(EvaluationError):
        expr.evaluate(expr.parse("(10)^400", 1), [0.0])
    with pytest.raises(EvaluationError):
        expr.evaluate(expr.simplify(expr.parse("(10)^400 + x1", 1)), [0.0])
    with pytest.raises(EvaluationError):
        expr.evaluate(expr.parse("x1^400", 1), np.array([[1.0, 10.0]]))


def test_evaluate_known_values() -> None:
    assert expr.evaluate(expr.parse("cos(x1)", 3), [0.0, 0.0, 0.0]) == pytest.approx(1.0)
    assert expr.evaluate(expr.parse("sin(x1)", 3), [math.pi / 2, 0.0, 0.0]) == pytest.approx(1.0)
    assert expr.evaluate(expr.parse("x1^2*x2", 2), [3.0, -1.0]) == pytest.approx(-9.0)


def test_evaluate_batch_broadcasts_constants() -> None:
    columns = np.array([[0.0, 1.0, 2.0], [5.0, 5.0, 5.0]])
    assert expr.evaluate(Const(4.0), columns).tolist() == [4.0, 4.0, 4.0]
    assert expr.evaluate(expr.parse("x1 + x2", 2), columns).tolist() == [5.0, 6.0, 7.0]


def test_evaluate_division_by_zero_is_a_domain_error() -> None:
    with pytest.raises(EvaluationError):
        expr.evaluate(expr.parse("1/x1", 1), [0.0])


def test_evaluate_needs_enough_coordinates() -> None:
    with pytest.raises(PreconditionError):
        expr.evaluate(expr.parse("x2", 2), [1.0])


def test_differentiate_known_values() -> None:
    sin_x1 = expr.parse("sin(x1)", 2)
    assert expr.differentiate(sin_x1, 1) == Func("cos", Var(1))
    assert expr.is_zero(expr.differentiate(sin_x1, 2))
    derivative = expr.differentiate(expr.parse("x1^2*x2", 2), 1)
    assert expr.equivalent(derivative, expr.parse("2*x1*x2", 2), 2)


def test_simplify_known_values() -> None:
    assert expr.simplify(Mul(Const(0.0), Func("sin", Var(1)))) == Const(0.0)
    assert expr.simplify(Add(Var(1), Const(0.0))) == Var(1)
    assert expr.simplify(Mul(Mul(Const(2.0), Const(3.0)), Var(2))) == Mul(Const(6.0), Var(2))
    assert expr.simplify(expr.parse("x1 - x1", 1)) == Const(0.0)


def test_derivatives_match_centered_differences() -> None:
    rng = np.random.default_rng(7)
    step = 1e-4
    for _ in range(100):
        dim = 3
        tree = _random_tree(rng, 6, dim)
        axis = int(rng.integers(1, dim + 1))
        derivative = expr.differentiate(tree, axis)
        for point in rng.uniform(-1.0, 1.0, size=(10, dim)):
            shift = np.zeros(dim)
            shift[axis - 1] = step
            value = expr.evaluate(tree, point)
            centered = (expr.evaluate(tree, point + shift) - expr.evaluate(tree, point - shift)) / (2 * step)
            exact = expr.evaluate(derivative, point)
            assert abs(exact - centered) <= 1e-4 * (1.0 + abs(exact) + abs(value))


def test_simplify_is_idempotent_and_value_preserving() -> None:
    rng = np.random.default_rng(11)
    points = rng.uniform(-1.0, 1.0, size=(3, 10))
    for _ in range(100):
        tree = _random_tree(rng, 6, 3)
        once = expr.simplify(tree)
        assert expr.simplify(once) == once
        assert np.allclose(expr.evaluate(once, points), expr.evaluate(tree, points), rtol=1e-9, atol=1e-9)


def test_printed_trees_parse_back_to_equal_values() -> None:
    rng = np.random.default_rng(3)
    for _ in range(100):
        tree = _random_tree(rng, 5, 3)
        reparsed = expr.parse(expr.to_string(tree), 3)
        assert expr.equivalent(tree, reparsed, 3)


def test_to_string_parenthesises_by_precedence() -> None:
    tree = expr.parse("(x1 + x2)*x3 - (x1 - x2)", 3)
    assert expr.to_string(tree) == "(x1 + x2)*x3 - (x1 - x2)"
    assert expr.to_string(expr.simplify(expr.parse("-2*x1", 1))) == "(-2)*x1"


def test_equivalent_detects_difference() -> None:
    assert expr.equivalent(expr.parse("sin(x1)^2 + cos(x1)^2", 1), Const(1.0), 1)
    assert not expr.equivalent(expr.parse("x1", 1), expr.parse("x1 + 1e-3", 1), 1)

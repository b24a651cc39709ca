"""Coefficient expressions: parsing, evaluation, differentiation and folding.

Grammar (standard precedence, ``^`` > unary minus > ``* /`` > ``+ -``)::

    expr  := term (("+" | "-") term)*
    term  := unary (("*" | "/") unary)*
    unary := ("-" | "+") unary | power
    power := atom ("^" INTEGER)?
    atom  := NUMBER | "x"<index> | "pi" | ("sin" | "cos" | "exp") "(" expr ")" | "(" expr ")"

Trees are immutable; every function here is pure. Evaluation accepts a point
of shape ``(n,)`` or a batch of points of shape ``(n, m)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from harnackprop.errors import EvaluationError, ParseError, PreconditionError

Value = Union[float, np.ndarray]


class Expr:
    __slots__ = ()

    def __str__(self) -> str:
        return to_string(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    index: int


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Func(Expr):
    name: str
    arg: Expr


ZERO = Const(0.0)
ONE = Const(1.0)

_FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTANTS = {"pi": math.pi}

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)
_VAR = re.compile(r"x(\d+)$")


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        match = _TOKEN.match(text, pos)
        if match is None or match.end() == pos:
            offset = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(offset, f"unexpected character {text[offset]!r}")
        kind = match.lastgroup or ""
        tokens.append(_Token(kind, match.group(kind), match.start(kind)))
        pos = match.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, dim: int) -> None:
        self._tokens = _tokenize(text)
        self._pos = 0
        self._dim = dim

    @property
    def _current(self) -> _Token:
        return self._tokens[self._pos]

    def _advance(self) -> _Token:
        token = self._tokens[self._pos]
        self._pos += 1
        return token

    def _accept_op(self, *ops: str) -> _Token | None:
        token = self._current
        if token.kind == "op" and token.text in ops:
            self._pos += 1
            return token
        return None

    def _expect_op(self, op: str) -> None:
        if self._accept_op(op) is None:
            token = self._current
            found = token.text or "end of input"
            raise ParseError(token.offset, f"expected {op!r}, found {found!r}")

    def parse(self) -> Expr:
        tree = self._expr()
        token = self._current
        if token.kind != "end":
            raise ParseError(token.offset, f"unexpected {token.text!r}")
        return tree

    def _expr(self) -> Expr:
        tree = self._term()
        while (token := self._accept_op("+", "-")) is not None:
            right = self._term()
            tree = Add(tree, right) if token.text == "+" else Sub(tree, right)
        return tree

    def _term(self) -> Expr:
        tree = self._unary()
        while (token := self._accept_op("*", "/")) is not None:
            right = self._unary()
            tree = Mul(tree, right) if token.text == "*" else Div(tree, right)
        return tree

    def _unary(self) -> Expr:
        if self._accept_op("-") is not None:
            return Neg(self._unary())
        if self._accept_op("+") is not None:
            return self._unary()
        return self._power()

    def _power(self) -> Expr:
        base = self._atom()
        if self._accept_op("^") is None:
            return base
        token = self._advance()
        if token.kind != "num" or not token.text.isdigit():
            raise ParseError(token.offset, "exponent must be a nonnegative integer literal")
        if self._current.kind == "op" and self._current.text == "^":
            raise ParseError(self._current.offset, "chained exponent, use parentheses")
        return Pow(base, int(token.text))

    def _atom(self) -> Expr:
        token = self._advance()
        if token.kind == "num":
            return Const(float(token.text))
        if token.kind == "name":
            return self._name(token)
        if token.kind == "op" and token.text == "(":
            inner = self._expr()
            self._expect_op(")")
            return inner
        found = token.text or "end of input"
        raise ParseError(token.offset, f"unexpected {found!r}")

    def _name(self, token: _Token) -> Expr:
        if token.text in _FUNCTIONS:
            self._expect_op("(")
            arg = self._expr()
            self._expect_op(")")
            return Func(token.text, arg)
        if token.text in _CONSTANTS:
            return Const(_CONSTANTS[token.text])
        match = _VAR.match(token.text)
        if match is None:
            raise ParseError(token.offset, f"unknown name {token.text!r}")
        index = int(match.group(1))
        if index < 1 or index > self._dim:
            raise ParseError(token.offset, f"variable {token.text} out of range for dimension {self._dim}")
        return Var(index)


def parse(text: str, dim: int) -> Expr:
    """Parse infix ``text``; ParseError offsets count UTF-8 bytes."""
    try:
        return _Parser(text, dim).parse()
    except ParseError as exc:
        raise ParseError(len(text[: exc.offset].encode("utf-8")), exc.message) from None


def max_index(e: Expr) -> int:
    match e:
        case Const():
            return 0
        case Var(index):
            return index
        case Add(l, r) | Sub(l, r) | Mul(l, r) | Div(l, r):
            return max(max_index(l), max_index(r))
        case Pow(base, _):
            return max_index(base)
        case Neg(arg) | Func(_, arg):
            return max_index(arg)
    raise TypeError(f"not an expression: {e!r}")


def evaluate(e: Expr, point: Sequence[float] | np.ndarray) -> Value:
    p = np.asarray(point, dtype=float)
    needed = max_index(e)
    if needed > p.shape[0]:
        raise PreconditionError(f"point of dimension {p.shape[0]} cannot evaluate x{needed}")
    with np.errstate(over="ignore", invalid="ignore"):
        value = _eval(e, p)
    if p.ndim == 1:
        return float(value)
    return np.array(np.broadcast_to(value, p.shape[1:]), dtype=float)


def _eval(e: Expr, p: np.ndarray) -> Value:
    match e:
        case Const(value):
            return value
        case Var(index):
            return p[index - 1]
        case Add(l, r):
            return _eval(l, p) + _eval(r, p)
        case Sub(l, r):
            return _eval(l, p) - _eval(r, p)
        case Mul(l, r):
            return _eval(l, p) * _eval(r, p)
        case Div(l, r):
            denominator = _eval(r, p)
            if np.any(np.asarray(denominator) == 0.0):
                raise EvaluationError(f"division by zero in {to_string(e)}")
            return _eval(l, p) / denominator
        case Pow(base, exponent):
            value = _eval(base, p)
            try:
                result = value ** exponent
            except OverflowError as exc:
                raise EvaluationError(f"overflow in {to_string(e)}") from exc
            if not np.all(np.isfinite(result)) and np.all(np.isfinite(value)):
                raise EvaluationError(f"overflow in {to_string(e)}")
            return result
        case Neg(arg):
            return -_eval(arg, p)
        case Func(name, arg):
            return _FUNCTIONS[name](_eval(arg, p))
    raise TypeError(f"not an expression: {e!r}")


# Smart constructors. Each folds constants and neutral elements, so trees built
# from them are already in simplified form.


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def add(left: Expr, right: Expr) -> Expr:
    if isinstance(left, Const) and isinstance(right, Const):
        return Const(left.value + right.value)
    if _is_const(left, 0.0):
        return right
    if _is_const(right, 0.0):
        return left
    if isinstance(right, Neg):
        return sub(left, right.arg)
    return Add(left, right)


def sub(left: Expr, right: Expr) -> Expr:
    if isinstance(left, Const) and isinstance(right, Const):
        return Const(left.value - right.value)
    if _is_const(right, 0.0):
        return left
    if _is_const(left, 0.0):
        return neg(right)
    if left == right:
        return ZERO
    if isinstance(right, Neg):
        return add(left, right.arg)
    return Sub(left, right)


def mul(left: Expr, right: Expr) -> Expr:
    if isinstance(right, Const) and not isinstance(left, Const):
        left, right = right, left
    if isinstance(left, Const):
        if isinstance(right, Const):
            return Const(left.value * right.value)
        if left.value == 0.0:
            return ZERO
        if left.value == 1.0:
            return right
        if left.value == -1.0:
            return neg(right)
        if isinstance(right, Mul) and isinstance(right.left, Const):
            return mul(Const(left.value * right.left.value), right.right)
        if isinstance(right, Neg):
            return mul(Const(-left.value), right.arg)
    return Mul(left, right)


def div(left: Expr, right: Expr) -> Expr:
    if isinstance(right, Const):
        if right.value == 0.0:
            return Div(left, right)
        if isinstance(left, Const):
            return Const(left.value / right.value)
        if right.value == 1.0:
            return left
    if _is_const(left, 0.0):
        return ZERO
    return Div(left, right)


def power(base: Expr, exponent: int) -> Expr:
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if isinstance(base, Const):
        try:
            return Const(base.value**exponent)
        except OverflowError:
            pass
    return Pow(base, exponent)


def neg(arg: Expr) -> Expr:
    if isinstance(arg, Const):
        return Const(-arg.value)
    if isinstance(arg, Neg):
        return arg.arg
    return Neg(arg)


def call(name: str, arg: Expr) -> Expr:
    if isinstance(arg, Const):
        return Const(float(_FUNCTIONS[name](arg.value)))
    return Func(name, arg)


def simplify(e: Expr) -> Expr:
    match e:
        case Const() | Var():
            return e
        case Add(l, r):
            return add(simplify(l), simplify(r))
        case Sub(l, r):
            return sub(simplify(l), simplify(r))
        case Mul(l, r):
            return mul(simplify(l), simplify(r))
        case Div(l, r):
            return div(simplify(l), simplify(r))
        case Pow(base, exponent):
            return power(simplify(base), exponent)
        case Neg(arg):
            return neg(simplify(arg))
        case Func(name, arg):
            return call(name, simplify(arg))
    raise TypeError(f"not an expression: {e!r}")


def differentiate(e: Expr, axis: int) -> Expr:
    """Symbolic d/dx_axis (1-based axis), simplified."""
    return simplify(_diff(e, axis))


def _diff(e: Expr, axis: int) -> Expr:
    match e:
        case Const():
            return ZERO
        case Var(index):
            return ONE if index == axis else ZERO
        case Add(l, r):
            return add(_diff(l, axis), _diff(r, axis))
        case Sub(l, r):
            return sub(_diff(l, axis), _diff(r, axis))
        case Mul(l, r):
            return add(mul(_diff(l, axis), r), mul(l, _diff(r, axis)))
        case Div(l, r):
            numerator = sub(mul(_diff(l, axis), r), mul(l, _diff(r, axis)))
            return div(numerator, power(r, 2))
        case Pow(base, exponent):
            if exponent == 0:
                return ZERO
            return mul(mul(Const(float(exponent)), power(base, exponent - 1)), _diff(base, axis))
        case Neg(arg):
            return neg(_diff(arg, axis))
        case Func("sin", arg):
            return mul(call("cos", arg), _diff(arg, axis))
        case Func("cos", arg):
            return neg(mul(call("sin", arg), _diff(arg, axis)))
        case Func("exp", arg):
            return mul(call("exp", arg), _diff(arg, axis))
    raise TypeError(f"not an expression: {e!r}")


def _format_const(value: float) -> str:
    if math.isfinite(value) and value.is_integer() and abs(value) < 1e15:
        text = str(int(value))
    else:
        text = repr(value)
    return f"({text})" if value < 0 else text


_PRECEDENCE = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def _wrap(e: Expr, minimum: int) -> str:
    text = to_string(e)
    if _PRECEDENCE.get(type(e), 5) < minimum:
        return f"({text})"
    return text


def to_string(e: Expr) -> str:
    match e:
        case Const(value):
            return _format_const(value)
        case Var(index):
            return f"x{index}"
        case Add(l, r):
            return f"{_wrap(l, 1)} + {_wrap(r, 1)}"
        case Sub(l, r):
            return f"{_wrap(l, 1)} - {_wrap(r, 2)}"
        case Mul(l, r):
            return f"{_wrap(l, 2)}*{_wrap(r, 2)}"
        case Div(l, r):
            return f"{_wrap(l, 2)}/{_wrap(r, 3)}"
        case Pow(base, exponent):
            return f"{_wrap(base, 5)}^{exponent}"
        case Neg(arg):
            return f"-{_wrap(arg, 3)}"
        case Func(name, arg):
            return f"{name}({to_string(arg)})"
    raise TypeError(f"not an expression: {e!r}")


def equivalent(
    first: Expr,
    second: Expr,
    dim: int,
    *,
    samples: int = 20,
    tol: float = 1e-9,
    seed: int = 0,
) -> bool:
    """Sampled equality on [-1, 1]^dim; there is no symbolic decision procedure."""
    rng = np.random.default_rng(seed)
    points = rng.uniform(-1.0, 1.0, size=(max(dim, 1), samples))
    a = evaluate(first, points)
    b = evaluate(second, points)
    scale = 1.0 + np.maximum(np.abs(a), np.abs(b))
    return bool(np.all(np.abs(a - b) <= tol * scale))


def is_zero(e: Expr) -> bool:
    return _is_const(simplify(e), 0.0)

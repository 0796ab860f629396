"""
Expression trees for profiles, matrix entries, symbols and test functions.

Grammar, loosest binding first::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' args ')' | '(' expr ')'

`^` is right-associative and its exponent must be free of variables.
The printer emits a fully parenthesised form that parses back to the same tree.
"""
import logging
import math
import re
from dataclasses import dataclass
from functools import reduce, singledispatch
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from errors import (
    ArityError,
    DomainError,
    ExpressionSyntaxError,
    NonDifferentiableNode,
    UnboundVariable,
    UnknownVariable,
    VarSetError,
)

logger = logging.getLogger(__name__)

UNARY_FUNCS = ("neg", "exp", "log", "abs", "sqrt", "sin", "cos", "sign", "pos")
NARY_FUNCS = ("min", "max")
NAMED_CONSTANTS = {"pi": math.pi}

# log of the smallest normal double; used where a factor underflows to 0
LOG_TINY = math.log(np.finfo(float).tiny)


class Expr:
    """Base class of expression nodes. Nodes are immutable and compare structurally."""

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    arg: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class NAry(Expr):
    op: str
    args: Tuple[Expr, ...]


@dataclass(frozen=True)
class Norm(Expr):
    names: Tuple[str, ...]


ZERO = Const(0.0)
ONE = Const(1.0)
TWO = Const(2.0)

Number = Union[float, int]
Env = Mapping[str, Union[float, np.ndarray]]


@dataclass(frozen=True)
class VarSet:
    """Declared variables split by role: spatial x, frequency xi and free parameters."""

    spatial: Tuple[str, ...] = ()
    frequency: Tuple[str, ...] = ()
    params: Tuple[str, ...] = ()

    def __post_init__(self):
        names = self.names
        if len(set(names)) != len(names):
            raise VarSetError(f"Variable names must be unique and roles disjoint: {names}")
        for name in names:
            if not re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", name) or name in UNARY_FUNCS + NARY_FUNCS + ("norm",) or name in NAMED_CONSTANTS:
                raise VarSetError(f"Invalid variable name '{name}'")

    @property
    def names(self) -> Tuple[str, ...]:
        return self.spatial + self.frequency + self.params

    def __contains__(self, name: str) -> bool:
        return name in self.names

    @classmethod
    def spatial_dims(cls, n: int) -> "VarSet":
        return cls(spatial=tuple(f"x{i}" for i in range(1, n + 1)))

    @classmethod
    def phase_space(cls, n: int) -> "VarSet":
        return cls(
            spatial=tuple(f"x{i}" for i in range(1, n + 1)),
            frequency=tuple(f"xi{i}" for i in range(1, n + 1)),
        )


# Parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> List[Tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        match = _TOKEN_RE.match(text, pos)
        if not match:
            raise ExpressionSyntaxError(pos, "a number, name or operator", text)
        kind = match.lastgroup
        tokens.append((kind, match.group(kind), match.start(kind)))
        pos = match.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: VarSet):
        self.text = text
        self.variables = variables
        self.tokens = _tokenize(text)
        self.index = 0

    def peek(self, offset: int = 0) -> Tuple[str, str, int]:
        return self.tokens[min(self.index + offset, len(self.tokens) - 1)]

    def advance(self) -> Tuple[str, str, int]:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def expect(self, value: str) -> None:
        kind, text, pos = self.peek()
        if text != value or kind != "op":
            raise ExpressionSyntaxError(pos, f"'{value}'", self.text)
        self.advance()

    def parse(self) -> Expr:
        node = self.expression()
        kind, _, pos = self.peek()
        if kind != "eof":
            raise ExpressionSyntaxError(pos, "an operator or end of input", self.text)
        return node

    def expression(self) -> Expr:
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.advance()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.advance()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            # a bare literal after '-' is read as a negative constant
            if self.peek()[0] == "number" and self.peek(1)[1] != "^":
                return Const(-float(self.advance()[1]))
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, text, pos = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            exponent = self.unary()
            if variables(exponent):
                raise ExpressionSyntaxError(pos, "a constant exponent", self.text)
            return Binary("^", base, exponent)
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.advance()
        if kind == "number":
            return Const(float(text))
        if kind == "op" and text == "(":
            node = self.expression()
            self.expect(")")
            return node
        if kind == "name":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                return self.call(text, pos)
            if text in self.variables:
                return Var(text)
            if text in NAMED_CONSTANTS:
                return Const(NAMED_CONSTANTS[text])
            raise UnknownVariable(text)
        raise ExpressionSyntaxError(pos, "a number, name or '('", self.text)

    def call(self, name: str, pos: int) -> Expr:
        if name not in UNARY_FUNCS + NARY_FUNCS + ("norm",):
            raise ExpressionSyntaxError(pos, "a known function name", self.text)
        self.expect("(")
        args = [self.expression()]
        while self.peek()[0] == "op" and self.peek()[1] == ",":
            self.advance()
            args.append(self.expression())
        self.expect(")")
        if name in UNARY_FUNCS:
            if len(args) != 1:
                raise ArityError(name, len(args), "1")
            return Unary(name, args[0])
        if name in NARY_FUNCS:
            if len(args) < 2:
                raise ArityError(name, len(args), "at least 2")
            return NAry(name, tuple(args))
        if not all(isinstance(arg, Var) for arg in args):
            raise ArityError(name, len(args), "only variable")
        return Norm(tuple(arg.name for arg in args))


def parse(text: str, variables: VarSet) -> Expr:
    """Parse text into an expression tree over the declared variables"""
    if not text or not text.strip():
        raise ExpressionSyntaxError(0, "a non-empty expression", text)
    return _Parser(text, variables).parse()


# Printing

def _const_text(value: float) -> str:
    if value < 0 or (value == 0 and math.copysign(1.0, value) < 0):
        return f"({value!r})"
    return repr(value)


def to_text(e: Expr) -> str:
    """Canonical fully parenthesised text; parse(to_text(e)) == e"""
    if isinstance(e, Const):
        return _const_text(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        return f"{e.op}({to_text(e.arg)})"
    if isinstance(e, Binary):
        return f"({to_text(e.left)} {e.op} {to_text(e.right)})"
    if isinstance(e, NAry):
        return f"{e.op}({', '.join(to_text(arg) for arg in e.args)})"
    if isinstance(e, Norm):
        return f"norm({', '.join(e.names)})"
    raise TypeError(f"Not an expression node: {e!r}")


def variables(e: Expr) -> FrozenSet[str]:
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Unary):
        return variables(e.arg)
    if isinstance(e, Binary):
        return variables(e.left) | variables(e.right)
    if isinstance(e, NAry):
        return frozenset().union(*(variables(arg) for arg in e.args))
    if isinstance(e, Norm):
        return frozenset(e.names)
    raise TypeError(f"Not an expression node: {e!r}")


# Constructors with literal folding

def const(value: Number) -> Const:
    return Const(float(value))


def _is(e: Expr, value: float) -> bool:
    return isinstance(e, Const) and e.value == value


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Binary("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    return Binary("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    return Binary("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0:
        return Const(a.value / b.value)
    if _is(a, 0.0) and not _is(b, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return Binary("/", a, b)


def power(a: Expr, exponent: Union[Expr, Number]) -> Expr:
    if not isinstance(exponent, Expr):
        exponent = const(exponent)
    if _is(exponent, 0.0):
        return ONE
    if _is(exponent, 1.0):
        return a
    if isinstance(a, Const) and isinstance(exponent, Const):
        try:
            return Const(evaluate(Binary("^", a, exponent), {}))
        except DomainError:
            pass
    return Binary("^", a, exponent)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def func(op: str, a: Expr) -> Expr:
    if op == "neg":
        return neg(a)
    node = Unary(op, a)
    if isinstance(a, Const):
        try:
            return Const(evaluate(node, {}))
        except DomainError:
            pass
    return node


def nary(op: str, args: Sequence[Expr]) -> Expr:
    args = tuple(args)
    if len(args) == 1:
        return args[0]
    return NAry(op, args)


def total(terms: Iterable[Expr]) -> Expr:
    return reduce(add, terms, ZERO)


def product(factors: Iterable[Expr]) -> Expr:
    return reduce(mul, factors, ONE)


# Evaluation

def _broadcast_shape(env: Env) -> Tuple[int, ...]:
    shapes = [np.shape(value) for value in env.values()]
    return np.broadcast_shapes(*shapes) if shapes else ()


def _fail(node: Expr, values: np.ndarray, mask: np.ndarray) -> None:
    bad = np.asarray(values)[mask] if np.ndim(values) else np.asarray([values])
    raise DomainError(to_text(node), float(bad.flat[0]))


def _eval(e: Expr, env: Env) -> np.ndarray:
    if isinstance(e, Const):
        return np.asarray(e.value)
    if isinstance(e, Var):
        if e.name not in env:
            raise UnboundVariable(e.name)
        return np.asarray(env[e.name], dtype=float)
    if isinstance(e, Norm):
        missing = [name for name in e.names if name not in env]
        if missing:
            raise UnboundVariable(missing[0])
        return np.sqrt(reduce(np.add, (np.square(np.asarray(env[name], dtype=float)) for name in e.names)))
    if isinstance(e, Unary):
        a = _eval(e.arg, env)
        if e.op == "neg":
            return -a
        if e.op == "exp":
            with np.errstate(over="ignore"):
                return np.exp(a)
        if e.op == "log":
            bad = a <= 0
            if np.any(bad):
                _fail(e, a, bad)
            return np.log(a)
        if e.op == "sqrt":
            bad = a < 0
            if np.any(bad):
                _fail(e, a, bad)
            return np.sqrt(a)
        if e.op == "abs":
            return np.abs(a)
        if e.op == "sin":
            return np.sin(a)
        if e.op == "cos":
            return np.cos(a)
        if e.op == "sign":
            return np.sign(a)
        if e.op == "pos":
            return np.maximum(a, 0.0)
        raise TypeError(f"Unknown unary operator '{e.op}'")
    if isinstance(e, Binary):
        a = _eval(e.left, env)
        b = _eval(e.right, env)
        with np.errstate(over="ignore", under="ignore"):
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            if e.op == "/":
                bad = np.broadcast_to(b == 0, np.broadcast_shapes(np.shape(a), np.shape(b)))
                if np.any(bad):
                    _fail(e, np.broadcast_to(b, bad.shape), bad)
                return a / b
            if e.op == "^":
                c = float(b)
                if c != int(c):
                    bad = a < 0
                    if np.any(bad):
                        _fail(e, a, bad)
                if c < 0:
                    bad = a == 0
                    if np.any(bad):
                        _fail(e, a, bad)
                return np.power(a, c)
        raise TypeError(f"Unknown binary operator '{e.op}'")
    if isinstance(e, NAry):
        values = [_eval(arg, env) for arg in e.args]
        return reduce(np.minimum if e.op == "min" else np.maximum, values)
    raise TypeError(f"Not an expression node: {e!r}")


def evaluate_array(e: Expr, env: Env) -> np.ndarray:
    """Vectorised evaluation; variables bound to arrays broadcast together"""
    result = _eval(e, env)
    return np.array(np.broadcast_to(result, np.broadcast_shapes(np.shape(result), _broadcast_shape(env))), dtype=float)


def evaluate(e: Expr, point: Mapping[str, Number]) -> float:
    return float(_eval(e, {name: float(value) for name, value in point.items()}))


def log_evaluate(e: Expr, env: Env) -> Tuple[np.ndarray, np.ndarray]:
    """
    Evaluate log(e) structurally so that exp(g) factors never underflow.
    Returns (log values, clamp mask); entries where a non-structural factor is 0
    are clamped at LOG_TINY and flagged.
    """
    shape = _broadcast_shape(env)
    if isinstance(e, Unary) and e.op == "exp":
        return np.broadcast_to(_eval(e.arg, env), shape).astype(float), np.zeros(shape, dtype=bool)
    if isinstance(e, Unary) and e.op == "sqrt":
        logs, clamped = log_evaluate(e.arg, env)
        return 0.5 * logs, clamped
    if isinstance(e, Binary) and e.op in "*/":
        left, left_clamped = log_evaluate(e.left, env)
        right, right_clamped = log_evaluate(e.right, env)
        logs = left + right if e.op == "*" else left - right
        return logs, left_clamped | right_clamped
    if isinstance(e, Binary) and e.op == "^" and isinstance(e.right, Const):
        c = e.right.value
        base = Unary("abs", e.left) if c == int(c) and int(c) % 2 == 0 else e.left
        logs, clamped = log_evaluate(base, env)
        return c * logs, clamped
    values = evaluate_array(e, env)
    if np.any(values < 0):
        _fail(Unary("log", e), values, values < 0)
    clamped = values <= 0
    with np.errstate(divide="ignore"):
        logs = np.where(clamped, LOG_TINY, np.log(np.where(clamped, 1.0, values)))
    if np.any(clamped):
        logger.warning(f"log clamped at {LOG_TINY:.1f} for {int(clamped.sum())} entries of {to_text(e)}")
    return logs, clamped


# Substitution

def substitute(e: Expr, mapping: Mapping[str, Union[Expr, Number]]) -> Expr:
    mapping = {name: value if isinstance(value, Expr) else const(value) for name, value in mapping.items()}
    return _substitute(e, mapping)


def _substitute(e: Expr, mapping: Dict[str, Expr]) -> Expr:
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Unary):
        return func(e.op, _substitute(e.arg, mapping))
    if isinstance(e, Binary):
        left = _substitute(e.left, mapping)
        right = _substitute(e.right, mapping)
        return {"+": add, "-": sub, "*": mul, "/": div, "^": power}[e.op](left, right)
    if isinstance(e, NAry):
        return NAry(e.op, tuple(_substitute(arg, mapping) for arg in e.args))
    if isinstance(e, Norm):
        if not any(name in mapping for name in e.names):
            return e
        kept = tuple(name for name in e.names if name not in mapping)
        squares = [power(mapping[name], 2) for name in e.names if name in mapping]
        if kept:
            squares.insert(0, power(Norm(kept), 2))
        return func("sqrt", total(squares))
    raise TypeError(f"Not an expression node: {e!r}")


# Differentiation

@singledispatch
def _derivative(e: Expr, var: str) -> Expr:
    raise TypeError(f"Not an expression node: {e!r}")


@_derivative.register(Const)
def _(e: Const, var: str) -> Expr:
    return ZERO


@_derivative.register(Var)
def _(e: Var, var: str) -> Expr:
    return ONE if e.name == var else ZERO


@_derivative.register(Norm)
def _(e: Norm, var: str) -> Expr:
    return div(Var(var), e) if var in e.names else ZERO


@_derivative.register(Unary)
def _(e: Unary, var: str) -> Expr:
    u = e.arg
    du = _derivative(u, var)
    if _is(du, 0.0):
        return ZERO
    if e.op == "neg":
        return neg(du)
    if e.op == "exp":
        return mul(e, du)
    if e.op == "log":
        return div(du, u)
    if e.op == "sqrt":
        return div(du, mul(TWO, e))
    if e.op == "abs":
        return mul(func("sign", u), du)
    if e.op == "sin":
        return mul(func("cos", u), du)
    if e.op == "cos":
        return neg(mul(func("sin", u), du))
    if e.op == "sign":
        return ZERO
    if e.op == "pos":
        return mul(div(add(ONE, func("sign", u)), TWO), du)
    raise TypeError(f"Unknown unary operator '{e.op}'")


@_derivative.register(Binary)
def _(e: Binary, var: str) -> Expr:
    a, b = e.left, e.right
    da = _derivative(a, var)
    db = _derivative(b, var)
    if e.op == "+":
        return add(da, db)
    if e.op == "-":
        return sub(da, db)
    if e.op == "*":
        return add(mul(da, b), mul(a, db))
    if e.op == "/":
        return div(sub(mul(da, b), mul(a, db)), power(b, 2))
    if e.op == "^":
        if variables(b):
            raise NonDifferentiableNode(f"Exponent of {to_text(e)} depends on variables")
        c = evaluate(b, {})
        if c == 0:
            return ZERO
        return mul(mul(const(c), power(a, c - 1)), da)
    raise TypeError(f"Unknown binary operator '{e.op}'")


@_derivative.register(NAry)
def _(e: NAry, var: str) -> Expr:
    # min/max folded pairwise; (a + b -/+ |a - b|) / 2 differentiated with sign(a - b)
    head = e.args[0] if len(e.args) == 2 else NAry(e.op, e.args[:-1])
    last = e.args[-1]
    da = _derivative(head, var)
    db = _derivative(last, var)
    switch = mul(func("sign", sub(head, last)), sub(da, db))
    combined = add(da, db)
    return div(add(combined, switch) if e.op == "max" else sub(combined, switch), TWO)


def differentiate(e: Expr, var: str, variables: Optional[VarSet] = None) -> Expr:
    """
    Exact symbolic derivative of e in var.
    abs, min, max and pos differentiate through sign nodes, valid away from their kinks.
    With variables given, var must be declared there; a declared variable absent from e gives 0.
    """
    if variables is not None and var not in variables:
        raise UnknownVariable(var)
    return _derivative(e, var)


def gradient(e: Expr, names: Sequence[str], variables: Optional[VarSet] = None) -> List[Expr]:
    return [differentiate(e, name, variables) for name in names]


def derivative(e: Expr, orders: Mapping[str, int], variables: Optional[VarSet] = None) -> Expr:
    """Mixed partial derivative, e.g. {"x1": 2, "xi1": 1}"""
    for name, order in orders.items():
        for _ in range(order):
            e = differentiate(e, name, variables)
    return e

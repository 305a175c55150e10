"""Small arithmetic-expression language for metric entries and sweepout maps.

Grammar::

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := "-" factor | base ("^" integer)?
    base   := number | "pi" | ident | "(" expr ")" | func "(" expr ")"
    func   := "sin" | "cos" | "exp"
    ident  := "x1" .. "x9"   (plus any extra names the caller allows)

Evaluation is numpy-vectorised: variables may be bound to scalars or arrays.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Union

import numpy as np

from .errors import ExpressionError

COORDINATE_NAMES = tuple(f"x{i}" for i in range(1, 10))
FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class Pi:
    pass


@dataclass(frozen=True)
class Variable:
    name: str


@dataclass(frozen=True)
class Negate:
    operand: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Power:
    base: "Expression"
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expression"


Expression = Union[Number, Pi, Variable, Negate, BinOp, Power, Call]


def _tokenize(text: str):
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None or match.end() == pos:
            stripped = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExpressionError(f"unexpected character {text[stripped]!r}", stripped)
        kind = match.lastgroup
        start = match.start(kind)
        tokens.append((kind, match.group(kind), start))
        pos = match.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: frozenset[str]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.variables = variables

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.take()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ExpressionError(f"expected {value!r}, found {found}", pos)

    def parse(self) -> Expression:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected token {text!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Negate(self.factor())
        node = self.base()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            sign = 1
            if self.peek()[1] == "-" and self.peek()[0] == "op":
                self.take()
                sign = -1
            kind, text, pos = self.take()
            if kind != "number" or not text.isdigit():
                raise ExpressionError("exponent must be an integer literal", pos)
            node = Power(node, sign * int(text))
        return node

    def base(self):
        kind, text, pos = self.take()
        if kind == "number":
            return Number(float(text))
        if kind == "name":
            if text == "pi":
                return Pi()
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            if text in self.variables:
                return Variable(text)
            raise ExpressionError(f"unknown identifier {text!r}", pos)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise ExpressionError(f"unexpected {found}", pos)


def parse_expression(text: str, variables: Iterable[str] | None = None) -> Expression:
    """Parse ``text`` into an expression tree.

    ``variables`` lists the identifiers accepted besides ``pi`` and the
    function names; it defaults to the coordinate names ``x1`` .. ``x9``.
    """
    allowed = frozenset(COORDINATE_NAMES if variables is None else variables)
    return _Parser(text, allowed).parse()


def to_text(node: Expression) -> str:
    """Print a tree so that re-parsing yields an identical tree."""
    if isinstance(node, Number):
        return repr(float(node.value))
    if isinstance(node, Pi):
        return "pi"
    if isinstance(node, Variable):
        return node.name
    if isinstance(node, Negate):
        return f"-({to_text(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Power):
        return f"({to_text(node.base)})^{node.exponent}"
    if isinstance(node, Call):
        return f"{node.func}({to_text(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def evaluate(node: Expression, env: Mapping[str, object]):
    """Evaluate ``node`` with variables bound by ``env`` (scalars or arrays)."""
    if isinstance(node, Number):
        return np.float64(node.value)
    if isinstance(node, Pi):
        return np.float64(np.pi)
    if isinstance(node, Variable):
        try:
            return env[node.name]
        except KeyError:
            raise ExpressionError(f"variable {node.name!r} is not bound") from None
    if isinstance(node, Negate):
        return -evaluate(node.operand, env)
    if isinstance(node, BinOp):
        a = evaluate(node.left, env)
        b = evaluate(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return a / b
    if isinstance(node, Power):
        base = evaluate(node.base, env)
        if node.exponent < 0:
            return 1.0 / base ** (-node.exponent)
        return base**node.exponent
    if isinstance(node, Call):
        return FUNCTIONS[node.func](evaluate(node.arg, env))
    raise TypeError(f"not an expression node: {node!r}")


def variables_of(node: Expression) -> set[str]:
    if isinstance(node, Variable):
        return {node.name}
    if isinstance(node, Negate):
        return variables_of(node.operand)
    if isinstance(node, BinOp):
        return variables_of(node.left) | variables_of(node.right)
    if isinstance(node, Power):
        return variables_of(node.base)
    if isinstance(node, Call):
        return variables_of(node.arg)
    return set()


def coordinate_env(coords) -> dict:
    """Bind ``x1..xn`` to the last axis of ``coords``."""
    coords = np.asarray(coords, dtype=float)
    return {f"x{i + 1}": coords[..., i] for i in range(coords.shape[-1])}


def _source(node: Expression) -> str:
    if isinstance(node, Number):
        return repr(float(node.value))
    if isinstance(node, Pi):
        return "_pi"
    if isinstance(node, Variable):
        return node.name
    if isinstance(node, Negate):
        return f"(-{_source(node.operand)})"
    if isinstance(node, BinOp):
        return f"({_source(node.left)} {node.op} {_source(node.right)})"
    if isinstance(node, Power):
        if node.exponent < 0:
            return f"(1.0 / {_source(node.base)} ** {-node.exponent})"
        return f"({_source(node.base)} ** {node.exponent})"
    if isinstance(node, Call):
        return f"_{node.func}({_source(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def compile_expression(node: Expression, names: Iterable[str]):
    """Compile a tree into a plain function of the positional ``names``.

    Equivalent to :func:`evaluate` but without per-node dispatch, which
    matters inside the RK4 loop.
    """
    names = tuple(names)
    unknown = variables_of(node) - set(names)
    if unknown:
        raise ExpressionError(f"unbound variables {sorted(unknown)}")
    src = f"lambda {', '.join(names)}: {_source(node)}"
    namespace = {"_pi": np.pi, "_sin": np.sin, "_cos": np.cos, "_exp": np.exp}
    return eval(src, namespace)  # noqa: S307 - source is generated from a validated tree


_ZERO = Number(0.0)
_ONE = Number(1.0)


def _add(a, b):
    if a == _ZERO:
        return b
    if b == _ZERO:
        return a
    return BinOp("+", a, b)


def _sub(a, b):
    if b == _ZERO:
        return a
    if a == _ZERO:
        return Negate(b)
    return BinOp("-", a, b)


def _mul(a, b):
    if a == _ZERO or b == _ZERO:
        return _ZERO
    if a == _ONE:
        return b
    if b == _ONE:
        return a
    return BinOp("*", a, b)


def differentiate(node: Expression, var: str) -> Expression:
    """Symbolic partial derivative with light constant folding."""
    if isinstance(node, (Number, Pi)):
        return _ZERO
    if isinstance(node, Variable):
        return _ONE if node.name == var else _ZERO
    if isinstance(node, Negate):
        d = differentiate(node.operand, var)
        return _ZERO if d == _ZERO else Negate(d)
    if isinstance(node, BinOp):
        a, b = node.left, node.right
        da, db = differentiate(a, var), differentiate(b, var)
        if node.op == "+":
            return _add(da, db)
        if node.op == "-":
            return _sub(da, db)
        if node.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        # quotient rule
        if db == _ZERO:
            return _ZERO if da == _ZERO else BinOp("/", da, b)
        return BinOp("/", _sub(_mul(da, b), _mul(a, db)), Power(b, 2))
    if isinstance(node, Power):
        db = differentiate(node.base, var)
        if db == _ZERO or node.exponent == 0:
            return _ZERO
        k = node.exponent
        inner = _ONE if k == 1 else Power(node.base, k - 1)
        return _mul(_mul(Number(float(k)), inner), db)
    if isinstance(node, Call):
        da = differentiate(node.arg, var)
        if da == _ZERO:
            return _ZERO
        if node.func == "sin":
            outer = Call("cos", node.arg)
        elif node.func == "cos":
            outer = Negate(Call("sin", node.arg))
        else:
            outer = node
        return _mul(outer, da)
    raise TypeError(f"not an expression node: {node!r}")

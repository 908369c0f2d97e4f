"""Scalar expression trees: parsing, evaluation and exact differentiation.

Expressions are immutable.  Only integer powers are representable, which
keeps the derivative of every polynomial exact.

>>> e = parse_expr("w1*w2 + w1^2", ["w1", "w2"])
>>> evaluate(differentiate(e, 0), [3.0, 4.0])
10.0
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "Pow",
    "ExprSyntaxError",
    "ExprDomainError",
    "parse_expr",
    "evaluate",
    "differentiate",
    "simplify",
    "variables_used",
    "UNARY_FUNCS",
]

UNARY_FUNCS = ("sin", "cos", "exp", "log", "sqrt")


class ExprSyntaxError(ValueError):
    """Malformed expression text.  ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} (at offset {offset})")


class ExprDomainError(ArithmeticError):
    """Evaluation left the domain of an operation (log of 0, x/0, ...)."""


class Expr:
    """Base class of all expression nodes."""

    __slots__ = ()

    # A little operator sugar so trees can be assembled in code as well.
    def __add__(self, other):
        return Binary("+", self, _wrap(other))

    def __radd__(self, other):
        return Binary("+", _wrap(other), self)

    def __sub__(self, other):
        return Binary("-", self, _wrap(other))

    def __rsub__(self, other):
        return Binary("-", _wrap(other), self)

    def __mul__(self, other):
        return Binary("*", self, _wrap(other))

    def __rmul__(self, other):
        return Binary("*", _wrap(other), self)

    def __truediv__(self, other):
        return Binary("/", self, _wrap(other))

    def __neg__(self):
        return Unary("neg", self)

    def __pow__(self, n):
        if isinstance(n, bool) or not isinstance(n, int):
            raise TypeError("only integer exponents are supported")
        return Pow(self, n)

    @property
    def children(self) -> tuple["Expr", ...]:
        return ()


def _wrap(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return Const(float(x))


@dataclass(frozen=True, slots=True)
class Const(Expr):
    value: float

    def __str__(self):
        return repr(self.value) if self.value != int(self.value) or abs(self.value) > 1e15 else str(int(self.value))


@dataclass(frozen=True, slots=True)
class Var(Expr):
    index: int
    name: str = ""

    def __str__(self):
        return self.name or f"x{self.index}"


@dataclass(frozen=True, slots=True)
class Unary(Expr):
    op: str  # "neg" or one of UNARY_FUNCS
    arg: Expr

    @property
    def children(self):
        return (self.arg,)

    def __str__(self):
        if self.op == "neg":
            return f"-{_paren(self.arg, 3)}"
        return f"{self.op}({self.arg})"


@dataclass(frozen=True, slots=True)
class Binary(Expr):
    op: str  # one of + - * /
    left: Expr
    right: Expr

    @property
    def children(self):
        return (self.left, self.right)

    def __str__(self):
        prec = _PREC[self.op]
        # right operand of - and / needs parens at equal precedence
        rp = prec + 1 if self.op in "-/" else prec
        return f"{_paren(self.left, prec)} {self.op} {_paren(self.right, rp)}"


@dataclass(frozen=True, slots=True)
class Pow(Expr):
    base: Expr
    exponent: int

    @property
    def children(self):
        return (self.base,)

    def __str__(self):
        return f"{_paren(self.base, 5)}^{self.exponent}"


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _precedence(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return 3
    if isinstance(e, Pow):
        return 4
    if isinstance(e, Const) and e.value < 0:
        return 3
    return 6


def _paren(e: Expr, min_prec: int) -> str:
    s = str(e)
    return f"({s})" if _precedence(e) < min_prec else s


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos), text)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str, names: Sequence[str]):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.index = {name: k for k, name in enumerate(names)}

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        return ExprSyntaxError(message, _byte_offset(self.text, tok[2]), self.text)

    def expect(self, value):
        tok = self.take()
        if tok[1] != value or tok[0] == "end":
            raise self.error(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok)

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            raise self.error("empty expression")
        e = self.expr()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected token {self.peek()[1]!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = Binary(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = Binary(op, e, self.factor())
        return e

    def factor(self) -> Expr:
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.take()
            return Unary("neg", self.factor())
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return Pow(base, self.exponent())
        return base

    def exponent(self) -> int:
        # integer, optionally signed or parenthesised; chains associate right
        tok = self.peek()
        if tok[1] == "(":
            self.take()
            start = tok
            value = _constant_value(self.expr())
            self.expect(")")
            if value is None:
                raise self.error("non-integer exponent", start)
        else:
            sign = 1
            if tok[1] == "-":
                self.take()
                sign = -1
                tok = self.peek()
            if tok[0] != "num":
                raise self.error("non-integer exponent", tok)
            self.take()
            value = sign * float(tok[1])
        if value != int(value):
            raise self.error("non-integer exponent", tok)
        n = int(value)
        if self.peek()[1] == "^":
            self.take()
            n = n ** self.exponent()
            if n != int(n):
                raise self.error("non-integer exponent", tok)
        return int(n)

    def atom(self) -> Expr:
        tok = self.take()
        kind, value, _ = tok
        if kind == "num":
            return Const(float(value))
        if kind == "ident":
            if value in UNARY_FUNCS and self.peek()[1] == "(":
                self.take()
                arg = self.expr()
                self.expect(")")
                return Unary(value, arg)
            if value not in self.index:
                raise self.error(f"unknown identifier {value!r}", tok)
            return Var(self.index[value], value)
        if value == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise self.error(f"unexpected token {value or 'end of input'!r}", tok)


def _constant_value(e: Expr):
    s = simplify(e)
    return s.value if isinstance(s, Const) else None


def parse_expr(text: str, vars: Sequence[str]) -> Expr:
    """Parse ``text`` over the ordered variable names ``vars``.

    Precedence, tightest first: ``^``, unary minus, ``* /``, ``+ -``.
    Raises :class:`ExprSyntaxError` carrying the byte offset of the problem.
    """
    return _Parser(text, vars).parse()


# ---------------------------------------------------------------------------
# evaluation


def evaluate(e: Expr, w: Sequence[float]) -> float:
    """Evaluate in double precision.  Domain violations raise ExprDomainError."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return float(w[e.index])
    if isinstance(e, Binary):
        a = evaluate(e.left, w)
        b = evaluate(e.right, w)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if b == 0.0:
            raise ExprDomainError(f"division by zero in {e}")
        return a / b
    if isinstance(e, Pow):
        a = evaluate(e.base, w)
        if e.exponent < 0 and a == 0.0:
            raise ExprDomainError(f"division by zero in {e}")
        try:
            return a ** e.exponent
        except OverflowError as exc:
            raise ExprDomainError(f"overflow in {e}") from exc
    if isinstance(e, Unary):
        a = evaluate(e.arg, w)
        op = e.op
        if op == "neg":
            return -a
        if op == "sin":
            return math.sin(a)
        if op == "cos":
            return math.cos(a)
        if op == "exp":
            try:
                return math.exp(a)
            except OverflowError as exc:
                raise ExprDomainError(f"overflow in {e}") from exc
        if op == "log":
            if a <= 0.0:
                raise ExprDomainError(f"log of non-positive value {a!r}")
            return math.log(a)
        if op == "sqrt":
            if a < 0.0:
                raise ExprDomainError(f"sqrt of negative value {a!r}")
            return math.sqrt(a)
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# simplification and differentiation


def _is(e: Expr, value: float) -> bool:
    return isinstance(e, Const) and e.value == value


def _neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def _add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(b, Unary) and b.op == "neg":
        return _sub(a, b.arg)
    return Binary("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return _neg(b)
    return Binary("-", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return Const(0.0)
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return _neg(b)
    if _is(b, -1.0):
        return _neg(a)
    # keep constants on the left so they can fold with a neighbour
    if isinstance(b, Const):
        a, b = b, a
    if isinstance(a, Const) and isinstance(b, Binary) and b.op == "*" and isinstance(b.left, Const):
        return _mul(Const(a.value * b.left.value), b.right)
    return Binary("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is(b, 1.0):
        return a
    if _is(a, 0.0) and not _is(b, 0.0):
        return Const(0.0)
    return Binary("/", a, b)


def _pow(a: Expr, n: int) -> Expr:
    if n == 0:
        return Const(1.0)
    if n == 1:
        return a
    if isinstance(a, Const) and not (a.value == 0.0 and n < 0):
        return Const(a.value ** n)
    if isinstance(a, Pow):
        return _pow(a.base, a.exponent * n)
    return Pow(a, n)


def simplify(e: Expr) -> Expr:
    """Best-effort bottom-up simplification; preserves the value everywhere."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Binary):
        a, b = simplify(e.left), simplify(e.right)
        return {"+": _add, "-": _sub, "*": _mul, "/": _div}[e.op](a, b)
    if isinstance(e, Pow):
        return _pow(simplify(e.base), e.exponent)
    if isinstance(e, Unary):
        a = simplify(e.arg)
        if e.op == "neg":
            return _neg(a)
        if isinstance(a, Const):
            try:
                return Const(evaluate(Unary(e.op, a), ()))
            except ExprDomainError:
                pass
        return Unary(e.op, a)
    raise TypeError(f"not an expression node: {e!r}")


def differentiate(e: Expr, var_index: int) -> Expr:
    """Exact symbolic partial derivative with respect to variable ``var_index``."""
    return _d(e, var_index)


def _d(e: Expr, i: int) -> Expr:
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0 if e.index == i else 0.0)
    if isinstance(e, Binary):
        a, b = e.left, e.right
        da, db = _d(a, i), _d(b, i)
        if e.op == "+":
            return _add(da, db)
        if e.op == "-":
            return _sub(da, db)
        if e.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        # quotient rule, split so a constant denominator stays simple
        if _is(db, 0.0):
            return _div(da, b)
        return _div(_sub(_mul(da, b), _mul(a, db)), _pow(b, 2))
    if isinstance(e, Pow):
        n = e.exponent
        return _mul(_mul(Const(float(n)), _pow(e.base, n - 1)), _d(e.base, i))
    if isinstance(e, Unary):
        a = e.arg
        da = _d(a, i)
        if _is(da, 0.0):
            return Const(0.0)
        if e.op == "neg":
            return _neg(da)
        if e.op == "sin":
            return _mul(Unary("cos", a), da)
        if e.op == "cos":
            return _neg(_mul(Unary("sin", a), da))
        if e.op == "exp":
            return _mul(e, da)
        if e.op == "log":
            return _div(da, a)
        if e.op == "sqrt":
            return _div(da, _mul(Const(2.0), e))
    raise TypeError(f"not an expression node: {e!r}")


def variables_used(e: Expr) -> set[int]:
    if isinstance(e, Var):
        return {e.index}
    out: set[int] = set()
    for c in e.children:
        out |= variables_used(c)
    return out

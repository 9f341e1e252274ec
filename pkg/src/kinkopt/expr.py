"""Analytic scalar fields: parsing, printing, vectorised evaluation and
symbolic differentiation.

Grammar::

    expr   := term (("+"|"-") term)*
    term   := factor (("*"|"/") factor)*
    factor := ("-")? power
    power  := atom ("^" factor)?
    atom   := NUMBER | IDENT | IDENT "(" expr ("," expr)* ")" | "(" expr ")"

Variables are ``x1``, ``x2`` and ``y`` (the state value inside integrands and
coefficients); ``pi`` is a constant.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

VARIABLES = ("x1", "x2", "y")
FUNCTIONS = {
    "sin": 1, "cos": 1, "exp": 1, "sqrt": 1, "abs": 1,
    "log": 1, "sign": 1, "min": None, "max": None,
}
CONSTANTS = {"pi": math.pi}


class ExprError(Exception):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, offset: int, expected=()):
        self.offset = offset
        self.expected = tuple(sorted(expected))
        detail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at offset {offset}{detail}")


class UnknownIdentifierError(ParseError):
    pass


class DomainError(ExprError):
    pass


# --------------------------------------------------------------------- AST

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Expr = Union[Num, Var, Neg, BinOp, Call]

ZERO = Num(0.0)
ONE = Num(1.0)


# ------------------------------------------------------------------ lexing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos,
                             {"NUMBER", "IDENT", "(", "-"})
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def _accept(self, value):
        kind, val, _ = self.tok
        if kind == "op" and val == value:
            self.i += 1
            return True
        return False

    def _expect(self, value, expected=None):
        if not self._accept(value):
            kind, val, off = self.tok
            got = val if kind != "end" else "end of input"
            raise ParseError(f"unexpected {got!r}", off, expected or {value})

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, off = self.tok
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", off, {"+", "-", "*", "/", "^", "end of input"})
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            if self._accept("+"):
                e = BinOp("+", e, self.term())
            elif self._accept("-"):
                e = BinOp("-", e, self.term())
            else:
                return e

    def term(self) -> Expr:
        e = self.factor()
        while True:
            if self._accept("*"):
                e = BinOp("*", e, self.factor())
            elif self._accept("/"):
                e = BinOp("/", e, self.factor())
            else:
                return e

    def factor(self) -> Expr:
        if self._accept("-"):
            return Neg(self.power())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self._accept("^"):
            return BinOp("^", base, self.factor())
        return base

    def atom(self) -> Expr:
        kind, val, off = self.tok
        if kind == "num":
            self.i += 1
            return Num(float(val))
        if kind == "ident":
            self.i += 1
            if val in FUNCTIONS:
                self._expect("(", {"("})
                args = [self.expr()]
                while self._accept(","):
                    args.append(self.expr())
                self._expect(")", {",", ")"})
                arity = FUNCTIONS[val]
                if arity is not None and len(args) != arity:
                    raise ParseError(f"{val} takes {arity} argument(s)", off)
                if arity is None and len(args) < 2:
                    raise ParseError(f"{val} takes at least 2 arguments", off)
                return Call(val, tuple(args))
            if val in VARIABLES:
                return Var(val)
            if val in CONSTANTS:
                return Var(val)
            raise UnknownIdentifierError(f"unknown identifier {val!r}", off,
                                         set(VARIABLES) | set(FUNCTIONS) | set(CONSTANTS))
        if kind == "op" and val == "(":
            self.i += 1
            e = self.expr()
            self._expect(")", {")"})
            return e
        got = val if kind != "end" else "end of input"
        raise ParseError(f"unexpected {got!r}", off, {"NUMBER", "IDENT", "("})


def parse_expr(text: str) -> Expr:
    """Parse ``text`` into an expression tree."""
    if not text or not text.strip():
        raise ParseError("empty expression", 0, {"NUMBER", "IDENT", "(", "-"})
    return _Parser(text).parse()


def as_expr(e) -> Expr:
    if isinstance(e, str):
        return parse_expr(e)
    if isinstance(e, (int, float)):
        return Num(float(e))
    if isinstance(e, DiffExpr):
        return e.expr
    return e


# ---------------------------------------------------------------- printing

def to_string(e: Expr) -> str:
    """Fully parenthesised text form; re-parses to the same tree."""
    if isinstance(e, Num):
        s = repr(float(e.value))
        return f"({s})" if e.value < 0 else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_string(e.operand)})"
    if isinstance(e, BinOp):
        return f"({to_string(e.left)} {e.op} {to_string(e.right)})"
    if isinstance(e, Call):
        return f"{e.name}({', '.join(to_string(a) for a in e.args)})"
    raise TypeError(e)


def free_variables(e: Expr) -> set:
    if isinstance(e, Var):
        return set() if e.name in CONSTANTS else {e.name}
    if isinstance(e, Num):
        return set()
    if isinstance(e, Neg):
        return free_variables(e.operand)
    if isinstance(e, BinOp):
        return free_variables(e.left) | free_variables(e.right)
    return set().union(*(free_variables(a) for a in e.args))


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    if isinstance(e, Var):
        return as_expr(mapping[e.name]) if e.name in mapping else e
    if isinstance(e, Num):
        return e
    if isinstance(e, Neg):
        return Neg(substitute(e.operand, mapping))
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
    return Call(e.name, tuple(substitute(a, mapping) for a in e.args))


# -------------------------------------------------------------- evaluation

def _sign(x):
    return np.sign(x)


def evaluate(e: Expr, env: Mapping[str, object]):
    """Evaluate with numpy broadcasting over the values in ``env``.

    Raises :class:`DomainError` on division by zero, sqrt/log of a negative
    argument, or any non-finite result.
    """
    with np.errstate(all="ignore"):
        out = _eval(e, env)
    if not np.all(np.isfinite(out)):
        raise DomainError(f"non-finite value in {to_string(e)}")
    return out


def _eval(e, env):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        if e.name in CONSTANTS:
            return CONSTANTS[e.name]
        try:
            return env[e.name]
        except KeyError:
            raise ExprError(f"variable {e.name!r} is not bound") from None
    if isinstance(e, Neg):
        return -_eval(e.operand, env)
    if isinstance(e, BinOp):
        a = _eval(e.left, env)
        b = _eval(e.right, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if np.any(np.asarray(b) == 0):
                raise DomainError(f"division by zero in {to_string(e)}")
            return a / b
        return np.power(np.asarray(a, dtype=float), b)
    args = [_eval(a, env) for a in e.args]
    name = e.name
    if name == "sqrt":
        if np.any(np.asarray(args[0]) < 0):
            raise DomainError(f"sqrt of negative value in {to_string(e)}")
        return np.sqrt(args[0])
    if name == "log":
        if np.any(np.asarray(args[0]) <= 0):
            raise DomainError(f"log of nonpositive value in {to_string(e)}")
        return np.log(args[0])
    if name == "min":
        out = args[0]
        for a in args[1:]:
            out = np.minimum(out, a)
        return out
    if name == "max":
        out = args[0]
        for a in args[1:]:
            out = np.maximum(out, a)
        return out
    return {"sin": np.sin, "cos": np.cos, "exp": np.exp,
            "abs": np.abs, "sign": _sign}[name](args[0])


def eval_field(e, p) -> float:
    """Value of ``e`` at the point ``p = (x1, x2)``."""
    e = as_expr(e)
    return float(evaluate(e, {"x1": float(p[0]), "x2": float(p[1])}))


# --------------------------------------------------------- differentiation

def _is_num(e, v=None):
    return isinstance(e, Num) and (v is None or e.value == v)


def add(a, b):
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    return BinOp("+", a, b)


def sub(a, b):
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return neg(b)
    return BinOp("-", a, b)


def mul(a, b):
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return ZERO
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    return BinOp("*", a, b)


def div(a, b):
    if _is_num(a, 0.0):
        return ZERO
    if _is_num(b, 1.0):
        return a
    return BinOp("/", a, b)


def neg(a):
    if _is_num(a, 0.0):
        return ZERO
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def power(a, b):
    if _is_num(b, 1.0):
        return a
    if _is_num(b, 0.0):
        return ONE
    return BinOp("^", a, b)


def _binary(name, args):
    # n-ary min/max as nested binary calls
    if len(args) == 2:
        return args
    return (args[0], Call(name, tuple(args[1:])))


def differentiate(e, var: str) -> Expr:
    """Symbolic derivative of ``e`` with respect to ``var``.

    Kinks use ``d|g| = sign(g) g'`` with ``sign(0) = 0``; min/max split the
    derivative evenly on ties.
    """
    e = as_expr(e)
    if var not in VARIABLES:
        raise ExprError(f"cannot differentiate with respect to {var!r}")
    return _d(e, var)


def _d(e, v):
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Neg):
        return neg(_d(e.operand, v))
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        if e.op == "+":
            return add(_d(a, v), _d(b, v))
        if e.op == "-":
            return sub(_d(a, v), _d(b, v))
        if e.op == "*":
            return add(mul(_d(a, v), b), mul(a, _d(b, v)))
        if e.op == "/":
            return div(sub(mul(_d(a, v), b), mul(a, _d(b, v))), power(b, Num(2.0)))
        # power
        if v not in free_variables(b):
            if _is_num(b):
                lower = Num(b.value - 1.0)
            else:
                lower = sub(b, ONE)
            return mul(mul(b, power(a, lower)), _d(a, v))
        # a^b = exp(b log a)
        return mul(e, add(mul(_d(b, v), Call("log", (a,))), div(mul(b, _d(a, v)), a)))
    name, args = e.name, e.args
    if name in ("min", "max"):
        f, g = _binary(name, args)
        s = Call("sign", (sub(f, g),))
        half = Num(0.5)
        lo = mul(half, sub(ONE, s))   # 1 where f < g
        hi = mul(half, add(ONE, s))   # 1 where f > g
        df, dg = _d(f, v), _d(g, v)
        if name == "min":
            return add(mul(lo, df), mul(hi, dg))
        return add(mul(hi, df), mul(lo, dg))
    g = args[0]
    dg = _d(g, v)
    if _is_num(dg, 0.0) or name == "sign":
        return ZERO
    if name == "sin":
        outer = Call("cos", (g,))
    elif name == "cos":
        outer = neg(Call("sin", (g,)))
    elif name == "exp":
        outer = e
    elif name == "sqrt":
        outer = div(ONE, mul(Num(2.0), e))
    elif name == "abs":
        outer = Call("sign", (g,))
    elif name == "log":
        outer = div(ONE, g)
    else:  # pragma: no cover
        raise ExprError(name)
    return mul(outer, dg)


def laplacian(e) -> Expr:
    e = as_expr(e)
    return add(_d(_d(e, "x1"), "x1"), _d(_d(e, "x2"), "x2"))


@dataclass(frozen=True)
class DiffExpr:
    """An expression bundled with its symbolic gradient and Laplacian."""

    expr: Expr
    dx1: Expr
    dx2: Expr
    laplacian: Expr

    @classmethod
    def from_expr(cls, e) -> "DiffExpr":
        e = as_expr(e)
        d1 = differentiate(e, "x1")
        d2 = differentiate(e, "x2")
        lap = add(differentiate(d1, "x1"), differentiate(d2, "x2"))
        return cls(e, d1, d2, lap)

    def __call__(self, x1, x2, **extra):
        return _broadcast(evaluate(self.expr, {"x1": x1, "x2": x2, **extra}), x1)

    def grad(self, x1, x2, **extra):
        env = {"x1": x1, "x2": x2, **extra}
        g1 = _broadcast(evaluate(self.dx1, env), x1)
        g2 = _broadcast(evaluate(self.dx2, env), x1)
        return np.stack([g1, g2], axis=-1)

    def lap(self, x1, x2, **extra):
        return _broadcast(evaluate(self.laplacian, {"x1": x1, "x2": x2, **extra}), x1)

    def __str__(self):
        return to_string(self.expr)


def _broadcast(value, like):
    return np.broadcast_to(np.asarray(value, dtype=float), np.shape(like)).copy()


def field(e) -> DiffExpr:
    """Coerce text/Expr/DiffExpr into a :class:`DiffExpr`."""
    if isinstance(e, DiffExpr):
        return e
    return DiffExpr.from_expr(e)

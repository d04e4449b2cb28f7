"""Symbolic scalar expressions on R^n.

A small calculus DSL: expressions are immutable trees built from constants,
coordinates, arithmetic (+, -, *, /, integer ^), the functions exp/sin/cos,
and a compactly supported bump primitive.  Trees can be parsed from text,
printed back to parseable text, differentiated exactly to any order, and
compiled to vectorised numpy evaluators.

Coordinates are named ``x1, x2, ...``; ``x, y, z`` are aliases for the first
three and ``t`` is an alias for the first (used in time formulas).

The bump primitive ``bump(u)`` equals ``exp(-1/(1-u^2))`` for ``|u| < 1`` and
is exactly ``0.0`` otherwise.  Its derivatives stay inside the family
``exp(-lam/(1-u^2)) * P(u) / (1-u^2)^k`` (printed as ``flat(u, lam, k, c0,
c1, ...)`` with polynomial coefficients ``c0 + c1*u + ...``), so every
derivative also evaluates to exactly zero outside the open interval.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expression",
    "Const",
    "Coord",
    "EvaluationError",
    "ParseError",
    "as_expr",
    "bump",
    "flat_bump",
    "coord",
    "diff",
    "dimension",
    "evaluate",
    "eval_at_points",
    "compile_expr",
    "parse",
    "substitute",
    "to_source",
]

Real = Union[int, float]


class ParseError(ValueError):
    """Raised on malformed source text; carries the character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class EvaluationError(ArithmeticError):
    """Raised when evaluation hits a guarded operation (e.g. x/0)."""


@dataclass(frozen=True)
class Expression:
    """Base node.  Instances are immutable and safe to share."""

    def __add__(self, other):
        return _add(self, as_expr(other))

    def __radd__(self, other):
        return _add(as_expr(other), self)

    def __sub__(self, other):
        return _sub(self, as_expr(other))

    def __rsub__(self, other):
        return _sub(as_expr(other), self)

    def __mul__(self, other):
        return _mul(self, as_expr(other))

    def __rmul__(self, other):
        return _mul(as_expr(other), self)

    def __truediv__(self, other):
        return _div(self, as_expr(other))

    def __rtruediv__(self, other):
        return _div(as_expr(other), self)

    def __pow__(self, exponent):
        if not isinstance(exponent, int):
            raise TypeError("exponent must be a plain integer")
        return _pow(self, exponent)

    def __neg__(self):
        return _neg(self)

    def __str__(self):
        return to_source(self)


@dataclass(frozen=True)
class Const(Expression):
    value: float


@dataclass(frozen=True)
class Coord(Expression):
    index: int  # 1-based coordinate index
    name: str


@dataclass(frozen=True)
class Add(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Sub(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Mul(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Div(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Neg(Expression):
    arg: Expression


@dataclass(frozen=True)
class Pow(Expression):
    base: Expression
    exponent: int


@dataclass(frozen=True)
class Fun(Expression):
    name: str  # exp | sin | cos
    arg: Expression


@dataclass(frozen=True)
class FlatBump(Expression):
    """exp(-lam/(1-u^2)) * poly(u) / (1-u^2)^power inside |u|<1, else 0."""

    arg: Expression
    lam: float
    power: int
    coeffs: tuple  # polynomial coefficients, low degree first


ZERO = Const(0.0)
ONE = Const(1.0)

_FUNCTIONS = ("exp", "sin", "cos")


def as_expr(value) -> Expression:
    if isinstance(value, Expression):
        return value
    if isinstance(value, (int, float)):
        return Const(float(value))
    raise TypeError(f"cannot interpret {value!r} as an expression")


def coord(index: int, name: str | None = None) -> Expression:
    if index < 1:
        raise ValueError("coordinate indices are 1-based")
    return Coord(index, name or f"x{index}")


def bump(u) -> Expression:
    return FlatBump(as_expr(u), 1.0, 0, (1.0,))


def flat_bump(u, lam: float = 1.0, power: int = 0, coeffs: Sequence[Real] = (1.0,)) -> Expression:
    if lam <= 0:
        raise ValueError("bump exponent scale must be positive")
    if power < 0:
        raise ValueError("denominator power must be non-negative")
    c = _ptrim(tuple(float(v) for v in coeffs))
    if not c:
        return ZERO
    return FlatBump(as_expr(u), float(lam), int(power), c)


# ---------------------------------------------------------------------------
# smart constructors (light constant folding only; no simplification pass)

def _is_const(e, v=None):
    return isinstance(e, Const) and (v is None or e.value == v)


def _add(a, b):
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def _sub(a, b):
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _neg(b)
    return Sub(a, b)


def _mul(a, b):
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Mul(a, b)


def _div(a, b):
    if _is_const(b) and b.value != 0.0:
        if _is_const(a):
            return Const(a.value / b.value)
        if b.value == 1.0:
            return a
    # a zero denominator is kept so that evaluation reports the error
    return Div(a, b)


def _neg(a):
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _pow(base, k: int):
    if k == 0:
        return ONE
    if k == 1:
        return base
    if _is_const(base) and not (base.value == 0.0 and k < 0):
        return Const(base.value ** k)
    return Pow(base, k)


# ---------------------------------------------------------------------------
# differentiation

def _ptrim(coeffs):
    c = list(coeffs)
    while c and c[-1] == 0.0:
        c.pop()
    return tuple(c)


def _padd(p, q):
    out = [0.0] * max(len(p), len(q))
    for i, v in enumerate(p):
        out[i] += v
    for i, v in enumerate(q):
        out[i] += v
    return _ptrim(out)


def _pmul(p, q):
    if not p or not q:
        return ()
    out = [0.0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        for j, b in enumerate(q):
            out[i + j] += a * b
    return _ptrim(out)


def _pdiff(p):
    return _ptrim(tuple(i * p[i] for i in range(1, len(p))))


def diff(e: Expression, index: int) -> Expression:
    """Exact partial derivative with respect to the index-th coordinate."""
    if index < 1:
        raise ValueError("coordinate indices are 1-based")
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Coord):
        return ONE if e.index == index else ZERO
    if isinstance(e, Add):
        return _add(diff(e.left, index), diff(e.right, index))
    if isinstance(e, Sub):
        return _sub(diff(e.left, index), diff(e.right, index))
    if isinstance(e, Mul):
        return _add(_mul(diff(e.left, index), e.right), _mul(e.left, diff(e.right, index)))
    if isinstance(e, Div):
        num = _sub(_mul(diff(e.left, index), e.right), _mul(e.left, diff(e.right, index)))
        return _div(num, _pow(e.right, 2))
    if isinstance(e, Neg):
        return _neg(diff(e.arg, index))
    if isinstance(e, Pow):
        inner = diff(e.base, index)
        return _mul(_mul(Const(float(e.exponent)), _pow(e.base, e.exponent - 1)), inner)
    if isinstance(e, Fun):
        inner = diff(e.arg, index)
        if e.name == "exp":
            outer = Fun("exp", e.arg)
        elif e.name == "sin":
            outer = Fun("cos", e.arg)
        elif e.name == "cos":
            outer = _neg(Fun("sin", e.arg))
        else:  # pragma: no cover - constructors reject other names
            raise ValueError(f"unknown function {e.name}")
        return _mul(outer, inner)
    if isinstance(e, FlatBump):
        inner = diff(e.arg, index)
        if _is_const(inner, 0.0):
            return ZERO
        p, k, lam = e.coeffs, e.power, e.lam
        # d/du [e^{-lam/(1-u^2)} P(u) (1-u^2)^{-k}]
        #   = e^{-lam/(1-u^2)} Q(u) (1-u^2)^{-(k+2)}
        # with Q = -2 lam u P + P' (1-u^2)^2 + 2 k u (1-u^2) P
        q = _padd(
            _pmul(p, (0.0, -2.0 * lam)),
            _padd(
                _pmul(_pdiff(p), (1.0, 0.0, -2.0, 0.0, 1.0)),
                _pmul(p, (0.0, 2.0 * k, 0.0, -2.0 * k)),
            ),
        )
        if not q:
            return ZERO
        return _mul(FlatBump(e.arg, lam, k + 2, q), inner)
    raise TypeError(f"cannot differentiate {type(e).__name__}")


def dimension(e: Expression) -> int:
    """Largest coordinate index referenced (0 for constant expressions)."""
    if isinstance(e, Const):
        return 0
    if isinstance(e, Coord):
        return e.index
    if isinstance(e, (Add, Sub, Mul, Div)):
        return max(dimension(e.left), dimension(e.right))
    if isinstance(e, Neg):
        return dimension(e.arg)
    if isinstance(e, Pow):
        return dimension(e.base)
    if isinstance(e, (Fun, FlatBump)):
        return dimension(e.arg)
    raise TypeError(f"unknown node {type(e).__name__}")


def substitute(e: Expression, repl: Mapping[int, Expression]) -> Expression:
    """Replace coordinates by expressions (1-based indices)."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Coord):
        return repl.get(e.index, e)
    if isinstance(e, Add):
        return _add(substitute(e.left, repl), substitute(e.right, repl))
    if isinstance(e, Sub):
        return _sub(substitute(e.left, repl), substitute(e.right, repl))
    if isinstance(e, Mul):
        return _mul(substitute(e.left, repl), substitute(e.right, repl))
    if isinstance(e, Div):
        return _div(substitute(e.left, repl), substitute(e.right, repl))
    if isinstance(e, Neg):
        return _neg(substitute(e.arg, repl))
    if isinstance(e, Pow):
        return _pow(substitute(e.base, repl), e.exponent)
    if isinstance(e, Fun):
        return Fun(e.name, substitute(e.arg, repl))
    if isinstance(e, FlatBump):
        return FlatBump(substitute(e.arg, repl), e.lam, e.power, e.coeffs)
    raise TypeError(f"unknown node {type(e).__name__}")


# ---------------------------------------------------------------------------
# evaluation

def evaluate(e: Expression, point: Sequence[Real]) -> float:
    """Evaluate at a single point (sequence of floats, 1-based coordinates)."""
    vals = tuple(float(v) for v in point)

    def ev(node):
        if isinstance(node, Const):
            return node.value
        if isinstance(node, Coord):
            if node.index > len(vals):
                raise EvaluationError(
                    f"expression uses coordinate {node.index}, point has dimension {len(vals)}"
                )
            return vals[node.index - 1]
        if isinstance(node, Add):
            return ev(node.left) + ev(node.right)
        if isinstance(node, Sub):
            return ev(node.left) - ev(node.right)
        if isinstance(node, Mul):
            return ev(node.left) * ev(node.right)
        if isinstance(node, Div):
            den = ev(node.right)
            if den == 0.0:
                raise EvaluationError("division by zero")
            return ev(node.left) / den
        if isinstance(node, Neg):
            return -ev(node.arg)
        if isinstance(node, Pow):
            base = ev(node.base)
            if base == 0.0 and node.exponent < 0:
                raise EvaluationError("zero base with negative exponent")
            return base ** node.exponent
        if isinstance(node, Fun):
            return getattr(math, node.name)(ev(node.arg))
        if isinstance(node, FlatBump):
            u = ev(node.arg)
            if abs(u) >= 1.0:
                return 0.0
            den = 1.0 - u * u
            poly = node.coeffs[-1]
            for c in node.coeffs[-2::-1]:
                poly = poly * u + c
            return math.exp(-node.lam / den) * poly / den ** node.power
        raise TypeError(f"unknown node {type(node).__name__}")

    return ev(e)


def compile_expr(e: Expression) -> Callable:
    """Compile to a function of a tuple of coordinate arrays.

    The returned callable takes ``cols`` (one broadcastable array per
    coordinate) and returns an array or scalar broadcastable against them.
    """
    if isinstance(e, Const):
        v = e.value
        return lambda cols: v
    if isinstance(e, Coord):
        i = e.index - 1
        def f_coord(cols, _i=i):
            if _i >= len(cols):
                raise EvaluationError(
                    f"expression uses coordinate {_i + 1}, point has dimension {len(cols)}"
                )
            return cols[_i]
        return f_coord
    if isinstance(e, Add):
        fa, fb = compile_expr(e.left), compile_expr(e.right)
        return lambda cols: fa(cols) + fb(cols)
    if isinstance(e, Sub):
        fa, fb = compile_expr(e.left), compile_expr(e.right)
        return lambda cols: fa(cols) - fb(cols)
    if isinstance(e, Mul):
        fa, fb = compile_expr(e.left), compile_expr(e.right)
        return lambda cols: fa(cols) * fb(cols)
    if isinstance(e, Div):
        fa, fb = compile_expr(e.left), compile_expr(e.right)
        def f_div(cols):
            den = fb(cols)
            if np.any(np.asarray(den) == 0.0):
                raise EvaluationError("division by zero")
            return fa(cols) / den
        return f_div
    if isinstance(e, Neg):
        fa = compile_expr(e.arg)
        return lambda cols: -fa(cols)
    if isinstance(e, Pow):
        fa, k = compile_expr(e.base), e.exponent
        def f_pow(cols):
            base = fa(cols)
            if k < 0 and np.any(np.asarray(base) == 0.0):
                raise EvaluationError("zero base with negative exponent")
            return base ** k
        return f_pow
    if isinstance(e, Fun):
        fa = compile_expr(e.arg)
        ufunc = {"exp": np.exp, "sin": np.sin, "cos": np.cos}[e.name]
        return lambda cols: ufunc(fa(cols))
    if isinstance(e, FlatBump):
        fa, lam, k, coeffs = compile_expr(e.arg), e.lam, e.power, e.coeffs
        def f_bump(cols):
            u = np.asarray(fa(cols), dtype=float)
            if u.ndim == 0:
                uu = float(u)
                if abs(uu) >= 1.0:
                    return 0.0
                den = 1.0 - uu * uu
                poly = coeffs[-1]
                for c in coeffs[-2::-1]:
                    poly = poly * uu + c
                return math.exp(-lam / den) * poly / den ** k
            out = np.zeros(u.shape)
            mask = np.abs(u) < 1.0
            if mask.any():
                um = u[mask]
                den = 1.0 - um * um
                poly = np.full(um.shape, coeffs[-1])
                for c in coeffs[-2::-1]:
                    poly = poly * um + c
                out[mask] = np.exp(-lam / den) * poly / den ** k
            return out
        return f_bump
    raise TypeError(f"unknown node {type(e).__name__}")


def eval_at_points(e: Expression, points: np.ndarray) -> np.ndarray:
    """Evaluate on an (m, n) array of points, returning an (m,) array."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("expected an (m, n) array of points")
    cols = tuple(pts[:, i] for i in range(pts.shape[1]))
    out = compile_expr(e)(cols)
    return np.broadcast_to(np.asarray(out, dtype=float), (pts.shape[0],)).copy()


# ---------------------------------------------------------------------------
# printing

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 10, 20, 25, 30, 100


def _node_prec(e):
    if isinstance(e, (Add, Sub)):
        return _PREC_ADD
    if isinstance(e, (Mul, Div)):
        return _PREC_MUL
    if isinstance(e, Neg):
        return _PREC_NEG
    if isinstance(e, Pow):
        return _PREC_POW
    if isinstance(e, Const) and e.value < 0:
        return _PREC_NEG
    return _PREC_ATOM


def to_source(e: Expression) -> str:
    """Render to text that parses back to an evaluation-equal expression."""

    def render(node, minimum):
        prec = _node_prec(node)
        if isinstance(node, Const):
            v = node.value
            s = str(int(v)) if v == int(v) and abs(v) < 1e16 else repr(v)
        elif isinstance(node, Coord):
            s = node.name
        elif isinstance(node, Add):
            s = f"{render(node.left, _PREC_ADD)} + {render(node.right, _PREC_ADD + 1)}"
        elif isinstance(node, Sub):
            s = f"{render(node.left, _PREC_ADD)} - {render(node.right, _PREC_ADD + 1)}"
        elif isinstance(node, Mul):
            s = f"{render(node.left, _PREC_MUL)}*{render(node.right, _PREC_MUL + 1)}"
        elif isinstance(node, Div):
            s = f"{render(node.left, _PREC_MUL)}/{render(node.right, _PREC_MUL + 1)}"
        elif isinstance(node, Neg):
            s = f"-{render(node.arg, _PREC_NEG)}"
        elif isinstance(node, Pow):
            exp = str(node.exponent) if node.exponent >= 0 else f"({node.exponent})"
            s = f"{render(node.base, _PREC_POW + 1)}^{exp}"
        elif isinstance(node, Fun):
            s = f"{node.name}({render(node.arg, 0)})"
        elif isinstance(node, FlatBump):
            if node.lam == 1.0 and node.power == 0 and node.coeffs == (1.0,):
                s = f"bump({render(node.arg, 0)})"
            else:
                parts = [render(node.arg, 0), repr(node.lam), str(node.power)]
                parts += [repr(c) for c in node.coeffs]
                s = f"flat({', '.join(parts)})"
        else:
            raise TypeError(f"unknown node {type(node).__name__}")
        return f"({s})" if prec < minimum else s

    return render(e, 0)


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)

_VAR_ALIASES = {"x": 1, "y": 2, "z": 3, "t": 1}
_VAR_NUMBERED = re.compile(r"x([1-9][0-9]*)$")


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = []
        pos = 0
        while pos < len(source):
            m = _TOKEN_RE.match(source, pos)
            if m is None:
                # skip trailing whitespace; anything else is a bad character
                rest = source[pos:]
                if rest.strip() == "":
                    break
                raise ParseError("unexpected character", pos + len(rest) - len(rest.lstrip()))
            self.tokens.append(m)
            pos = m.end()
        self.i = 0

    def _peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def _tok_pos(self, tok):
        text = tok.group(0)
        return tok.start() + len(text) - len(text.lstrip())

    def _next(self):
        tok = self._peek()
        if tok is not None:
            self.i += 1
        return tok

    def _accept_op(self, *ops):
        tok = self._peek()
        if tok is not None and tok.lastgroup == "op" and tok.group("op") in ops:
            self.i += 1
            return tok.group("op")
        return None

    def parse(self) -> Expression:
        e = self.expression()
        tok = self._peek()
        if tok is not None:
            raise ParseError("syntax error", self._tok_pos(tok))
        return e

    def expression(self) -> Expression:
        e = self.term()
        while True:
            op = self._accept_op("+", "-")
            if op is None:
                return e
            rhs = self.term()
            e = _add(e, rhs) if op == "+" else _sub(e, rhs)

    def term(self) -> Expression:
        e = self.unary()
        while True:
            op = self._accept_op("*", "/")
            if op is None:
                return e
            rhs = self.unary()
            e = _mul(e, rhs) if op == "*" else _div(e, rhs)

    def unary(self) -> Expression:
        if self._accept_op("-"):
            return _neg(self.unary())
        if self._accept_op("+"):
            return self.unary()
        return self.power()

    def power(self) -> Expression:
        e = self.atom()
        while self._accept_op("^"):
            tok = self._peek()
            pos = self._tok_pos(tok) if tok else len(self.source)
            rhs = self.unary()
            if not isinstance(rhs, Const) or rhs.value != int(rhs.value):
                raise ParseError("non-integer exponent", pos)
            e = _pow(e, int(rhs.value))
        return e

    def atom(self) -> Expression:
        tok = self._next()
        if tok is None:
            raise ParseError("unexpected end of input", len(self.source))
        pos = self._tok_pos(tok)
        if tok.lastgroup == "num":
            return Const(float(tok.group("num")))
        if tok.lastgroup == "ident":
            name = tok.group("ident")
            if self._accept_op("("):
                return self._call(name, pos)
            if name in _VAR_ALIASES:
                return Coord(_VAR_ALIASES[name], name)
            m = _VAR_NUMBERED.match(name)
            if m:
                return Coord(int(m.group(1)), name)
            raise ParseError(f"unknown identifier '{name}'", pos)
        if tok.group("op") == "(":
            e = self.expression()
            if not self._accept_op(")"):
                raise ParseError("expected ')'", self._pos_or_end())
            return e
        raise ParseError("syntax error", pos)

    def _pos_or_end(self):
        tok = self._peek()
        return self._tok_pos(tok) if tok else len(self.source)

    def _call(self, name: str, pos: int) -> Expression:
        args = [self.expression()]
        while self._accept_op(","):
            args.append(self.expression())
        if not self._accept_op(")"):
            raise ParseError("expected ')'", self._pos_or_end())
        if name in _FUNCTIONS:
            if len(args) != 1:
                raise ParseError(f"{name} takes one argument", pos)
            return Fun(name, args[0])
        if name == "bump":
            if len(args) != 1:
                raise ParseError("bump takes one argument", pos)
            return bump(args[0])
        if name == "flat":
            if len(args) < 4:
                raise ParseError("flat takes at least four arguments", pos)
            for a in args[1:]:
                if not isinstance(a, Const):
                    raise ParseError("flat parameters must be constants", pos)
            lam = args[1].value
            k = args[2].value
            if k != int(k) or k < 0:
                raise ParseError("flat power must be a non-negative integer", pos)
            return flat_bump(args[0], lam, int(k), tuple(a.value for a in args[3:]))
        raise ParseError(f"unknown function '{name}'", pos)


def parse(source: str) -> Expression:
    """Parse infix source text into an expression tree."""
    return _Parser(source).parse()

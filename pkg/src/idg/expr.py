"""Scalar expressions over state variables ``x1..xn``.

Expressions are immutable trees that can be parsed from text, printed back,
evaluated (on floats or elementwise on numpy arrays), differentiated
symbolically and compiled into fast numpy callables.

>>> e = parse("sin(4*x1^2) + 2")
>>> evaluate(diff(e, 0), [0.5])  # 8*x1*cos(4*x1^2)
2.161209223472559
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, Union

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "Unary", "Binary", "ExprMatrix",
    "ExprError", "ExprSyntaxError", "UnknownIdentifierError", "ArityError",
    "DomainError", "NonDifferentiableError",
    "parse", "evaluate", "diff", "jacobian", "to_text", "compile_exprs",
    "const", "var", "depends_on", "max_var_index",
]

FUNCTIONS = ("sin", "cos", "tan", "exp", "sqrt", "abs")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int, src: str = ""):
        super().__init__(f"{message} at offset {offset}" + (f" in {src!r}" if src else ""))
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class ArityError(ExprError):
    def __init__(self, name: str, got: int, offset: int):
        super().__init__(f"function {name!r} takes 1 argument, got {got} (offset {offset})")
        self.offset = offset


class DomainError(ArithmeticError):
    """Evaluation hit a point outside an operation's domain."""


class NonDifferentiableError(ExprError):
    pass


# ---------------------------------------------------------------- nodes

class Expr:
    """Base node. Arithmetic operators build folded trees."""

    __slots__ = ()

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __pow__(self, other):
        return power(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True, eq=True, repr=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True, eq=True, repr=True)
class Var(Expr):
    index: int  # 0-based; printed as x{index+1}


@dataclass(frozen=True, eq=True, repr=True)
class Unary(Expr):
    op: str  # "neg" or a name from FUNCTIONS
    arg: Expr


@dataclass(frozen=True, eq=True, repr=True)
class Binary(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr


Number = Union[int, float]
ZERO = Const(0.0)
ONE = Const(1.0)


def _wrap(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float, np.floating, np.integer)):
        return Const(float(v))
    raise TypeError(f"cannot convert {type(v).__name__} to Expr")


def const(v: Number) -> Const:
    return Const(float(v))


def var(index: int) -> Var:
    return Var(int(index))


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


# Folding constructors: constant folding plus x*0, x+0, x*1, x^1 elimination.

def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Binary("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Binary("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Binary("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return Binary("/", a, b)  # left for evaluation to report
    if _is_const(a) and _is_const(b):
        return Const(a.value / b.value)
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return Binary("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return ONE
    if _is_const(a) and _is_const(b):
        try:
            return Const(_pow_scalar(a.value, b.value))
        except DomainError:
            return Binary("^", a, b)
    return Binary("^", a, b)


def neg(a: Expr) -> Expr:
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def func(name: str, a: Expr) -> Expr:
    if name not in FUNCTIONS:
        raise UnknownIdentifierError(name, -1)
    if _is_const(a):
        try:
            return Const(float(_FUNC_SCALAR[name](a.value)))
        except DomainError:
            pass
    return Unary(name, a)


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)
_VAR_NAME = re.compile(r"x([1-9]\d*)$")


def _tokenize(src: str):
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            offset = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {src[offset]!r}", offset, src)
        kind = m.lastgroup
        text = m.group(kind)
        start = m.start(kind)
        if text == "**":
            text = "^"
        tokens.append((kind, text, start))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        kind, t, off = self.take()
        if t != text:
            found = "end of input" if kind == "end" else repr(t)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", off, self.src)

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            raise ExprSyntaxError("empty expression", 0, self.src)
        e = self.expr()
        kind, t, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {t!r}", off, self.src)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = Binary(op, e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = Binary(op, e, rhs)
        return e

    def unary(self) -> Expr:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Unary("neg", self.unary())
        if self.peek()[:2] == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, text, off = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "name":
            if self.peek()[:2] == ("op", "("):
                if text not in FUNCTIONS:
                    raise UnknownIdentifierError(text, off)
                self.take()
                if self.peek()[:2] == ("op", ")"):
                    raise ArityError(text, 0, off)
                arg = self.expr()
                if self.peek()[:2] == ("op", ","):
                    n = 1
                    while self.peek()[:2] == ("op", ","):
                        self.take()
                        self.expr()
                        n += 1
                    raise ArityError(text, n, off)
                self.expect(")")
                return Unary(text, arg)
            m = _VAR_NAME.match(text)
            if m:
                return Var(int(m.group(1)) - 1)
            if text in FUNCTIONS:
                raise ExprSyntaxError(f"function {text!r} requires an argument list", off, self.src)
            if text == "pi":
                return Const(math.pi)
            raise UnknownIdentifierError(text, off)
        if (kind, text) == ("op", "("):
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {found}", off, self.src)


def parse(src: str) -> Expr:
    """Parse expression text over ``x1..xn``.

    Precedence, tightest first: ``^`` (right associative), unary minus,
    ``* /``, ``+ -``. ``**`` is accepted as a synonym for ``^``.
    """
    if not isinstance(src, str):
        raise TypeError("expression source must be a string")
    return _Parser(src).parse()


# ---------------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _fmt_number(v: float) -> str:
    if math.isfinite(v) and v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC["neg"]
    if isinstance(e, Const) and (e.value < 0 or (e.value == 0 and math.copysign(1, e.value) < 0)):
        return _PREC["neg"]
    return 5


def to_text(e: Expr) -> str:
    """Print ``e`` so that ``parse(to_text(e))`` evaluates identically."""
    if isinstance(e, Const):
        if not math.isfinite(e.value):
            raise ExprError(f"cannot print non-finite constant {e.value}")
        return _fmt_number(e.value)
    if isinstance(e, Var):
        return f"x{e.index + 1}"
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = to_text(e.arg)
            if _prec(e.arg) < _PREC["neg"]:
                inner = f"({inner})"
            return f"-{inner}"
        return f"{e.op}({to_text(e.arg)})"
    p = _PREC[e.op]
    left = to_text(e.left)
    right = to_text(e.right)
    if e.op == "^":
        if _prec(e.left) <= p:
            left = f"({left})"
        if _prec(e.right) < _PREC["neg"]:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    if e.op in "+-":
        return f"{left} {e.op} {right}"
    return f"{left}{e.op}{right}"


# ---------------------------------------------------------------- evaluation

def _pow_scalar(a: float, b: float) -> float:
    if a == 0.0 and b < 0:
        raise DomainError("zero raised to a negative power")
    if a < 0 and b != int(b):
        raise DomainError("negative base with non-integer exponent")
    return float(a) ** float(b)


def _sqrt_scalar(a: float) -> float:
    if a < 0:
        raise DomainError(f"sqrt of negative value {a}")
    return math.sqrt(a)


_FUNC_SCALAR: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "sqrt": _sqrt_scalar,
    "abs": abs,
}

_FUNC_NP = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
}


def _eval(e: Expr, x):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return x[e.index]
    if isinstance(e, Unary):
        a = _eval(e.arg, x)
        if e.op == "neg":
            return -a
        if e.op == "sqrt" and np.any(np.asarray(a) < 0):
            raise DomainError("sqrt of negative value")
        return _FUNC_NP[e.op](a)
    a = _eval(e.left, x)
    b = _eval(e.right, x)
    op = e.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if np.any(np.asarray(b) == 0):
            raise DomainError("division by zero")
        return a / b
    aa, bb = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if np.any((aa == 0) & (bb < 0)):
        raise DomainError("zero raised to a negative power")
    if np.any((aa < 0) & (bb != np.round(bb))):
        raise DomainError("negative base with non-integer exponent")
    return np.power(aa, bb)


def evaluate(e: Expr, x) -> float | np.ndarray:
    """Evaluate at state ``x`` (indexable by variable index).

    Components of ``x`` may be floats or equally shaped arrays; the result
    is then computed elementwise. Raises :class:`DomainError` on division by
    zero, square roots of negatives and undefined powers.
    """
    need = max_var_index(e)
    if need >= len(x):
        raise ValueError(f"expression uses x{need + 1} but state has dimension {len(x)}")
    with np.errstate(over="ignore"):
        out = _eval(e, x)
    if np.ndim(out) == 0:
        return float(out)
    return np.asarray(out, dtype=float)


def max_var_index(e: Expr) -> int:
    """Largest 0-based variable index used, or -1 for constant expressions."""
    if isinstance(e, Var):
        return e.index
    if isinstance(e, Const):
        return -1
    if isinstance(e, Unary):
        return max_var_index(e.arg)
    return max(max_var_index(e.left), max_var_index(e.right))


def depends_on(e: Expr, index: int) -> bool:
    if isinstance(e, Var):
        return e.index == index
    if isinstance(e, Const):
        return False
    if isinstance(e, Unary):
        return depends_on(e.arg, index)
    return depends_on(e.left, index) or depends_on(e.right, index)


# ---------------------------------------------------------------- differentiation

def diff(e: Expr, index: int) -> Expr:
    """Symbolic partial derivative with respect to variable ``index`` (0-based)."""
    if not depends_on(e, index):
        return ZERO
    if isinstance(e, Var):
        return ONE
    if isinstance(e, Unary):
        a = e.arg
        da = diff(a, index)
        op = e.op
        if op == "neg":
            return neg(da)
        if op == "sin":
            return mul(func("cos", a), da)
        if op == "cos":
            return neg(mul(func("sin", a), da))
        if op == "tan":
            return mul(add(ONE, power(func("tan", a), Const(2.0))), da)
        if op == "exp":
            return mul(func("exp", a), da)
        if op == "sqrt":
            return div(da, mul(Const(2.0), func("sqrt", a)))
        raise NonDifferentiableError(f"cannot differentiate {op}() with respect to x{index + 1}")
    a, b = e.left, e.right
    op = e.op
    if op == "+":
        return add(diff(a, index), diff(b, index))
    if op == "-":
        return sub(diff(a, index), diff(b, index))
    if op == "*":
        return add(mul(diff(a, index), b), mul(a, diff(b, index)))
    if op == "/":
        return div(sub(mul(diff(a, index), b), mul(a, diff(b, index))), power(b, Const(2.0)))
    if depends_on(b, index):
        raise NonDifferentiableError("exponent depends on the differentiation variable")
    return mul(mul(b, power(a, sub(b, ONE))), diff(a, index))


# ---------------------------------------------------------------- matrices

class ExprMatrix:
    """Rectangular array of expressions with a fixed shape."""

    __slots__ = ("_rows", "shape", "_compiled")

    def __init__(self, rows: Iterable[Iterable[Expr]]):
        rows = tuple(tuple(_wrap(e) for e in r) for r in rows)
        if not rows:
            raise ValueError("ExprMatrix needs at least one row")
        width = len(rows[0])
        if width == 0 or any(len(r) != width for r in rows):
            raise ValueError("ExprMatrix rows must be non-empty and of equal length")
        object.__setattr__(self, "_rows", rows)
        object.__setattr__(self, "shape", (len(rows), width))
        object.__setattr__(self, "_compiled", None)

    def __setattr__(self, name, value):
        raise AttributeError("ExprMatrix is immutable")

    @classmethod
    def column(cls, exprs: Sequence[Expr]) -> "ExprMatrix":
        return cls([[e] for e in exprs])

    @classmethod
    def parse(cls, rows: Sequence[Sequence[str]]) -> "ExprMatrix":
        return cls([[parse(s) for s in r] for r in rows])

    def __getitem__(self, ij):
        i, j = ij
        return self._rows[i][j]

    @property
    def rows(self):
        return self._rows

    def col(self, j: int) -> list[Expr]:
        return [r[j] for r in self._rows]

    def flat(self) -> list[Expr]:
        return [e for r in self._rows for e in r]

    def transpose(self) -> "ExprMatrix":
        return ExprMatrix(zip(*self._rows))

    def to_text(self) -> list[list[str]]:
        return [[to_text(e) for e in r] for r in self._rows]

    def evaluate(self, x) -> np.ndarray:
        """Numeric matrix at ``x``; with array-valued state components the
        result has shape ``rows x cols x <batch>``."""
        if self._compiled is None:
            object.__setattr__(self, "_compiled", compile_exprs(self.flat()))
        out = self._compiled(x)
        return out.reshape(self.shape + out.shape[1:])

    def __eq__(self, other):
        return isinstance(other, ExprMatrix) and self._rows == other._rows

    def __hash__(self):
        return hash(self._rows)

    def __repr__(self):
        return f"ExprMatrix({self.to_text()!r})"


def jacobian(v: Sequence[Expr] | ExprMatrix, n: int) -> ExprMatrix:
    """Matrix of partials: row = component of ``v``, column = variable."""
    comps = v.flat() if isinstance(v, ExprMatrix) else list(v)
    return ExprMatrix([[diff(e, j) for j in range(n)] for e in comps])


# ---------------------------------------------------------------- compilation

def _src(e: Expr) -> str:
    if isinstance(e, Const):
        return f"({float(e.value)!r})"
    if isinstance(e, Var):
        return f"x[{e.index}]"
    if isinstance(e, Unary):
        if e.op == "neg":
            return f"(-{_src(e.arg)})"
        return f"_{e.op}({_src(e.arg)})"
    if e.op == "^":
        if isinstance(e.right, Const) and e.right.value == 2.0:
            s = _src(e.left)
            return f"({s}*{s})"
        return f"_pow({_src(e.left)}, {_src(e.right)})"
    return f"({_src(e.left)} {e.op} {_src(e.right)})"


def compile_exprs(exprs: Sequence[Expr]) -> Callable[[Sequence], np.ndarray]:
    """Compile expressions into one callable ``x -> array(len(exprs), *batch)``.

    Floating point faults (division by zero, invalid operations) surface as
    :class:`DomainError`, matching :func:`evaluate`.
    """
    exprs = [_wrap(e) for e in exprs]
    body = ", ".join(_src(e) for e in exprs)
    ns = {f"_{k}": v for k, v in _FUNC_NP.items()}
    ns.update(_pow=np.power, inf=np.inf, nan=np.nan)
    fn = eval(f"lambda x: ({body},)", ns)  # noqa: S307 - source built from our own AST
    need = max((max_var_index(e) for e in exprs), default=-1)

    def call(x) -> np.ndarray:
        if need >= len(x):
            raise ValueError(f"expressions use x{need + 1} but state has dimension {len(x)}")
        try:
            with np.errstate(divide="raise", invalid="raise", over="ignore"):
                vals = fn(x)
        except (FloatingPointError, ZeroDivisionError) as exc:
            raise DomainError(str(exc)) from exc
        # constant-only expressions still follow the batch shape of the state
        batch = [np.shape(x[j]) for j in range(len(x))]
        shape = np.broadcast_shapes(*batch, *(np.shape(v) for v in vals))
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in vals])

    return call

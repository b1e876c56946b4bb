"""Small expression language for coefficient and envelope functions of one variable.

Expressions are functions of a single real variable ``x`` built from numeric
literals, the constants ``pi`` and ``e``, the binary operators ``+ - * / ^``,
unary minus, and the functions ``exp, log, sqrt, abs, min, max, pow``.
``^`` is right-associative and binds tighter than unary minus, so ``-x^2``
means ``-(x^2)``.

Grammar (EBNF)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = "-" unary | power ;
    power   = atom [ "^" unary ] ;
    atom    = NUMBER | "x" | "pi" | "e"
            | FUNC1 "(" expr ")"
            | FUNC2 "(" expr "," expr ")"
            | "(" expr ")" ;
    FUNC1   = "exp" | "log" | "sqrt" | "abs" ;
    FUNC2   = "min" | "max" | "pow" ;
    NUMBER  = digits [ "." digits ] [ ("e"|"E") ["+"|"-"] digits ] ;

Evaluation is strict about domains: ``log`` of a non-positive number,
``sqrt`` of a negative number, division by zero, ``0^y`` with ``y < 0`` and
``x^y`` with ``x < 0`` and non-integer ``y`` all raise :class:`DomainError`.
A NaN is never returned; overflow to ``inf`` is permitted.

Parsed trees are immutable and safe to share across threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

__all__ = [
    "Expr",
    "Num",
    "Var",
    "Const",
    "Neg",
    "BinOp",
    "Call",
    "ExprSyntaxError",
    "UnknownIdentifier",
    "DomainError",
    "parse",
    "pretty",
    "evaluate",
    "differentiable_sample",
    "compile_scalar",
    "compile_vector",
    "compile_program",
    "simplify_negation",
    "const",
    "var",
    "add",
    "sub",
    "mul",
    "div",
    "power",
]


class ExprSyntaxError(ValueError):
    """Raised when the source text is not a valid expression."""

    def __init__(self, offset: int, message: str, expected=()):
        self.offset = offset
        self.expected = tuple(expected)
        super().__init__(f"syntax error at offset {offset}: {message}")


class UnknownIdentifier(ExprSyntaxError):
    def __init__(self, offset: int, name: str):
        self.name = name
        ValueError.__init__(self, f"unknown identifier {name!r} at offset {offset}")
        self.offset = offset
        self.expected = ()


class DomainError(ArithmeticError):
    """Evaluation left the real domain (log of non-positive, pole, ...)."""

    def __init__(self, message: str, subexpr: "Expr | None" = None, x: float | None = None):
        self.subexpr = subexpr
        self.x = x
        at = f" at x={x!r}" if x is not None else ""
        super().__init__(message + at)


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("numeric literals must be finite")


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Const:
    name: str  # "pi" or "e"


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str  # exp log sqrt abs min max pow
    args: tuple


Expr = Union[Num, Var, Const, Neg, BinOp, Call]

_CONSTANTS = {"pi": math.pi, "e": math.e}
_FUNCS_1 = ("exp", "log", "sqrt", "abs")
_FUNCS_2 = ("min", "max", "pow")


# small constructors, convenient for building trees programmatically
def const(v: float) -> Expr:
    return Num(float(v)) if v >= 0 else Neg(Num(-float(v)))


def var() -> Expr:
    return Var()


def add(a: Expr, b: Expr) -> Expr:
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    return BinOp("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    return BinOp("^", a, b)


def simplify_negation(e: Expr) -> Expr:
    """Collapse double negations; used when composing trees symbolically."""
    if isinstance(e, Neg) and isinstance(e.operand, Neg):
        return simplify_negation(e.operand.operand)
    return e


# ---------------------------------------------------------------------------
# Tokenizer / parser (recursive descent)
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            off = len(source) - len(stripped)
            raise ExprSyntaxError(off, f"unexpected character {source[off]!r}")
        if m.lastgroup == "num":
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name"), m.start("name")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, val, off = self.peek()
        if kind != "op" or val != op:
            raise ExprSyntaxError(off, f"expected {op!r}, found {val or 'end of input'!r}", [op])
        return self.next()

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(off, f"unexpected trailing input {val!r}")
        return e

    def expr(self) -> Expr:
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                node = BinOp(val, node, self.term())
            else:
                return node

    def term(self) -> Expr:
        node = self.unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.next()
                node = BinOp(val, node, self.unary())
            else:
                return node

    def unary(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.next()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.next()
            return BinOp("^", base, self.unary())  # right-associative
        return base

    def atom(self) -> Expr:
        kind, val, off = self.next()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val == "x":
                return Var()
            if val in _CONSTANTS:
                return Const(val)
            if val in _FUNCS_1 or val in _FUNCS_2:
                self.expect_op("(")
                first = self.expr()
                if val in _FUNCS_2:
                    self.expect_op(",")
                    second = self.expr()
                    self.expect_op(")")
                    return Call(val, (first, second))
                self.expect_op(")")
                return Call(val, (first,))
            raise UnknownIdentifier(off, val)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(off, f"expected a value, found {val or 'end of input'!r}")


def parse(source: str) -> Expr:
    """Parse source text into an expression tree."""
    if not isinstance(source, str):
        raise TypeError("expression source must be a string")
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# Pretty printer
# ---------------------------------------------------------------------------

# precedence levels: + - (1), * / (2), unary minus (3), ^ (4), atoms (5)
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _fmt_number(v: float) -> str:
    if v == math.floor(v) and abs(v) < 1e16:
        return repr(v)
    return repr(v)


def _pretty(e: Expr) -> tuple[str, int]:
    if isinstance(e, Num):
        return _fmt_number(e.value), 5
    if isinstance(e, Var):
        return "x", 5
    if isinstance(e, Const):
        return e.name, 5
    if isinstance(e, Call):
        inner = ", ".join(_pretty(a)[0] for a in e.args)
        return f"{e.func}({inner})", 5
    if isinstance(e, Neg):
        s, p = _pretty(e.operand)
        # '^' binds tighter than unary minus, so -(x^2) prints without parens
        if p < 3:
            s = f"({s})"
        return f"-{s}", 3
    if isinstance(e, BinOp):
        prec = _PREC[e.op]
        ls, lp = _pretty(e.left)
        rs, rp = _pretty(e.right)
        if e.op == "^":
            # right-associative; left operand must be an atom-level string,
            # right operand may be unary (e.g. x^-2 is valid grammar)
            if lp < 5:
                ls = f"({ls})"
            if rp < 3:
                rs = f"({rs})"
            return f"{ls}^{rs}", 4
        if lp < prec:
            ls = f"({ls})"
        # + - * / are left-associative: a right operand at the same level
        # must keep its parentheses or the reparse would re-bracket it
        if rp <= prec:
            rs = f"({rs})"
        return f"{ls} {e.op} {rs}", prec
    raise TypeError(f"not an expression node: {e!r}")


def pretty(e: Expr) -> str:
    """Render a tree back to source text; parsing the result reproduces the tree."""
    return _pretty(e)[0]


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _eval(e: Expr, x: float) -> float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return x
    if isinstance(e, Const):
        return _CONSTANTS[e.name]
    if isinstance(e, Neg):
        return -_eval(e.operand, x)
    if isinstance(e, BinOp):
        a = _eval(e.left, x)
        b = _eval(e.right, x)
        if e.op == "+":
            r = a + b
        elif e.op == "-":
            r = a - b
        elif e.op == "*":
            r = a * b
        elif e.op == "/":
            if b == 0.0:
                raise DomainError(f"division by zero in {pretty(e)!r}", e, x)
            r = a / b
        else:  # ^
            r = _real_pow(a, b, e, x)
        if math.isnan(r):
            raise DomainError(f"indeterminate value from {pretty(e)!r}", e, x)
        return r
    if isinstance(e, Call):
        vals = [_eval(a, x) for a in e.args]
        f = e.func
        if f == "exp":
            try:
                return math.exp(vals[0])
            except OverflowError:
                return math.inf
        if f == "log":
            if vals[0] <= 0.0:
                raise DomainError(f"log of non-positive value {vals[0]!r}", e, x)
            return math.log(vals[0])
        if f == "sqrt":
            if vals[0] < 0.0:
                raise DomainError(f"sqrt of negative value {vals[0]!r}", e, x)
            return math.sqrt(vals[0])
        if f == "abs":
            return abs(vals[0])
        if f == "min":
            return min(vals)
        if f == "max":
            return max(vals)
        if f == "pow":
            return _real_pow(vals[0], vals[1], e, x)
    raise TypeError(f"not an expression node: {e!r}")


def _real_pow(a: float, b: float, e: Expr, x: float) -> float:
    if a == 0.0:
        if b > 0.0:
            return 0.0
        if b == 0.0:
            return 1.0
        raise DomainError("zero raised to a negative power", e, x)
    if a < 0.0:
        if b == math.floor(b) and abs(b) < 1e15:
            r = a ** b
            if math.isinf(r):
                return r
            return r
        raise DomainError(f"negative base {a!r} with non-integer exponent {b!r}", e, x)
    try:
        return a ** b
    except OverflowError:
        return math.inf


def evaluate(e: Expr, x: float) -> float:
    """Evaluate at a point.  Pure: identical inputs give bit-identical output."""
    if not math.isfinite(x):
        raise DomainError("evaluation point must be finite", e, x)
    return _eval(e, x)


def differentiable_sample(e: Expr, grid) -> list[float]:
    """Evaluate on a finite grid, tagging domain failures with the grid index."""
    out = []
    for i, x in enumerate(grid):
        try:
            out.append(evaluate(e, float(x)))
        except DomainError as err:
            raise DomainError(f"grid index {i}: {err}", err.subexpr, float(x)) from err
    return out


# ---------------------------------------------------------------------------
# Compilation: scalar closures, vectorized numpy callables, stack programs
# ---------------------------------------------------------------------------


def compile_scalar(e: Expr) -> Callable[[float], float]:
    """Compile to a fast float->float closure with the strict domain semantics."""
    if isinstance(e, Num):
        v = e.value
        return lambda x: v
    if isinstance(e, Var):
        return lambda x: x
    if isinstance(e, Const):
        v = _CONSTANTS[e.name]
        return lambda x: v
    if isinstance(e, Neg):
        f = compile_scalar(e.operand)
        return lambda x: -f(x)
    if isinstance(e, BinOp):
        fa = compile_scalar(e.left)
        fb = compile_scalar(e.right)
        op = e.op
        node = e
        if op == "+":
            return lambda x: fa(x) + fb(x)
        if op == "-":
            return lambda x: fa(x) - fb(x)
        if op == "*":
            return lambda x: fa(x) * fb(x)
        if op == "/":

            def _div(x):
                b = fb(x)
                if b == 0.0:
                    raise DomainError("division by zero", node, x)
                return fa(x) / b

            return _div

        def _pow(x):
            return _real_pow(fa(x), fb(x), node, x)

        return _pow
    if isinstance(e, Call):
        fs = [compile_scalar(a) for a in e.args]
        name = e.func
        node = e
        if name == "exp":

            def _exp(x):
                try:
                    return math.exp(fs[0](x))
                except OverflowError:
                    return math.inf

            return _exp
        if name == "log":

            def _log(x):
                v = fs[0](x)
                if v <= 0.0:
                    raise DomainError("log of non-positive value", node, x)
                return math.log(v)

            return _log
        if name == "sqrt":

            def _sqrt(x):
                v = fs[0](x)
                if v < 0.0:
                    raise DomainError("sqrt of negative value", node, x)
                return math.sqrt(v)

            return _sqrt
        if name == "abs":
            return lambda x: abs(fs[0](x))
        if name == "min":
            return lambda x: min(fs[0](x), fs[1](x))
        if name == "max":
            return lambda x: max(fs[0](x), fs[1](x))
        if name == "pow":
            return lambda x: _real_pow(fs[0](x), fs[1](x), node, x)
    raise TypeError(f"not an expression node: {e!r}")


def compile_vector(e: Expr) -> Callable[[np.ndarray], np.ndarray]:
    """Compile to a lenient vectorized numpy callable.

    Domain violations yield nan/inf instead of raising; callers that need the
    strict semantics must use :func:`evaluate` or :func:`compile_scalar`.
    """
    if isinstance(e, Num):
        v = e.value
        return lambda x: np.full_like(x, v, dtype=np.float64)
    if isinstance(e, Var):
        return lambda x: np.asarray(x, dtype=np.float64)
    if isinstance(e, Const):
        v = _CONSTANTS[e.name]
        return lambda x: np.full_like(x, v, dtype=np.float64)
    if isinstance(e, Neg):
        f = compile_vector(e.operand)
        return lambda x: -f(x)
    if isinstance(e, BinOp):
        fa = compile_vector(e.left)
        fb = compile_vector(e.right)
        op = e.op
        if op == "+":
            return lambda x: fa(x) + fb(x)
        if op == "-":
            return lambda x: fa(x) - fb(x)
        if op == "*":
            return lambda x: fa(x) * fb(x)
        if op == "/":

            def _div(x):
                with np.errstate(divide="ignore", invalid="ignore"):
                    return fa(x) / fb(x)

            return _div

        def _pow(x):
            with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
                return np.power(fa(x), fb(x))

        return _pow
    if isinstance(e, Call):
        fs = [compile_vector(a) for a in e.args]
        name = e.func
        if name == "exp":
            def _exp(x):
                with np.errstate(over="ignore"):
                    return np.exp(fs[0](x))
            return _exp
        if name == "log":
            def _log(x):
                with np.errstate(divide="ignore", invalid="ignore"):
                    return np.log(fs[0](x))
            return _log
        if name == "sqrt":
            def _sqrt(x):
                with np.errstate(invalid="ignore"):
                    return np.sqrt(fs[0](x))
            return _sqrt
        if name == "abs":
            return lambda x: np.abs(fs[0](x))
        if name == "min":
            return lambda x: np.minimum(fs[0](x), fs[1](x))
        if name == "max":
            return lambda x: np.maximum(fs[0](x), fs[1](x))
        if name == "pow":
            def _powf(x):
                with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
                    return np.power(fs[0](x), fs[1](x))
            return _powf
    raise TypeError(f"not an expression node: {e!r}")


# Stack-program opcodes shared with the numba simulation kernels.
OP_CONST = 0
OP_X = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_POW = 6
OP_NEG = 7
OP_EXP = 8
OP_LOG = 9
OP_SQRT = 10
OP_ABS = 11
OP_MIN = 12
OP_MAX = 13


def compile_program(e: Expr) -> tuple[np.ndarray, np.ndarray, int]:
    """Flatten to a postfix stack program ``(ops, consts, max_stack)``.

    ``ops`` is int64; for OP_CONST entries the constant index is packed into
    the high bits (``op | idx << 8``).  Interpreted by the simulation kernels.
    """
    ops: list[int] = []
    consts: list[float] = []

    def emit(node: Expr):
        if isinstance(node, Num):
            ops.append(OP_CONST | (len(consts) << 8))
            consts.append(node.value)
        elif isinstance(node, Var):
            ops.append(OP_X)
        elif isinstance(node, Const):
            ops.append(OP_CONST | (len(consts) << 8))
            consts.append(_CONSTANTS[node.name])
        elif isinstance(node, Neg):
            emit(node.operand)
            ops.append(OP_NEG)
        elif isinstance(node, BinOp):
            emit(node.left)
            emit(node.right)
            ops.append({"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "^": OP_POW}[node.op])
        elif isinstance(node, Call):
            for a in node.args:
                emit(a)
            ops.append(
                {
                    "exp": OP_EXP,
                    "log": OP_LOG,
                    "sqrt": OP_SQRT,
                    "abs": OP_ABS,
                    "min": OP_MIN,
                    "max": OP_MAX,
                    "pow": OP_POW,
                }[node.func]
            )
        else:
            raise TypeError(f"not an expression node: {node!r}")

    emit(e)

    depth = 0
    max_depth = 0
    for code in ops:
        op = code & 0xFF
        if op in (OP_CONST, OP_X):
            depth += 1
        elif op in (OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW, OP_MIN, OP_MAX):
            depth -= 1
        max_depth = max(max_depth, depth)
    return (
        np.asarray(ops, dtype=np.int64),
        np.asarray(consts if consts else [0.0], dtype=np.float64),
        max_depth,
    )

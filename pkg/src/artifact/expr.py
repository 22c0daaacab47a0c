"""Small arithmetic expression language used for model coefficients.

Expressions are built from real constants, the four variables ``x``, ``u``,
``v`` and ``t``, the binary operators ``+ - * /``, unary minus, and the
functions ``abs``, ``sin``, ``cos``, ``exp``, ``log``, ``sign`` (one argument)
and ``min``, ``max``, ``pow`` (two arguments).

>>> ast = parse("max(1-0.5*abs(v),0.2)")
>>> evaluate(ast, v=1.0)
0.5
>>> evaluate(differentiate(ast, "v"), v=1.0)
-0.5
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

VARIABLES = ("x", "u", "v", "t")
UNARY_FUNCTIONS = ("abs", "sin", "cos", "exp", "log", "sign")
BINARY_FUNCTIONS = ("min", "max", "pow")


class ExprSyntaxError(ValueError):
    """Raised by :func:`parse`; ``offset`` is a byte offset into the UTF-8 source."""

    def __init__(self, message: str, offset: int, source: str = ""):
        self.message = message
        self.offset = offset
        self.source = source
        super().__init__(f"{message} (at byte {offset})")


class ExprEvalError(ArithmeticError):
    """Division by zero, invalid ``pow``/``log`` argument or overflow."""


@dataclass(frozen=True, slots=True)
class Const:
    value: float


@dataclass(frozen=True, slots=True)
class Var:
    name: str


@dataclass(frozen=True, slots=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True, slots=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True, slots=True)
class Call:
    fn: str
    args: tuple


Node = Union[Const, Var, Neg, BinOp, Call]

ZERO = Const(0.0)
ONE = Const(1.0)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/(),]))"
)


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens: list[tuple[str, str, int]] = []
        self.pos = 0
        self._tokenize()

    def _byte(self, char_index: int) -> int:
        return len(self.source[:char_index].encode("utf-8"))

    def _tokenize(self) -> None:
        src = self.source
        i = 0
        while i < len(src):
            if src[i].isspace():
                i += 1
                continue
            mt = _TOKEN.match(src, i)
            if mt is None or mt.end() == i:
                raise ExprSyntaxError(f"unexpected character {src[i]!r}", self._byte(i), src)
            kind = mt.lastgroup
            start = mt.start(kind)
            self.tokens.append((kind, mt.group(kind), self._byte(start)))
            i = mt.end()
        self.tokens.append(("end", "", self._byte(len(src))))

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.pos]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> None:
        kind, val, off = self.take()
        if val != text or kind != "op":
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", off, self.source)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", off, self.source)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.unary())
        return self.primary()

    def primary(self) -> Node:
        kind, val, off = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if val in VARIABLES:
                return Var(val)
            if val in UNARY_FUNCTIONS or val in BINARY_FUNCTIONS:
                arity = 1 if val in UNARY_FUNCTIONS else 2
                self.expect("(")
                args = [self.expr()]
                while self.peek()[1] == "," and self.peek()[0] == "op":
                    self.take()
                    args.append(self.expr())
                if len(args) != arity:
                    raise ExprSyntaxError(
                        f"{val}() takes {arity} argument(s), got {len(args)}", off, self.source
                    )
                self.expect(")")
                return Call(val, tuple(args))
            raise ExprSyntaxError(f"unknown name {val!r}", off, self.source)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {found}", off, self.source)


def parse(source: str) -> Node:
    """Parse ``source`` into an expression tree.

    Precedence is unary minus, then ``* /``, then ``+ -``; both binary levels
    associate to the left.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _pow(a: float, b: float) -> float:
    if a == 0.0 and b < 0.0:
        raise ExprEvalError("pow: zero to a negative power")
    if a < 0.0 and b != math.floor(b):
        raise ExprEvalError("pow: negative base with non-integer exponent")
    try:
        return math.pow(a, b)
    except OverflowError as exc:
        raise ExprEvalError("pow: overflow") from exc


def _sign(a: float) -> float:
    return 1.0 if a > 0.0 else (-1.0 if a < 0.0 else 0.0)


def _log(a: float) -> float:
    if a <= 0.0:
        raise ExprEvalError("log: non-positive argument")
    return math.log(a)


def _exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError as exc:
        raise ExprEvalError("exp: overflow") from exc


def _min(a: float, b: float) -> float:
    return a if a <= b else b


def _max(a: float, b: float) -> float:
    return a if a >= b else b


_SCALAR_FUNCS: dict[str, Callable[..., float]] = {
    "abs": abs,
    "sin": math.sin,
    "cos": math.cos,
    "exp": _exp,
    "log": _log,
    "sign": _sign,
    "min": _min,
    "max": _max,
    "pow": _pow,
}


def evaluate(ast: Node, x: float = 0.0, u: float = 0.0, v: float = 0.0, t: float = 0.0) -> float:
    """Evaluate ``ast`` at a single point (scalars only)."""
    env = {"x": float(x), "u": float(u), "v": float(v), "t": float(t)}
    return _eval(ast, env)


def _eval(node: Node, env: dict[str, float]) -> float:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, BinOp):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if b == 0.0:
            raise ExprEvalError("division by zero")
        return a / b
    if isinstance(node, Call):
        return _SCALAR_FUNCS[node.fn](*(_eval(arg, env) for arg in node.args))
    raise TypeError(f"not an expression node: {node!r}")


def variables(ast: Node) -> set[str]:
    """Names of the variables referenced by ``ast``."""
    if isinstance(ast, Var):
        return {ast.name}
    if isinstance(ast, Const):
        return set()
    if isinstance(ast, Neg):
        return variables(ast.arg)
    if isinstance(ast, BinOp):
        return variables(ast.left) | variables(ast.right)
    out: set[str] = set()
    for arg in ast.args:
        out |= variables(arg)
    return out


# ---------------------------------------------------------------------------
# construction helpers with light constant folding
# ---------------------------------------------------------------------------


def _is_const(node: Node, value: float | None = None) -> bool:
    return isinstance(node, Const) and (value is None or node.value == value)


def _fold(value: float, fallback: Node) -> Node:
    return Const(value) if math.isfinite(value) and value >= 0.0 else fallback


def add(a: Node, b: Node) -> Node:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return _fold(a.value + b.value, BinOp("+", a, b))
    return BinOp("+", a, b)


def sub(a: Node, b: Node) -> Node:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if _is_const(a) and _is_const(b):
        return _fold(a.value - b.value, BinOp("-", a, b))
    return BinOp("-", a, b)


def mul(a: Node, b: Node) -> Node:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return _fold(a.value * b.value, BinOp("*", a, b))
    return BinOp("*", a, b)


def div(a: Node, b: Node) -> Node:
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return BinOp("/", a, b)


def neg(a: Node) -> Node:
    if _is_const(a, 0.0):
        return ZERO
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def call(fn: str, *args: Node) -> Node:
    return Call(fn, tuple(args))


def _first_weight(lead: Node, other: Node) -> Node:
    # 1 when lead "wins" (ties included), 0 otherwise: 1 + (s - |s|)/2 with s = sign(other - lead)
    s = call("sign", sub(other, lead))
    return add(ONE, div(sub(s, call("abs", s)), Const(2.0)))


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------


def differentiate(ast: Node, var: str) -> Node:
    """Exact partial derivative of ``ast`` with respect to ``var``.

    ``abs`` differentiates to ``sign`` (so the kink gets slope 0), ``sign``
    has derivative 0, and at ties ``min``/``max`` follow their first argument.
    """
    if var not in VARIABLES:
        raise ValueError(f"unknown variable {var!r}")
    return _d(ast, var)


def _d(node: Node, s: str) -> Node:
    if isinstance(node, Const):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.name == s else ZERO
    if isinstance(node, Neg):
        return neg(_d(node.arg, s))
    if isinstance(node, BinOp):
        a, b = node.left, node.right
        da, db = _d(a, s), _d(b, s)
        if node.op == "+":
            return add(da, db)
        if node.op == "-":
            return sub(da, db)
        if node.op == "*":
            return add(mul(da, b), mul(a, db))
        if _is_const(db, 0.0):
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), mul(b, b))
    fn, args = node.fn, node.args
    if fn in ("min", "max"):
        a, b = args
        da, db = _d(a, s), _d(b, s)
        if _is_const(da, 0.0) and _is_const(db, 0.0):
            return ZERO
        if fn == "min":
            wa = _first_weight(a, b)
        else:
            wa = _first_weight(b, a)
        return add(mul(wa, da), mul(sub(ONE, wa), db))
    if fn == "pow":
        a, b = args
        da, db = _d(a, s), _d(b, s)
        term_a = mul(mul(b, call("pow", a, sub(b, ONE))), da)
        if _is_const(db, 0.0):
            return term_a
        return add(term_a, mul(mul(node, call("log", a)), db))
    (a,) = args
    da = _d(a, s)
    if _is_const(da, 0.0) or fn == "sign":
        return ZERO
    if fn == "abs":
        return mul(call("sign", a), da)
    if fn == "sin":
        return mul(call("cos", a), da)
    if fn == "cos":
        return neg(mul(call("sin", a), da))
    if fn == "exp":
        return mul(node, da)
    if fn == "log":
        return div(da, a)
    raise ValueError(f"unknown function {fn!r}")


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------


def to_string(ast: Node) -> str:
    """Fully parenthesised text form; ``parse(to_string(a))`` evaluates identically to ``a``."""
    if isinstance(ast, Const):
        if ast.value < 0.0 or (ast.value == 0.0 and math.copysign(1.0, ast.value) < 0):
            return f"(-{repr(-ast.value)})"
        return repr(ast.value)
    if isinstance(ast, Var):
        return ast.name
    if isinstance(ast, Neg):
        return f"(-{to_string(ast.arg)})"
    if isinstance(ast, BinOp):
        return f"({to_string(ast.left)}{ast.op}{to_string(ast.right)})"
    return f"{ast.fn}({','.join(to_string(a) for a in ast.args)})"


_NUMPY_NAMES = {
    "abs": "np.abs",
    "sin": "np.sin",
    "cos": "np.cos",
    "exp": "np.exp",
    "log": "np.log",
    "sign": "np.sign",
    "min": "np.minimum",
    "max": "np.maximum",
    "pow": "np.power",
}


def to_source(ast: Node) -> str:
    """Python source using numpy functions.

    The result works elementwise on arrays and also compiles under numba for
    scalar arguments.  ``min``/``max`` keep the tie-to-first convention because
    they only differ from ``np.minimum``/``np.maximum`` when both sides are equal.
    """
    if isinstance(ast, Const):
        return repr(ast.value) if ast.value >= 0.0 else f"({repr(ast.value)})"
    if isinstance(ast, Var):
        return ast.name
    if isinstance(ast, Neg):
        return f"(-{to_source(ast.arg)})"
    if isinstance(ast, BinOp):
        return f"({to_source(ast.left)} {ast.op} {to_source(ast.right)})"
    return f"{_NUMPY_NAMES[ast.fn]}({', '.join(to_source(a) for a in ast.args)})"


def to_numpy(ast: Node) -> Callable[..., np.ndarray]:
    """Vectorised evaluator ``f(x, u, v, t)``; errors surface as inf/nan, not exceptions."""
    src = f"def _f(x, u, v, t):\n    return {to_source(ast)}\n"
    namespace: dict[str, object] = {"np": np}
    exec(compile(src, "<expr>", "exec"), namespace)
    return namespace["_f"]  # type: ignore[return-value]

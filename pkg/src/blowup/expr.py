"""Small expression language for vector-field components.

Expressions are immutable trees built from real constants, variable
references, the four arithmetic operators, powers with constant exponents
and a handful of elementary functions::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | base ('^' exponent)?
    base   := number | ident | func '(' expr ')' | '(' expr ')'

``exponent`` is a signed number, a named parameter or a parenthesised
constant expression.  Variable references carry their position in the
extended state ``(t, y_1, ..., y_n)``: index 0 is always the time symbol
``t``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

TIME = "t"
FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs", "sign")


class ParseError(ValueError):
    """Syntax or name-resolution failure, with the byte offset of the culprit."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DomainError(ArithmeticError):
    """Raised when a function is evaluated outside its real domain."""


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: float


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Const, Var, Neg, BinOp, Pow, Call]

ZERO = Const(0.0)
ONE = Const(1.0)


def time_var() -> Var:
    return Var(0, TIME)


def state_var(i: int, name: str) -> Var:
    """Reference to state component ``i`` (zero based)."""
    return Var(i + 1, name)


# ---------------------------------------------------------------------------
# scalar semantics shared by the tree walker and generated code


def _fpow(base: float, exponent: float) -> float:
    if base < 0.0 and not float(exponent).is_integer():
        raise DomainError(f"non-integer power {exponent!r} of negative value {base!r}")
    if base == 0.0 and exponent < 0.0:
        raise ZeroDivisionError("zero raised to a negative power")
    return base**exponent


def _log(v: float) -> float:
    if v <= 0.0:
        raise DomainError(f"log of nonpositive value {v!r}")
    return math.log(v)


def _sqrt(v: float) -> float:
    if v < 0.0:
        raise DomainError(f"sqrt of negative value {v!r}")
    return math.sqrt(v)


def _sign(v: float) -> float:
    return (v > 0.0) - (v < 0.0)


_SCALAR_FUNCS: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": _log,
    "sqrt": _sqrt,
    "abs": abs,
    "sign": _sign,
}


# ---------------------------------------------------------------------------
# smart constructors (constant folding only)


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(b, Const) and not isinstance(a, Const):
        a, b = b, a
    if isinstance(a, Const):
        if isinstance(b, Const):
            return Const(a.value * b.value)
        if a.value == 0.0:
            return ZERO
        if a.value == 1.0:
            return b
        if a.value == -1.0:
            return neg(b)
        if isinstance(b, BinOp) and b.op == "*" and isinstance(b.left, Const):
            return mul(Const(a.value * b.left.value), b.right)
        if isinstance(b, Neg):
            return mul(Const(-a.value), b.arg)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return BinOp("/", a, b)


def power(b: Expr, exponent: float) -> Expr:
    exponent = float(exponent)
    if exponent == 0.0:
        return ONE
    if exponent == 1.0:
        return b
    if isinstance(b, Const):
        try:
            return Const(_fpow(b.value, exponent))
        except ArithmeticError:
            pass
    return Pow(b, exponent)


def call(func: str, a: Expr) -> Expr:
    if func not in _SCALAR_FUNCS:
        raise ValueError(f"unknown function {func!r}")
    if isinstance(a, Const):
        try:
            return Const(float(_SCALAR_FUNCS[func](a.value)))
        except ArithmeticError:
            pass
    return Call(func, a)


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


class _Parser:
    def __init__(self, source: str, names: Mapping[str, Var], params: Mapping[str, float]):
        self.source = source
        self.names = names
        self.params = params
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(source):
            if source[pos:].strip() == "":
                break
            m = _TOKEN_RE.match(source, pos)
            if m is None or m.end() == pos:
                skipped = len(source[pos:]) - len(source[pos:].lstrip())
                raise ParseError(f"unexpected character {source[pos + skipped]!r}",
                                 self._byte(pos + skipped))
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start))
            pos = m.end()
        self.tokens.append(("end", "", len(source)))
        self.i = 0

    def _byte(self, char_offset: int) -> int:
        return len(self.source[:char_offset].encode("utf-8"))

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> None:
        kind, value, pos = self.take()
        if value != text:
            shown = value or "end of input"
            raise ParseError(f"expected {text!r}, found {shown!r}", self._byte(pos))

    def error(self, message: str) -> ParseError:
        return ParseError(message, self._byte(self.peek()[2]))

    def parse(self) -> Expr:
        e = self.expr()
        kind, value, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {value!r}", self._byte(pos))
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            e = BinOp(op, e, self.factor())
        return e

    def factor(self) -> Expr:
        if self.peek()[1] == "-":
            self.take()
            arg = self.factor()
            return Const(-arg.value) if isinstance(arg, Const) else Neg(arg)
        b = self.base()
        if self.peek()[1] == "^":
            self.take()
            return Pow(b, self.exponent())
        return b

    def exponent(self) -> float:
        kind, value, pos = self.peek()
        if value == "(":
            self.take()
            inner = self.expr()
            self.expect(")")
        else:
            sign = 1.0
            while self.peek()[1] in ("-", "+"):
                if self.take()[1] == "-":
                    sign = -sign
            kind, value, pos = self.peek()
            if kind not in ("num", "ident"):
                raise self.error("expected exponent")
            inner = self.base()
            if isinstance(inner, Const):
                inner = Const(sign * inner.value)
        if _has_var(inner):
            raise ParseError("variable exponent", self._byte(pos))
        try:
            return float(evaluate(inner, 0.0, ()))
        except ArithmeticError as exc:
            raise ParseError(f"exponent is not a finite constant: {exc}", self._byte(pos)) from None

    def base(self) -> Expr:
        kind, value, pos = self.take()
        if kind == "num":
            return Const(float(value))
        if kind == "ident":
            if value in FUNCTIONS and self.peek()[1] == "(":
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(value, arg)
            if value in self.names:
                return self.names[value]
            if value in self.params:
                return Const(float(self.params[value]))
            raise ParseError(f"unknown identifier {value!r}", self._byte(pos))
        if value == "(":
            e = self.expr()
            self.expect(")")
            return e
        shown = value or "end of input"
        raise ParseError(f"unexpected token {shown!r}", self._byte(pos))


def parse(source: str, state_names: Sequence[str], params: Mapping[str, float] | None = None) -> Expr:
    """Parse ``source`` against the declared state names.

    ``params`` maps extra identifiers to numeric constants; they are
    substituted at parse time.
    """
    names: dict[str, Var] = {TIME: time_var()}
    for i, name in enumerate(state_names):
        if name == TIME or name in FUNCTIONS:
            raise ValueError(f"state name {name!r} is reserved")
        if name in names:
            raise ValueError(f"duplicate state name {name!r}")
        names[name] = state_var(i, name)
    params = dict(params or {})
    for name in params:
        if name in names:
            raise ValueError(f"parameter {name!r} shadows a variable")
    return _Parser(source, names, params).parse()


def _has_var(e: Expr) -> bool:
    if isinstance(e, Var):
        return True
    if isinstance(e, Const):
        return False
    if isinstance(e, BinOp):
        return _has_var(e.left) or _has_var(e.right)
    if isinstance(e, Pow):
        return _has_var(e.base)
    return _has_var(e.arg)


def variables(e: Expr) -> set[int]:
    """Indices of the variables referenced by ``e``."""
    if isinstance(e, Var):
        return {e.index}
    if isinstance(e, Const):
        return set()
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    if isinstance(e, Pow):
        return variables(e.base)
    return variables(e.arg)


# ---------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg) or (isinstance(e, Const) and (e.value < 0 or math.copysign(1, e.value) < 0)):
        return 3
    if isinstance(e, Pow):
        return 4
    return 5


def _num(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_string(e: Expr) -> str:
    """Render ``e`` so that ``parse(to_string(e))`` rebuilds the same tree."""
    if isinstance(e, Const):
        return _num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        inner = to_string(e.arg)
        return "-" + (inner if _prec(e.arg) >= 3 else f"({inner})")
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left = to_string(e.left)
        if _prec(e.left) < p:
            left = f"({left})"
        right = to_string(e.right)
        if _prec(e.right) <= p:
            right = f"({right})"
        return f"{left} {e.op} {right}" if p == 1 else f"{left}*{right}" if e.op == "*" else f"{left}/{right}"
    if isinstance(e, Pow):
        b = to_string(e.base)
        if _prec(e.base) < 5:
            b = f"({b})"
        return f"{b}^{_num(e.exponent)}" if e.exponent >= 0 else f"{b}^({_num(e.exponent)})"
    return f"{e.func}({to_string(e.arg)})"


# ---------------------------------------------------------------------------
# evaluation


def evaluate(e: Expr, t: float, x: Sequence[float]) -> float:
    """Evaluate ``e`` at time ``t`` and state ``x`` by walking the tree."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return t if e.index == 0 else float(x[e.index - 1])
    if isinstance(e, Neg):
        return -evaluate(e.arg, t, x)
    if isinstance(e, BinOp):
        a = evaluate(e.left, t, x)
        b = evaluate(e.right, t, x)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if b == 0.0:
            raise ZeroDivisionError("division by zero")
        return a / b
    if isinstance(e, Pow):
        return _fpow(evaluate(e.base, t, x), e.exponent)
    return float(_SCALAR_FUNCS[e.func](evaluate(e.arg, t, x)))


# ---------------------------------------------------------------------------
# differentiation


def diff(e: Expr, var: int) -> Expr:
    """Partial derivative of ``e`` with respect to extended variable ``var``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == var else ZERO
    if isinstance(e, Neg):
        return neg(diff(e.arg, var))
    if isinstance(e, BinOp):
        da = diff(e.left, var)
        db = diff(e.right, var)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, e.right), mul(e.left, db))
        return sub(div(da, e.right), div(mul(e.left, db), power(e.right, 2)))
    if isinstance(e, Pow):
        db = diff(e.base, var)
        if _is_const(db, 0.0):
            return ZERO
        return mul(mul(Const(e.exponent), power(e.base, e.exponent - 1.0)), db)
    da = diff(e.arg, var)
    if _is_const(da, 0.0):
        return ZERO
    a = e.arg
    if e.func == "sin":
        outer = call("cos", a)
    elif e.func == "cos":
        outer = neg(call("sin", a))
    elif e.func == "exp":
        outer = e
    elif e.func == "log":
        return div(da, a)
    elif e.func == "sqrt":
        return div(da, mul(Const(2.0), e))
    elif e.func == "abs":
        outer = call("sign", a)
    else:  # sign
        return ZERO
    return mul(outer, da)


def substitute(e: Expr, mapping: Mapping[int, Expr]) -> Expr:
    """Replace variables by expressions, folding constants on the way up."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        return mapping.get(e.index, e)
    if isinstance(e, Neg):
        return neg(substitute(e.arg, mapping))
    if isinstance(e, BinOp):
        a = substitute(e.left, mapping)
        b = substitute(e.right, mapping)
        return {"+": add, "-": sub, "*": mul, "/": div}[e.op](a, b)
    if isinstance(e, Pow):
        return power(substitute(e.base, mapping), e.exponent)
    return call(e.func, substitute(e.arg, mapping))


# ---------------------------------------------------------------------------
# code generation


class _Emitter:
    def __init__(self, vectorized: bool):
        self.vectorized = vectorized
        self.lines: list[str] = []
        self.memo: dict[Expr, str] = {}

    def name(self, e: Expr) -> str:
        if isinstance(e, Const):
            return repr(e.value) if math.copysign(1.0, e.value) > 0 else f"({e.value!r})"
        if isinstance(e, Var):
            return "t" if e.index == 0 else f"x{e.index - 1}"
        cached = self.memo.get(e)
        if cached is not None:
            return cached
        if isinstance(e, Neg):
            code = f"-{self.name(e.arg)}"
        elif isinstance(e, BinOp):
            code = f"{self.name(e.left)} {e.op} {self.name(e.right)}"
        elif isinstance(e, Pow):
            b = self.name(e.base)
            p = e.exponent
            if p.is_integer() and 0 <= p <= 64:
                code = f"{b} ** {int(p)}"
            elif p.is_integer() and p > -64:
                code = f"_ipow({b}, {int(p)})"
            elif p == 0.5:
                code = f"_sqrt({b})"
            else:
                code = f"_fpow({b}, {p!r})"
        else:
            code = f"_{e.func}({self.name(e.arg)})"
        var = f"_v{len(self.memo)}"
        self.lines.append(f"    {var} = {code}")
        self.memo[e] = var
        return var


def _ipow(b: float, p: int) -> float:
    if b == 0.0:
        raise ZeroDivisionError("zero raised to a negative power")
    return b**p


_SCALAR_NS = {
    "_fpow": _fpow, "_ipow": _ipow, "_log": _log, "_sqrt": _sqrt, "_sign": _sign, "_abs": abs,
    "_sin": math.sin, "_cos": math.cos, "_exp": math.exp,
}


def _vector_namespace() -> dict:
    import numpy as np

    def fpow(b, p):
        b = np.asarray(b, dtype=float)
        return np.where((b < 0) | ((b == 0) & (p < 0)), np.nan, np.power(np.abs(b), p))

    def ipow(b, p):
        b = np.asarray(b, dtype=float)
        return np.where(b == 0, np.nan, b**p)

    def guarded(fn, bad):
        def call(v):
            v = np.asarray(v, dtype=float)
            return np.where(bad(v), np.nan, fn(np.abs(v)))
        return call

    return {
        "_fpow": fpow,
        "_ipow": ipow,
        "_log": guarded(np.log, lambda v: v <= 0),
        "_sqrt": guarded(np.sqrt, lambda v: v < 0),
        "_sign": np.sign, "_abs": np.abs, "_sin": np.sin, "_cos": np.cos, "_exp": np.exp,
        "_errstate": np.errstate,
        "_bcast": lambda *v: np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in v]),
    }


def compile_exprs(exprs: Sequence[Expr], n_state: int, vectorized: bool = False) -> Callable:
    """Compile expressions into one function ``f(t, x) -> tuple``.

    Shared subtrees are computed once.  In scalar mode domain and division
    errors are raised exactly as :func:`evaluate` raises them.  With
    ``vectorized=True`` the function accepts numpy arrays (``x`` indexable
    by component), broadcasts its outputs, and marks domain violations
    with NaN instead of raising.
    """
    em = _Emitter(vectorized)
    outs = [em.name(e) for e in exprs]
    body = list(em.lines)
    if n_state:
        unpack = ", ".join(f"x{i}" for i in range(n_state))
        body.insert(0, f"    {unpack}{',' if n_state == 1 else ''} = x")
    if vectorized:
        body = ["    with _errstate(all='ignore'):"] + ["    " + ln for ln in body]
        body.append(f"        return _bcast({', '.join(outs)})")
        namespace = _vector_namespace()
    else:
        body.append(f"    return ({', '.join(outs)}{',' if len(outs) == 1 else ''})")
        namespace = dict(_SCALAR_NS)
    source = "\n".join(["def _compiled(t, x):"] + body)
    exec(compile(source, "<blowup-compiled>", "exec"), namespace)
    return namespace["_compiled"]

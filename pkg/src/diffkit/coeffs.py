"""Scalar coefficient functions of the state variable x.

Volatility, drift and payoff inputs arrive either as expression strings in a
small arithmetic language (literals, x, + - * / ^, exp/log/sqrt/abs/sign/
min/max/pow and the standard normal CDF Phi), or as one of the built-in model
families.  Expression trees are immutable after parsing and safe to share.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.special import ndtr

from .errors import (
    EvalDomainError,
    InvalidParameterError,
    ParseError,
    UnknownIdentifierError,
)

__all__ = [
    "Expr",
    "Num",
    "Var",
    "Neg",
    "Bin",
    "Call",
    "parse_expr",
    "eval_expr",
    "to_source",
    "compile_fn",
    "ModelFamily",
    "expand_family",
    "FAMILY_NAMES",
]


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expr", ...]


Expr = Union[Num, Var, Neg, Bin, Call]

_FUNCTIONS = {
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "abs": 1,
    "sign": 1,
    "Phi": 1,
    "min": 2,
    "max": 2,
    "pow": 2,
}


# ---------------------------------------------------------------------------
# Tokenizer / parser (recursive descent; ^ right-assoc > unary minus > * / > + -)

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            off = n - len(stripped)
            raise ParseError(f"unexpected character {stripped[0]!r}", off)
        if m.group("num") is not None:
            tokens.append(("num", float(m.group("num")), m.start("num")))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def cur(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, val, off = self.cur
        if kind != "op" or val != op:
            raise ParseError(f"got {val!r}", off, expected={op})
        self.advance()

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, off = self.cur
        if kind != "end":
            raise ParseError(f"trailing input {val!r}", off, expected={"end of input"})
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.cur[0] == "op" and self.cur[1] in "+-":
            op = self.advance()[1]
            left = Bin(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.cur[0] == "op" and self.cur[1] in "*/":
            op = self.advance()[1]
            left = Bin(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.cur[0] == "op" and self.cur[1] == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.cur[0] == "op" and self.cur[1] == "^":
            self.advance()
            # right-associative; exponent may carry a unary minus
            return Bin("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, val, off = self.cur
        if kind == "num":
            self.advance()
            return Num(val)
        if kind == "ident":
            self.advance()
            if val == "x":
                return Var()
            if val in _FUNCTIONS:
                self.expect_op("(")
                args = [self.expr()]
                while self.cur[0] == "op" and self.cur[1] == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect_op(")")
                arity = _FUNCTIONS[val]
                if len(args) != arity:
                    raise ParseError(
                        f"{val} takes {arity} argument(s), got {len(args)}", off
                    )
                return Call(val, tuple(args))
            raise UnknownIdentifierError(val, off)
        if kind == "op" and val == "(":
            self.advance()
            e = self.expr()
            self.expect_op(")")
            return e
        raise ParseError(
            f"got {val!r}", off, expected={"number", "x", "function", "("}
        )


def parse_expr(source: str) -> Expr:
    """Parse an expression string into an immutable tree."""
    if not source or not source.strip():
        raise ParseError("empty expression", 0)
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# Pretty printing (round-trips through parse_expr to a structurally equal tree)

_PREC = {"+": 10, "-": 10, "*": 20, "/": 20, "neg": 30, "^": 40}


def to_source(e: Expr) -> str:
    return _print(e, 0)


def _print(e: Expr, parent_prec: int) -> str:
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return "x"
    if isinstance(e, Neg):
        s = "-" + _print(e.operand, _PREC["neg"])
        return f"({s})" if parent_prec > _PREC["neg"] else s
    if isinstance(e, Call):
        return e.func + "(" + ", ".join(_print(a, 0) for a in e.args) + ")"
    prec = _PREC[e.op]
    # left operand at own precedence, right one notch up for left-assoc ops;
    # ^ is right-assoc so the asymmetry flips
    if e.op == "^":
        left = _print(e.left, prec + 1)
        right = _print(e.right, prec)
    else:
        left = _print(e.left, prec)
        right = _print(e.right, prec + 1)
    s = f"{left} {e.op} {right}"
    return f"({s})" if parent_prec > prec else s


# ---------------------------------------------------------------------------
# Evaluation

_PHI_SQRT2 = math.sqrt(2.0)


def _phi(x: float) -> float:
    # double-precision normal CDF; abs error well below 1e-12
    return 0.5 * (1.0 + math.erf(x / _PHI_SQRT2))


def eval_expr(e: Expr, x: float) -> float:
    """Evaluate at a real x; raises EvalDomainError instead of returning inf/nan."""
    v = _eval(e, float(x))
    if not math.isfinite(v):
        raise EvalDomainError("non-finite result", to_source(e), x)
    return v


def _eval(e: Expr, x: float) -> float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return x
    if isinstance(e, Neg):
        return -_eval(e.operand, x)
    if isinstance(e, Bin):
        a = _eval(e.left, x)
        b = _eval(e.right, x)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if b == 0.0:
                raise EvalDomainError("division by zero", to_source(e), x)
            return a / b
        return _pow(a, b, e, x)
    a0 = _eval(e.args[0], x)
    f = e.func
    if f == "exp":
        try:
            return math.exp(a0)
        except OverflowError:
            raise EvalDomainError("exp overflow", to_source(e), x) from None
    if f == "log":
        if a0 <= 0.0:
            raise EvalDomainError("log of non-positive", to_source(e), x)
        return math.log(a0)
    if f == "sqrt":
        if a0 < 0.0:
            raise EvalDomainError("sqrt of negative", to_source(e), x)
        return math.sqrt(a0)
    if f == "abs":
        return abs(a0)
    if f == "sign":
        # sgn(0) = +1
        return -1.0 if a0 < 0.0 else 1.0
    if f == "Phi":
        return _phi(a0)
    a1 = _eval(e.args[1], x)
    if f == "min":
        return min(a0, a1)
    if f == "max":
        return max(a0, a1)
    return _pow(a0, a1, e, x)  # pow(a, b)


def _pow(a: float, b: float, e: Expr, x: float) -> float:
    if a == 0.0 and b < 0.0:
        raise EvalDomainError("zero to a negative power", to_source(e), x)
    if a < 0.0 and b != round(b):
        raise EvalDomainError("negative base, non-integer exponent", to_source(e), x)
    try:
        return a**b
    except OverflowError:
        raise EvalDomainError("power overflow", to_source(e), x) from None


def compile_fn(e: Expr) -> Callable[[np.ndarray], np.ndarray]:
    """Compile to a vectorized numpy callable.

    No domain checking: out-of-domain inputs yield nan/inf, which simulation
    and quadrature callers detect and flag themselves.
    """

    def build(node):
        if isinstance(node, Num):
            c = node.value
            return lambda x: np.full_like(x, c, dtype=float)
        if isinstance(node, Var):
            return lambda x: x
        if isinstance(node, Neg):
            f = build(node.operand)
            return lambda x: -f(x)
        if isinstance(node, Bin):
            fl = build(node.left)
            fr = build(node.right)
            op = node.op
            if op == "+":
                return lambda x: fl(x) + fr(x)
            if op == "-":
                return lambda x: fl(x) - fr(x)
            if op == "*":
                return lambda x: fl(x) * fr(x)
            if op == "/":
                return lambda x: fl(x) / fr(x)
            return lambda x: np.power(fl(x), fr(x))
        f0 = build(node.args[0])
        name = node.func
        if name == "exp":
            return lambda x: np.exp(f0(x))
        if name == "log":
            return lambda x: np.log(f0(x))
        if name == "sqrt":
            return lambda x: np.sqrt(f0(x))
        if name == "abs":
            return lambda x: np.abs(f0(x))
        if name == "sign":
            return lambda x: np.where(f0(x) < 0.0, -1.0, 1.0)
        if name == "Phi":
            return lambda x: ndtr(f0(x))
        f1 = build(node.args[1])
        if name == "min":
            return lambda x: np.minimum(f0(x), f1(x))
        if name == "max":
            return lambda x: np.maximum(f0(x), f1(x))
        return lambda x: np.power(f0(x), f1(x))

    inner = build(e)

    def fn(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            out = inner(x)
        return out if out.shape == x.shape else np.broadcast_to(out, x.shape).copy()

    return fn


# ---------------------------------------------------------------------------
# Built-in model families

FAMILY_NAMES = (
    "brownian",
    "brownian-drift",
    "gbm",
    "cev",
    "squared-bessel",
    "inverse-bessel3",
)


@dataclass(frozen=True)
class ModelFamily:
    name: str
    params: tuple[float, ...] = ()


def expand_family(f: ModelFamily):
    """Build the DiffusionSpec for a named family."""
    from .core import DiffusionSpec

    name, p = f.name, f.params

    def need(k):
        if len(p) != k:
            raise InvalidParameterError(f"{name} takes {k} parameter(s), got {len(p)}")

    if name == "brownian":
        need(0)
        return DiffusionSpec(
            sigma=lambda x: np.ones_like(np.asarray(x, dtype=float)),
            b=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            l=-math.inf,
            r=math.inf,
            label="brownian",
        )
    if name == "brownian-drift":
        need(1)
        mu = float(p[0])
        return DiffusionSpec(
            sigma=lambda x: np.ones_like(np.asarray(x, dtype=float)),
            b=lambda x: np.full_like(np.asarray(x, dtype=float), mu),
            l=-math.inf,
            r=math.inf,
            label=f"brownian-drift({mu:g})",
        )
    if name == "gbm":
        need(1)
        s0 = float(p[0])
        if s0 <= 0:
            raise InvalidParameterError("gbm requires sigma0 > 0")
        return DiffusionSpec(
            sigma=lambda x: s0 * np.asarray(x, dtype=float),
            b=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            l=0.0,
            r=math.inf,
            label=f"gbm({s0:g})",
        )
    if name == "cev":
        need(2)
        s0, beta = float(p[0]), float(p[1])
        if s0 <= 0:
            raise InvalidParameterError("cev requires sigma0 > 0")
        return DiffusionSpec(
            sigma=lambda x: s0 * np.asarray(x, dtype=float) ** beta,
            b=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            l=0.0,
            r=math.inf,
            label=f"cev({s0:g}, {beta:g})",
        )
    if name == "squared-bessel":
        need(1)
        delta = float(p[0])
        if delta < 0:
            raise InvalidParameterError("squared-bessel requires delta >= 0")
        return DiffusionSpec(
            sigma=lambda x: 2.0 * np.sqrt(np.asarray(x, dtype=float)),
            b=lambda x: np.full_like(np.asarray(x, dtype=float), delta),
            l=0.0,
            r=math.inf,
            label=f"squared-bessel({delta:g})",
        )
    if name == "inverse-bessel3":
        need(0)
        return DiffusionSpec(
            sigma=lambda x: np.asarray(x, dtype=float) ** 2,
            b=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            l=0.0,
            r=math.inf,
            label="inverse-bessel3",
        )
    raise InvalidParameterError(f"unknown model family {name!r}")

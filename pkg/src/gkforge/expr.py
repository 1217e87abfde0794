"""Expression language over complex chart coordinates, lowered to real trees.

Grammar (whitespace is insignificant)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("+" | "-") unary | power
    power   := atom ("^" ["-"] INTEGER)?
    atom    := NUMBER | IDENT | IDENT "(" expr ")" | "(" expr ")"
    NUMBER  := decimal literal, optional exponent (1, 0.5, 2e-3)
    IDENT   := a declared complex coordinate, or the constants ``i`` and ``pi``
    call    := exp | log | sin | cos | sqrt | re | im | abs2 | conj

A complex coordinate ``w`` stands for ``x_w + i y_w``.  Parsing lowers every
subexpression to a pair of real trees (real part, imaginary part), so the
resulting :class:`Expr` contains only real variables; the imaginary tree is
``None`` for real-valued expressions.  ``log``, ``sqrt`` of a complex argument
use the principal branch, continued smoothly inside a jet.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import jets
from .jets import Jet


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifier(ExprSyntaxError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r}", offset)
        self.name = name


class ExprDomainError(ValueError):
    """Domain failure during evaluation; names the offending node."""

    def __init__(self, node, cause: Exception):
        super().__init__(f"{cause} in {node}")
        self.node = node


class OrderExceeded(ValueError):
    pass


# ---------------------------------------------------------------------------
# real tree nodes


@dataclass(frozen=True)
class Const:
    value: float

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True)
class Var:
    index: int
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int

    def __str__(self):
        return f"{self.base}^{self.exponent}"


@dataclass(frozen=True)
class Neg:
    arg: "Node"

    def __str__(self):
        return f"-{self.arg}"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple

    def __str__(self):
        return f"{self.fn}({', '.join(map(str, self.args))})"


Node = Union[Const, Var, BinOp, Pow, Neg, Call]

ZERO = Const(0.0)
ONE = Const(1.0)


def _is(node, value) -> bool:
    return isinstance(node, Const) and node.value == value


def add(a: Node, b: Node) -> Node:
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return BinOp("+", a, b)


def sub(a: Node, b: Node) -> Node:
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return BinOp("-", a, b)


def mul(a: Node, b: Node) -> Node:
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return BinOp("*", a, b)


def div(a: Node, b: Node) -> Node:
    if _is(b, 1.0):
        return a
    if _is(a, 0.0) and not _is(b, 0.0):
        return ZERO
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    return BinOp("/", a, b)


def neg(a: Node) -> Node:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def call(fn: str, *args: Node) -> Node:
    return Call(fn, tuple(args))


# ---------------------------------------------------------------------------
# complex pairs


@dataclass(frozen=True)
class Cx:
    re: Node
    im: Optional[Node] = None

    @property
    def imag(self) -> Node:
        return ZERO if self.im is None else self.im


def _im(node: Node) -> Optional[Node]:
    return None if _is(node, 0.0) else node


def cx_add(a: Cx, b: Cx) -> Cx:
    return Cx(add(a.re, b.re), _im(add(a.imag, b.imag)))


def cx_sub(a: Cx, b: Cx) -> Cx:
    return Cx(sub(a.re, b.re), _im(sub(a.imag, b.imag)))


def cx_mul(a: Cx, b: Cx) -> Cx:
    if a.im is None and b.im is None:
        return Cx(mul(a.re, b.re))
    re_ = sub(mul(a.re, b.re), mul(a.imag, b.imag))
    im_ = add(mul(a.re, b.imag), mul(a.imag, b.re))
    return Cx(re_, _im(im_))


def cx_div(a: Cx, b: Cx) -> Cx:
    if b.im is None:
        return Cx(div(a.re, b.re), _im(div(a.imag, b.re)))
    d = add(Pow(b.re, 2), Pow(b.im, 2))
    re_ = div(add(mul(a.re, b.re), mul(a.imag, b.im)), d)
    im_ = div(sub(mul(a.imag, b.re), mul(a.re, b.im)), d)
    return Cx(re_, _im(im_))


def cx_pow(a: Cx, n: int) -> Cx:
    if n == 0:
        return Cx(ONE)
    if a.im is None:
        if isinstance(a.re, Const):
            return Cx(Const(a.re.value ** n))
        return Cx(Pow(a.re, n))
    if n < 0:
        return cx_div(Cx(ONE), cx_pow(a, -n))
    result, base = None, a
    while n:
        if n & 1:
            result = base if result is None else cx_mul(result, base)
        n >>= 1
        if n:
            base = cx_mul(base, base)
    return result


def cx_neg(a: Cx) -> Cx:
    return Cx(neg(a.re), None if a.im is None else neg(a.im))


def cx_conj(a: Cx) -> Cx:
    return Cx(a.re, None if a.im is None else neg(a.im))


def _cosh_sinh(x: Node):
    ep, em = call("exp", x), call("exp", neg(x))
    return div(add(ep, em), Const(2.0)), div(sub(ep, em), Const(2.0))


def cx_func(fn: str, a: Cx) -> Cx:
    if fn == "re":
        return Cx(a.re)
    if fn == "im":
        return Cx(a.imag)
    if fn == "conj":
        return cx_conj(a)
    if fn == "abs2":
        if a.im is None:
            return Cx(Pow(a.re, 2))
        return Cx(add(Pow(a.re, 2), Pow(a.im, 2)))
    if a.im is None:
        if isinstance(a.re, Const):
            value = {"exp": math.exp, "sin": math.sin, "cos": math.cos}.get(fn)
            if value is not None:
                return Cx(Const(value(a.re.value)))
        return Cx(call(fn, a.re))
    if fn == "exp":
        e = call("exp", a.re)
        return Cx(mul(e, call("cos", a.im)), mul(e, call("sin", a.im)))
    if fn == "log":
        r2 = add(Pow(a.re, 2), Pow(a.im, 2))
        return Cx(mul(Const(0.5), call("log", r2)), call("atan2", a.im, a.re))
    if fn == "sqrt":
        r2 = add(Pow(a.re, 2), Pow(a.im, 2))
        modulus = call("sqrt", call("sqrt", r2))
        half = mul(Const(0.5), call("atan2", a.im, a.re))
        return Cx(mul(modulus, call("cos", half)), mul(modulus, call("sin", half)))
    if fn == "sin":
        ch, sh = _cosh_sinh(a.im)
        return Cx(mul(call("sin", a.re), ch), mul(call("cos", a.re), sh))
    if fn == "cos":
        ch, sh = _cosh_sinh(a.im)
        return Cx(mul(call("cos", a.re), ch), neg(mul(call("sin", a.re), sh)))
    raise ValueError(f"unknown function {fn}")


# ---------------------------------------------------------------------------
# parser

FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt", "re", "im", "abs2", "conj")
CONSTANTS = {"i": Cx(ZERO, ONE), "pi": Cx(Const(math.pi))}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z_0-9']*)|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class Expr:
    """A lowered expression: real and (optional) imaginary trees over real variables."""

    text: str
    re: Node
    im: Optional[Node]
    coordinates: tuple

    @property
    def is_real(self) -> bool:
        return self.im is None

    def variables(self) -> set:
        found = set()
        stack = [self.re] + ([self.im] if self.im is not None else [])
        seen = set()
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            if isinstance(node, Var):
                found.add(node.index)
            elif isinstance(node, BinOp):
                stack += [node.left, node.right]
            elif isinstance(node, (Pow,)):
                stack.append(node.base)
            elif isinstance(node, Neg):
                stack.append(node.arg)
            elif isinstance(node, Call):
                stack += list(node.args)
        return found


class _Parser:
    def __init__(self, text: str, coordinates):
        self.text = text
        self.coords = {name: k for k, name in enumerate(coordinates)}
        self.tokens = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
                raise ExprSyntaxError(f"unexpected character {text[bad]!r}", bad)
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start))
            pos = m.end()
        self.tokens.append(("end", "", len(text)))
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, off = self.take()
        if val != value:
            raise ExprSyntaxError(f"expected {value!r}, found {val or 'end of input'!r}", off)

    def parse(self) -> Cx:
        result = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", off)
        return result

    def expr(self) -> Cx:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            right = self.term()
            left = cx_add(left, right) if op == "+" else cx_sub(left, right)
        return left

    def term(self) -> Cx:
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            right = self.unary()
            left = cx_mul(left, right) if op == "*" else cx_div(left, right)
        return left

    def unary(self) -> Cx:
        kind, val, _ = self.peek()
        if kind == "op" and val in ("+", "-"):
            self.take()
            arg = self.unary()
            return arg if val == "+" else cx_neg(arg)
        return self.power()

    def power(self) -> Cx:
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            sign = 1
            if self.peek()[1] == "-":
                self.take()
                sign = -1
            kind, val, off = self.take()
            if kind != "num" or not re.fullmatch(r"\d+", val):
                raise ExprSyntaxError("exponent must be an integer literal", off)
            return cx_pow(base, sign * int(val))
        return base

    def atom(self) -> Cx:
        kind, val, off = self.take()
        if kind == "num":
            return Cx(Const(float(val)))
        if kind == "op" and val == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        if kind == "id":
            if self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    raise UnknownIdentifier(val, off)
                self.take()
                arg = self.expr()
                self.expect(")")
                return cx_func(val, arg)
            if val in self.coords:
                k = self.coords[val]
                return Cx(Var(2 * k, f"re({val})"), Var(2 * k + 1, f"im({val})"))
            if val in CONSTANTS:
                return CONSTANTS[val]
            raise UnknownIdentifier(val, off)
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", off)
        raise ExprSyntaxError(f"unexpected token {val!r}", off)


def parse(text: str, chart) -> Expr:
    """Parse ``text`` over the complex coordinates of ``chart``.

    ``chart`` is anything with a ``coordinates`` sequence of names (a
    :class:`gkforge.charts.Chart`, or a plain list/tuple of names).
    """
    coordinates = tuple(getattr(chart, "coordinates", chart))
    pair = _Parser(text, coordinates).parse()
    return Expr(text, pair.re, pair.im, coordinates)


def constant(value, chart) -> Expr:
    value = complex(value)
    coordinates = tuple(getattr(chart, "coordinates", chart))
    return Expr(repr(value), Const(value.real), _im(Const(value.imag)), coordinates)


# ---------------------------------------------------------------------------
# evaluation

_UNARY = {
    "exp": jets.exp,
    "log": jets.log,
    "sin": jets.sin,
    "cos": jets.cos,
    "sqrt": jets.sqrt,
}


def _eval(node: Node, X: Jet, memo: dict) -> Jet:
    key = id(node)
    hit = memo.get(key)
    if hit is not None:
        return hit[1]
    if isinstance(node, Const):
        out = Jet.constant(np.full(X.shape[:1], node.value), X.nvars, X.order)
    elif isinstance(node, Var):
        out = X[:, node.index]
    elif isinstance(node, BinOp):
        a = _eval(node.left, X, memo)
        b = _eval(node.right, X, memo)
        if node.op == "+":
            out = a + b
        elif node.op == "-":
            out = a - b
        elif node.op == "*":
            out = a * b
        else:
            try:
                out = a / b
            except jets.DomainError as exc:
                raise ExprDomainError(node, exc) from None
    elif isinstance(node, Pow):
        base = _eval(node.base, X, memo)
        try:
            out = base**node.exponent
        except jets.DomainError as exc:
            raise ExprDomainError(node, exc) from None
    elif isinstance(node, Neg):
        out = -_eval(node.arg, X, memo)
    elif isinstance(node, Call):
        args = [_eval(a, X, memo) for a in node.args]
        try:
            if node.fn == "atan2":
                out = jets.atan2(*args)
            else:
                out = _UNARY[node.fn](args[0])
        except jets.DomainError as exc:
            raise ExprDomainError(node, exc) from None
    else:  # pragma: no cover
        raise TypeError(f"unknown node {node!r}")
    memo[key] = (node, out)
    return out


def eval_jet(ast: Expr, points, order: int) -> Jet:
    """Jet of ``ast`` at a batch of real points ``(B, n)`` (or a single point)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != 2 * len(ast.coordinates):
        raise ValueError(
            f"point dimension {points.shape[1]} does not match chart "
            f"dimension {2 * len(ast.coordinates)}"
        )
    if not 0 <= order <= jets.MAX_ORDER:
        raise jets.JetOrderError(f"order must be in 0..{jets.MAX_ORDER}")
    X = Jet.variables(points, order)
    memo: dict = {}
    re_ = _eval(ast.re, X, memo)
    if ast.im is None:
        return re_
    im_ = _eval(ast.im, X, memo)
    return re_ + im_ * 1j


def evaluate(ast: Expr, points) -> np.ndarray:
    """Plain values at a batch of points."""
    return eval_jet(ast, points, 0).value


# ---------------------------------------------------------------------------
# Wirtinger derivatives


def dz(jet: Jet, pair) -> Jet:
    """``d/dz = (d/dx - i d/dy) / 2`` for the real index pair ``(ix, iy)``."""
    ix, iy = pair
    return (jet.deriv(ix) - jet.deriv(iy) * 1j) * 0.5


def dzbar(jet: Jet, pair) -> Jet:
    ix, iy = pair
    return (jet.deriv(ix) + jet.deriv(iy) * 1j) * 0.5


class WirtingerTable:
    """All mixed complex partials of a jet up to its order, at the base points.

    Entries are looked up by a word of coordinate names, a trailing ``~``
    marking the conjugate direction: ``table("z", "z~")`` is
    ``d^2 f / dz dzbar``.
    """

    def __init__(self, jet: Jet, pairing: dict, order: Optional[int] = None):
        self.pairing = dict(pairing)
        self.order = jet.order if order is None else order
        if self.order > jet.order:
            raise OrderExceeded(f"requested order {self.order} exceeds jet order {jet.order}")
        self._jet = jet
        self._cache: dict = {(): jet}

    def _key(self, word):
        key = []
        for w in word:
            bar = w.endswith("~")
            name = w[:-1] if bar else w
            if name not in self.pairing:
                raise KeyError(f"unknown complex coordinate {name!r}")
            key.append((name, bar))
        return tuple(sorted(key))

    def jet(self, *word) -> Jet:
        key = self._key(word)
        if len(key) > self.order:
            raise OrderExceeded(f"derivative of order {len(key)} exceeds table order {self.order}")
        if key in self._cache:
            return self._cache[key]
        name, bar = key[-1]
        parent = self.jet(*[n + ("~" if b else "") for n, b in key[:-1]])
        op = dzbar if bar else dz
        out = op(parent, self.pairing[name])
        self._cache[key] = out
        return out

    def __call__(self, *word) -> np.ndarray:
        return self.jet(*word).value


def wirtinger(jet: Jet, pairing: dict, order: Optional[int] = None) -> WirtingerTable:
    """Complex partial derivatives of ``jet`` for the complex pairs in ``pairing``.

    ``pairing`` maps coordinate names to ``(ix, iy)`` real indices; a
    :class:`gkforge.charts.Chart` exposes it as ``chart.pairing``.
    """
    return WirtingerTable(jet, getattr(pairing, "pairing", pairing), order)

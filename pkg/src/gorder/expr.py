"""Arithmetic expression language over the variables t, x, y, z.

Every user-supplied coefficient function (drift, volatility, generator,
payoff, zeta) is written in this little language.  Expressions are
immutable after parsing, evaluate on floats or numpy arrays, and the same
expression at the same bindings is bit-identical across calls.

Grammar (see docs/expr-grammar.md): numeric literals, the variables
t, x, y, z, the operators + - * / ^ with standard precedence (^ is
right-associative, unary minus binds tighter than *), parentheses, and
the functions min(a,b), max(a,b), abs(a), pos(a), neg(a), exp(a),
log(a), sqrt(a), where pos(a) = max(a, 0) and neg(a) = max(-a, 0).
"""

from __future__ import annotations

import re
from typing import Mapping, Union

import numpy as np

__all__ = [
    "Expr", "parse", "const", "var",
    "ExprError", "ExprSyntaxError", "UnknownIdentifier",
    "MissingBinding", "NonFinite",
    "VARIABLES", "FUNCTIONS",
]

VARIABLES = ("t", "x", "y", "z")

# function name -> arity
FUNCTIONS = {
    "min": 2,
    "max": 2,
    "abs": 1,
    "pos": 1,
    "neg": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
}

Number = Union[float, np.ndarray]


class ExprError(Exception):
    """Base class for all expression errors."""


class ExprSyntaxError(ExprError):
    """Malformed input.  str() has the stable format '<byte offset>:<message>'."""

    def __init__(self, offset: int, message: str):
        self.offset = offset
        self.message = message
        super().__init__(f"{offset}:{message}")


class UnknownIdentifier(ExprError):
    """An identifier that is neither a variable nor a known function."""

    def __init__(self, name: str, offset: int):
        self.name = name
        self.offset = offset
        super().__init__(f"{offset}:unknown identifier '{name}'")


class MissingBinding(ExprError):
    """Evaluation was asked for without a value for a free variable."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing binding for variable '{name}'")


class NonFinite(ExprError):
    """An intermediate value was inf or nan; carries the offending sub-expression."""

    def __init__(self, subexpr: str):
        self.subexpr = subexpr
        super().__init__(f"non-finite value in sub-expression '{subexpr}'")


def _check_finite(value, node) -> Number:
    if not np.all(np.isfinite(value)):
        raise NonFinite(str(node))
    return value


# node precedence levels used by the printer
_PREC_ATOM = 100
_PREC_POW = 30
_PREC_NEG = 25
_PREC_MUL = 20
_PREC_ADD = 10


class Expr:
    """Immutable expression tree node.

    Subclasses implement `_eval`, `_fmt` and `_free_vars`.  Arithmetic
    operators are overloaded so coefficient expressions can be composed
    programmatically; numbers are coerced to constants.
    """

    __slots__ = ("_vars",)

    @property
    def free_vars(self) -> frozenset:
        return self._vars

    def eval(self, bindings: Mapping[str, Number]) -> Number:
        """Evaluate with IEEE doubles; raises MissingBinding / NonFinite."""
        with np.errstate(all="ignore"):
            return self._eval(bindings)

    def __call__(self, **bindings: Number) -> Number:
        return self.eval(bindings)

    def substitute(self, name: str, replacement: "Expr") -> "Expr":
        """Return a new Expr with every occurrence of `name` replaced."""
        return self._subst(name, replacement)

    def _eval(self, bindings):  # pragma: no cover - abstract
        raise NotImplementedError

    def _fmt(self) -> tuple[str, int]:  # pragma: no cover - abstract
        raise NotImplementedError

    def _subst(self, name, replacement):  # pragma: no cover - abstract
        raise NotImplementedError

    def __str__(self) -> str:
        return self._fmt()[0]

    def __repr__(self) -> str:
        return f"parse({self._fmt()[0]!r})"

    # -- operator overloading for programmatic construction --------------

    def __add__(self, other):
        return Bin("+", self, _coerce(other))

    def __radd__(self, other):
        return Bin("+", _coerce(other), self)

    def __sub__(self, other):
        return Bin("-", self, _coerce(other))

    def __rsub__(self, other):
        return Bin("-", _coerce(other), self)

    def __mul__(self, other):
        return Bin("*", self, _coerce(other))

    def __rmul__(self, other):
        return Bin("*", _coerce(other), self)

    def __truediv__(self, other):
        return Bin("/", self, _coerce(other))

    def __rtruediv__(self, other):
        return Bin("/", _coerce(other), self)

    def __pow__(self, other):
        return Bin("^", self, _coerce(other))

    def __neg__(self):
        return Neg(self)

    def call(self, fn: str, *args: "Expr") -> "Expr":
        return Call(fn, (self,) + args)


def _coerce(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Num(float(value))
    raise TypeError(f"cannot use {value!r} in an expression")


class Num(Expr):
    __slots__ = ("value",)

    def __init__(self, value: float):
        self.value = float(value)
        self._vars = frozenset()

    def _eval(self, bindings):
        return self.value

    def _fmt(self):
        if self.value < 0:
            return repr(self.value), _PREC_NEG
        return repr(self.value), _PREC_ATOM

    def _subst(self, name, replacement):
        return self


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        if name not in VARIABLES:
            raise UnknownIdentifier(name, -1)
        self.name = name
        self._vars = frozenset((name,))

    def _eval(self, bindings):
        try:
            value = bindings[self.name]
        except KeyError:
            raise MissingBinding(self.name) from None
        return _check_finite(value, self)

    def _fmt(self):
        return self.name, _PREC_ATOM

    def _subst(self, name, replacement):
        return replacement if name == self.name else self


class Neg(Expr):
    __slots__ = ("child",)

    def __init__(self, child: Expr):
        self.child = child
        self._vars = child.free_vars

    def _eval(self, bindings):
        return _check_finite(np.negative(self.child._eval(bindings)), self)

    def _fmt(self):
        text, prec = self.child._fmt()
        if prec < _PREC_NEG:
            text = f"({text})"
        return f"-{text}", _PREC_NEG

    def _subst(self, name, replacement):
        return Neg(self.child._subst(name, replacement))


_BIN_OPS = {
    "+": (np.add, _PREC_ADD),
    "-": (np.subtract, _PREC_ADD),
    "*": (np.multiply, _PREC_MUL),
    "/": (np.divide, _PREC_MUL),
    "^": (np.power, _PREC_POW),
}


class Bin(Expr):
    __slots__ = ("op", "left", "right")

    def __init__(self, op: str, left: Expr, right: Expr):
        self.op = op
        self.left = left
        self.right = right
        self._vars = left.free_vars | right.free_vars

    def _eval(self, bindings):
        fn = _BIN_OPS[self.op][0]
        value = fn(self.left._eval(bindings), self.right._eval(bindings))
        return _check_finite(value, self)

    def _fmt(self):
        prec = _BIN_OPS[self.op][1]
        ltext, lprec = self.left._fmt()
        rtext, rprec = self.right._fmt()
        if self.op == "^":
            # right-associative: parenthesize a left child of equal precedence
            if lprec <= prec:
                ltext = f"({ltext})"
            if rprec < prec:
                rtext = f"({rtext})"
        else:
            if lprec < prec:
                ltext = f"({ltext})"
            # left-associative: an equal-precedence right child needs
            # parentheses so the exact tree survives re-parsing
            if rprec <= prec:
                rtext = f"({rtext})"
        return f"{ltext} {self.op} {rtext}", prec

    def _subst(self, name, replacement):
        return Bin(self.op, self.left._subst(name, replacement),
                   self.right._subst(name, replacement))


def _fn_pos(a):
    return np.maximum(a, 0.0)


def _fn_neg(a):
    return np.maximum(np.negative(a), 0.0)


_CALL_FNS = {
    "min": np.minimum,
    "max": np.maximum,
    "abs": np.abs,
    "pos": _fn_pos,
    "neg": _fn_neg,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
}


class Call(Expr):
    __slots__ = ("fn", "args")

    def __init__(self, fn: str, args: tuple):
        if fn not in FUNCTIONS:
            raise UnknownIdentifier(fn, -1)
        if len(args) != FUNCTIONS[fn]:
            raise ExprSyntaxError(-1, f"{fn} expects {FUNCTIONS[fn]} argument(s)")
        self.fn = fn
        self.args = tuple(args)
        vars_ = frozenset()
        for a in args:
            vars_ = vars_ | a.free_vars
        self._vars = vars_

    def _eval(self, bindings):
        values = [a._eval(bindings) for a in self.args]
        return _check_finite(_CALL_FNS[self.fn](*values), self)

    def _fmt(self):
        inner = ", ".join(a._fmt()[0] for a in self.args)
        return f"{self.fn}({inner})", _PREC_ATOM

    def _subst(self, name, replacement):
        return Call(self.fn, tuple(a._subst(name, replacement) for a in self.args))


def const(value: float) -> Expr:
    """Constant expression."""
    return Num(value)


def var(name: str) -> Expr:
    """Variable expression; name must be one of t, x, y, z."""
    return Var(name)


# ---------------------------------------------------------------------------
# Tokenizer / Pratt parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
  | (?P<ws>\s+)
    """,
    re.VERBOSE,
)


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


class _Token:
    __slots__ = ("kind", "value", "offset")

    def __init__(self, kind, value, offset):
        self.kind = kind
        self.value = value
        self.offset = offset


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(_byte_offset(text, pos),
                                  f"unexpected character {text[pos]!r}")
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(), _byte_offset(text, pos)))
        pos = m.end()
    tokens.append(_Token("end", "", _byte_offset(text, len(text))))
    return tokens


_LBP = {"+": _PREC_ADD, "-": _PREC_ADD, "*": _PREC_MUL, "/": _PREC_MUL, "^": _PREC_POW}


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def expect(self, value: str):
        token = self.advance()
        if token.value != value:
            raise ExprSyntaxError(token.offset, f"expected '{value}'")

    def parse(self) -> Expr:
        node = self.expression(0)
        if self.current.kind != "end":
            raise ExprSyntaxError(self.current.offset,
                                  f"unexpected token {self.current.value!r}")
        return node

    def expression(self, rbp: int) -> Expr:
        node = self.prefix()
        while True:
            token = self.current
            if token.kind != "op" or token.value not in _LBP:
                break
            lbp = _LBP[token.value]
            if lbp <= rbp:
                break
            self.advance()
            if token.value == "^":
                right = self.expression(lbp - 1)  # right-associative
            else:
                right = self.expression(lbp)
            node = Bin(token.value, node, right)
        return node

    def prefix(self) -> Expr:
        token = self.advance()
        if token.kind == "num":
            return Num(float(token.value))
        if token.kind == "ident":
            return self.identifier(token)
        if token.kind == "op":
            if token.value == "(":
                node = self.expression(0)
                self.expect(")")
                return node
            if token.value == "-":
                return Neg(self.expression(_PREC_NEG))
            if token.value == "+":
                return self.expression(_PREC_NEG)
        raise ExprSyntaxError(token.offset,
                              f"unexpected token {token.value!r}"
                              if token.kind != "end" else "unexpected end of input")

    def identifier(self, token: _Token) -> Expr:
        name = token.value
        if self.current.value == "(":
            if name not in FUNCTIONS:
                raise UnknownIdentifier(name, token.offset)
            self.advance()
            args = [self.expression(0)]
            while self.current.value == ",":
                self.advance()
                args.append(self.expression(0))
            self.expect(")")
            if len(args) != FUNCTIONS[name]:
                raise ExprSyntaxError(
                    token.offset,
                    f"{name} expects {FUNCTIONS[name]} argument(s), got {len(args)}")
            return Call(name, tuple(args))
        if name in VARIABLES:
            return Var(name)
        raise UnknownIdentifier(name, token.offset)


def parse(text: str) -> Expr:
    """Parse `text` into an Expr; reports the exact byte offset on errors."""
    return _Parser(text).parse()

"""Tiny arithmetic expression language for parameterized probability tables.

Grammar (whitespace-insensitive, no unary minus):

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := number | name | '(' expr ')'

Expressions are closed under symbolic differentiation, which is what keeps
all table Jacobians exact.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ExprSyntaxError, ValidationError

__all__ = ["Expr", "Num", "Var", "BinOp", "parse_expr"]


class Expr:
    """Base node of an expression tree."""

    def evaluate(self, env: dict[str, float]) -> float:
        raise NotImplementedError

    def diff(self, name: str) -> "Expr":
        raise NotImplementedError

    def variables(self) -> set[str]:
        raise NotImplementedError

    def __str__(self) -> str:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Expr) and str(self) == str(other)

    def __hash__(self) -> int:
        return hash(str(self))


@dataclass(frozen=True, eq=False)
class Num(Expr):
    value: float

    def evaluate(self, env):
        return self.value

    def diff(self, name):
        return Num(0.0)

    def variables(self):
        return set()

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True, eq=False)
class Var(Expr):
    name: str

    def evaluate(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise ValidationError(f"unknown parameter name {self.name!r}") from None

    def diff(self, name):
        return Num(1.0) if name == self.name else Num(0.0)

    def variables(self):
        return {self.name}

    def __str__(self):
        return self.name


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


@dataclass(frozen=True, eq=False)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        return a / b

    def diff(self, name):
        da, db = self.left.diff(name), self.right.diff(name)
        if self.op in "+-":
            return _simplify(BinOp(self.op, da, db))
        if self.op == "*":
            return _simplify(
                BinOp("+", _simplify(BinOp("*", da, self.right)),
                      _simplify(BinOp("*", self.left, db))))
        # quotient rule: (da*b - a*db) / (b*b)
        num = BinOp("-", _simplify(BinOp("*", da, self.right)),
                    _simplify(BinOp("*", self.left, db)))
        den = BinOp("*", self.right, self.right)
        return _simplify(BinOp("/", _simplify(num), den))

    def variables(self):
        return self.left.variables() | self.right.variables()

    def __str__(self):
        # parenthesize children of lower precedence; right child also when
        # the operator is non-associative (-, /)
        ls = str(self.left)
        rs = str(self.right)
        if isinstance(self.left, BinOp) and _PREC[self.left.op] < _PREC[self.op]:
            ls = f"({ls})"
        if isinstance(self.right, BinOp) and (
                _PREC[self.right.op] < _PREC[self.op]
                or (_PREC[self.right.op] == _PREC[self.op] and self.op in "-/")):
            rs = f"({rs})"
        return f"{ls} {self.op} {rs}"


def _is_zero(e: Expr) -> bool:
    return isinstance(e, Num) and e.value == 0.0


def _is_one(e: Expr) -> bool:
    return isinstance(e, Num) and e.value == 1.0


def _simplify(e: Expr) -> Expr:
    """Local constant folding; keeps derivative trees from exploding."""
    if not isinstance(e, BinOp):
        return e
    a, b = e.left, e.right
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(e.evaluate({}))
    if e.op == "+":
        if _is_zero(a):
            return b
        if _is_zero(b):
            return a
    elif e.op == "-":
        if _is_zero(b):
            return a
    elif e.op == "*":
        if _is_zero(a) or _is_zero(b):
            return Num(0.0)
        if _is_one(a):
            return b
        if _is_one(b):
            return a
    elif e.op == "/":
        if _is_zero(a):
            return Num(0.0)
        if _is_one(b):
            return a
    return e


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1
        if self.pos >= len(self.text):
            return None
        return self.text[self.pos]

    def take_number(self):
        start = self.pos
        t = self.text
        while self.pos < len(t) and (t[self.pos].isdigit() or t[self.pos] == "."):
            self.pos += 1
        if self.pos < len(t) and t[self.pos] in "eE":
            mark = self.pos
            self.pos += 1
            if self.pos < len(t) and t[self.pos] in "+-":
                self.pos += 1
            if self.pos < len(t) and t[self.pos].isdigit():
                while self.pos < len(t) and t[self.pos].isdigit():
                    self.pos += 1
            else:
                self.pos = mark  # bare 'e' belongs to a following name, not the number
        try:
            return float(t[start:self.pos])
        except ValueError:
            raise ExprSyntaxError(f"bad number {t[start:self.pos]!r}", start)

    def take_name(self):
        start = self.pos
        t = self.text
        while self.pos < len(t) and (t[self.pos].isalnum() or t[self.pos] == "_"):
            self.pos += 1
        return t[start:self.pos]


def parse_expr(text: str) -> Expr:
    """Parse an expression string; raises ExprSyntaxError with a position."""
    tok = _Tokenizer(text)

    def expr() -> Expr:
        node = term()
        while tok.peek() in ("+", "-"):
            op = tok.text[tok.pos]
            tok.pos += 1
            node = BinOp(op, node, term())
        return node

    def term() -> Expr:
        node = factor()
        while tok.peek() in ("*", "/"):
            op = tok.text[tok.pos]
            tok.pos += 1
            node = BinOp(op, node, factor())
        return node

    def factor() -> Expr:
        c = tok.peek()
        if c is None:
            raise ExprSyntaxError("unexpected end of expression", tok.pos)
        if c == "(":
            tok.pos += 1
            node = expr()
            if tok.peek() != ")":
                raise ExprSyntaxError("expected ')'", tok.pos)
            tok.pos += 1
            return node
        if c.isdigit() or c == ".":
            return Num(tok.take_number())
        if c.isalpha() or c == "_":
            return Var(tok.take_name())
        raise ExprSyntaxError(f"unexpected character {c!r}", tok.pos)

    node = expr()
    if tok.peek() is not None:
        raise ExprSyntaxError(f"trailing input {tok.text[tok.pos:]!r}", tok.pos)
    return node

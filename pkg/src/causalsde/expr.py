"""Arithmetic expression language for coefficient entries and intervention maps.

Grammar (standard precedence, ``^`` right-associative and binding tighter
than unary minus):

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | 'x<k>' | FUNC '(' expr (',' expr)* ')' | '(' expr ')'

Identifiers ``x1 .. xp`` index coordinates (1-based in the source text,
0-based in the tree).  Functions: sqrt, exp, log, abs, sin, cos, pow, min,
max.  Evaluation is pure and vectorized; domain errors (division by zero,
log or sqrt of a negative) yield non-finite values rather than raising, so
they surface downstream as coefficient overflow.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

__all__ = ["Expression", "ExprSyntaxError", "parse_expression"]

FUNCTIONS = {
    "sqrt": 1,
    "exp": 1,
    "log": 1,
    "abs": 1,
    "sin": 1,
    "cos": 1,
    "pow": 2,
    "min": 2,
    "max": 2,
}

_UFUNC = {
    "sqrt": np.sqrt,
    "exp": np.exp,
    "log": np.log,
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
}


class ExprSyntaxError(ValueError):
    """Parse failure carrying the byte offset and the expected token set."""

    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        self.offset = offset
        self.expected = tuple(expected)
        detail = f"{message} at offset {offset}"
        if expected:
            detail += f" (expected one of: {', '.join(expected)})"
        super().__init__(detail)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based coordinate index


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Node", ...]


Node = Num | Var | Neg | BinOp | Call

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)

_OPERAND_EXPECTED = ("number", "identifier", "'('", "'-'")


@dataclass(frozen=True)
class _Token:
    kind: str  # 'num' | 'ident' | 'op' | 'eof'
    text: str
    offset: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            stripped = source[pos:].lstrip()
            off = len(source) - len(stripped)
            if not stripped:
                break
            raise ExprSyntaxError(f"unexpected character {stripped[0]!r}", off)
        for kind in ("num", "ident", "op"):
            text = m.group(kind)
            if text is not None:
                tokens.append(_Token(kind, text, m.start(kind)))
                break
        pos = m.end()
    tokens.append(_Token("eof", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.pos = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, text: str):
        tok = self.current
        if tok.kind != "op" or tok.text != text:
            raise ExprSyntaxError(
                f"unexpected token {tok.text!r}" if tok.kind != "eof" else "unexpected end of input",
                tok.offset,
                (f"'{text}'",),
            )
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        tok = self.current
        if tok.kind != "eof":
            raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.offset, ("operator", "end of input"))
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.current.kind == "op" and self.current.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.current.kind == "op" and self.current.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.current.kind == "op" and self.current.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        node = self.atom()
        if self.current.kind == "op" and self.current.text == "^":
            self.advance()
            node = BinOp("^", node, self.unary())
        return node

    def atom(self) -> Node:
        tok = self.current
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.advance()
            if tok.text in FUNCTIONS:
                arity = FUNCTIONS[tok.text]
                self.expect_op("(")
                args = [self.expr()]
                while self.current.kind == "op" and self.current.text == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect_op(")")
                if len(args) != arity:
                    raise ExprSyntaxError(
                        f"{tok.text} takes {arity} argument(s), got {len(args)}", tok.offset
                    )
                return Call(tok.text, tuple(args))
            m = re.fullmatch(r"x(\d+)", tok.text)
            if m is None:
                raise ExprSyntaxError(f"unknown identifier {tok.text!r}", tok.offset)
            index = int(m.group(1))
            if index < 1:
                raise ExprSyntaxError("coordinate indices start at x1", tok.offset)
            return Var(index - 1)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(
            f"unexpected token {tok.text!r}" if tok.kind != "eof" else "unexpected end of input",
            tok.offset,
            _OPERAND_EXPECTED,
        )


def _evaluate(node: Node, values: np.ndarray):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.index >= values.shape[-1]:
            raise IndexError(
                f"expression references x{node.index + 1} but only {values.shape[-1]} coordinates supplied"
            )
        return values[..., node.index]
    if isinstance(node, Neg):
        return -_evaluate(node.operand, values)
    if isinstance(node, BinOp):
        left = _evaluate(node.left, values)
        right = _evaluate(node.right, values)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if node.op == "/":
            return np.divide(left, right)
        return np.power(left, right)
    if node.name == "pow":
        return np.power(_evaluate(node.args[0], values), _evaluate(node.args[1], values))
    if node.name == "min":
        return np.minimum(_evaluate(node.args[0], values), _evaluate(node.args[1], values))
    if node.name == "max":
        return np.maximum(_evaluate(node.args[0], values), _evaluate(node.args[1], values))
    return _UFUNC[node.name](_evaluate(node.args[0], values))


# precedence levels used by the printer; higher binds tighter
_LEVEL_ADD, _LEVEL_MUL, _LEVEL_UNARY, _LEVEL_POW, _LEVEL_ATOM = 1, 2, 3, 4, 5


def _render(node: Node, min_level: int) -> str:
    if isinstance(node, Num):
        text, level = repr(node.value), _LEVEL_ATOM
    elif isinstance(node, Var):
        text, level = f"x{node.index + 1}", _LEVEL_ATOM
    elif isinstance(node, Neg):
        text, level = "-" + _render(node.operand, _LEVEL_UNARY), _LEVEL_UNARY
    elif isinstance(node, Call):
        args = ", ".join(_render(a, _LEVEL_ADD) for a in node.args)
        text, level = f"{node.name}({args})", _LEVEL_ATOM
    elif node.op == "^":
        text = f"{_render(node.left, _LEVEL_ATOM)}^{_render(node.right, _LEVEL_UNARY)}"
        level = _LEVEL_POW
    elif node.op in "*/":
        text = f"{_render(node.left, _LEVEL_MUL)} {node.op} {_render(node.right, _LEVEL_MUL + 1)}"
        level = _LEVEL_MUL
    else:
        text = f"{_render(node.left, _LEVEL_ADD)} {node.op} {_render(node.right, _LEVEL_ADD + 1)}"
        level = _LEVEL_ADD
    if level < min_level:
        return f"({text})"
    return text


def _collect_vars(node: Node, out: set[int]):
    if isinstance(node, Var):
        out.add(node.index)
    elif isinstance(node, Neg):
        _collect_vars(node.operand, out)
    elif isinstance(node, BinOp):
        _collect_vars(node.left, out)
        _collect_vars(node.right, out)
    elif isinstance(node, Call):
        for a in node.args:
            _collect_vars(a, out)


@dataclass(frozen=True)
class Expression:
    """Parsed expression tree; evaluation is pure and numpy-vectorized."""

    tree: Node

    def __call__(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        with np.errstate(all="ignore"):
            out = _evaluate(self.tree, values)
        return np.asarray(out, dtype=float) + np.zeros(values.shape[:-1])

    @property
    def variables(self) -> frozenset[int]:
        out: set[int] = set()
        _collect_vars(self.tree, out)
        return frozenset(out)

    def to_string(self) -> str:
        return _render(self.tree, 0)

    def __str__(self) -> str:
        return self.to_string()


def parse_expression(source: str) -> Expression:
    """Parse source text into an :class:`Expression`.

    Raises :class:`ExprSyntaxError` with the byte offset and expected-token
    set on malformed input, unknown identifiers, or arity mismatches.
    """
    return Expression(_Parser(source).parse())

"""
Potential expressions U(x) and V(x, y).

Grammar (Pratt parser, lowest to highest binding):
    + -   (left)
    * /   (left)
    unary -
    ^     (right)
Atoms: numbers, x, y, pi, and calls sin/cos/exp/sqrt/tanh with one argument.

A parsed expression is compiled once to a flat postfix program and evaluated
on numpy arrays; complex inputs are supported so forces can be taken by the
complex-step method.
"""

from __future__ import annotations

import math
import re
from typing import Callable, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, PrivateAttr

from cqlab.errors import (
    ArityMismatch,
    ExpressionEvaluationError,
    ExpressionSyntaxError,
    UnknownIdentifier,
)
from cqlab.numerics import Axis, complex_step_derivative

VARIABLES = ("x", "y")
CONSTANTS = {"pi": math.pi}
FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
}

BinaryOp = Literal["+", "-", "*", "/", "^"]


# ---------------------------------------------------------------------------
# Syntax tree
# ---------------------------------------------------------------------------

class Num(BaseModel):
    model_config = ConfigDict(frozen=True)
    value: float


class Var(BaseModel):
    model_config = ConfigDict(frozen=True)
    name: str


class Neg(BaseModel):
    model_config = ConfigDict(frozen=True)
    operand: "Node"


class BinOp(BaseModel):
    model_config = ConfigDict(frozen=True)
    op: BinaryOp
    left: "Node"
    right: "Node"


class Call(BaseModel):
    model_config = ConfigDict(frozen=True)
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]

for _model in (Neg, BinOp, Call):
    _model.model_rebuild()


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

class _Token(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["num", "name", "op", "lparen", "rparen", "comma", "end"]
    text: str
    offset: int


_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^])"
    r"|(?P<lparen>\()"
    r"|(?P<rparen>\))"
    r"|(?P<comma>,)"
    r")"
)


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    stripped_end = len(text.rstrip())
    while pos < stripped_end:
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.lastgroup is None:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionSyntaxError(
                f"unexpected character {text[start]!r}", _byte_offset(text, start)
            )
        kind = m.lastgroup
        tokens.append(_Token(kind=kind, text=m.group(kind), offset=_byte_offset(text, m.start(kind))))
        pos = m.end()
    tokens.append(_Token(kind="end", text="", offset=_byte_offset(text, len(text))))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_LBP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}
_UNARY_BP = 25


class _Parser:
    def __init__(self, text: str) -> None:
        self.tokens = _tokenize(text)
        self.pos = 0

    @property
    def token(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str, what: str) -> _Token:
        if self.token.kind != kind:
            raise ExpressionSyntaxError(f"expected {what}", self.token.offset)
        return self.advance()

    def lbp(self, tok: _Token) -> int:
        return _LBP.get(tok.text, 0) if tok.kind == "op" else 0

    def expression(self, rbp: int = 0) -> Node:
        left = self.nud(self.advance())
        while rbp < self.lbp(self.token):
            left = self.led(self.advance(), left)
        return left

    def nud(self, tok: _Token) -> Node:
        if tok.kind == "num":
            return Num(value=float(tok.text))
        if tok.kind == "op" and tok.text == "-":
            return Neg(operand=self.expression(_UNARY_BP))
        if tok.kind == "lparen":
            inner = self.expression()
            self.expect("rparen", "')'")
            return inner
        if tok.kind == "name":
            return self.name(tok)
        if tok.kind == "end":
            raise ExpressionSyntaxError("unexpected end of expression", tok.offset)
        raise ExpressionSyntaxError(f"unexpected {tok.text!r}", tok.offset)

    def name(self, tok: _Token) -> Node:
        if tok.text in FUNCTIONS:
            self.expect("lparen", f"'(' after {tok.text}")
            args: list[Node] = []
            if self.token.kind != "rparen":
                args.append(self.expression())
                while self.token.kind == "comma":
                    self.advance()
                    args.append(self.expression())
            self.expect("rparen", "')'")
            if len(args) != 1:
                raise ArityMismatch(
                    f"{tok.text} takes 1 argument, got {len(args)}", tok.offset
                )
            return Call(func=tok.text, arg=args[0])
        if tok.text in VARIABLES:
            return Var(name=tok.text)
        if tok.text in CONSTANTS:
            return Num(value=CONSTANTS[tok.text])
        raise UnknownIdentifier(f"unknown identifier {tok.text!r}", tok.offset)

    def led(self, tok: _Token, left: Node) -> Node:
        if tok.text == "^":
            return BinOp(op="^", left=left, right=self.expression(_LBP["^"] - 1))
        return BinOp(op=tok.text, left=left, right=self.expression(_LBP[tok.text]))

    def parse(self) -> Node:
        tree = self.expression()
        if self.token.kind != "end":
            raise ExpressionSyntaxError(f"unexpected {self.token.text!r}", self.token.offset)
        return tree


# ---------------------------------------------------------------------------
# Compiled expression
# ---------------------------------------------------------------------------

def _compile(node: Node, program: list[tuple[str, object]]) -> None:
    if isinstance(node, Num):
        program.append(("const", node.value))
    elif isinstance(node, Var):
        program.append(("var", node.name))
    elif isinstance(node, Neg):
        _compile(node.operand, program)
        program.append(("neg", None))
    elif isinstance(node, Call):
        _compile(node.arg, program)
        program.append(("call", node.func))
    else:
        _compile(node.left, program)
        _compile(node.right, program)
        program.append(("bin", node.op))


def _apply_binary(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return a / b
    return np.power(a, b)


def _format_number(value: float) -> str:
    if value == math.pi:
        return "pi"
    return repr(float(value))


def pretty(node: Node) -> str:
    """Fully parenthesized text that parses back to the same tree."""
    if isinstance(node, Num):
        return _format_number(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{pretty(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({pretty(node.arg)})"
    return f"({pretty(node.left)} {node.op} {pretty(node.right)})"


def _collect_names(node: Node, out: set[str]) -> None:
    if isinstance(node, Var):
        out.add(node.name)
    elif isinstance(node, Neg):
        _collect_names(node.operand, out)
    elif isinstance(node, Call):
        _collect_names(node.arg, out)
    elif isinstance(node, BinOp):
        _collect_names(node.left, out)
        _collect_names(node.right, out)


class PotentialExpr(BaseModel):
    """
    A parsed potential expression.

    Attributes:
        text: Source text
        tree: Syntax tree
    """
    model_config = ConfigDict(frozen=True)

    text: str
    tree: Node

    _program: list[tuple[str, object]] = PrivateAttr(default_factory=list)

    def model_post_init(self, __context: object) -> None:
        program: list[tuple[str, object]] = []
        _compile(self.tree, program)
        self._program = program

    def references(self, name: str) -> bool:
        names: set[str] = set()
        _collect_names(self.tree, names)
        return name in names

    def pretty(self) -> str:
        return pretty(self.tree)

    def evaluate(self, x: Union[float, np.ndarray], y: Union[float, np.ndarray] = 0.0) -> np.ndarray:
        """
        Evaluate on broadcast (x, y); complex inputs give complex output.

        Raises:
            ExpressionEvaluationError: division by zero or an invalid operation
        """
        x = np.asarray(x)
        y = np.asarray(y)
        shape = np.broadcast(x, y).shape
        stack: list[np.ndarray] = []
        try:
            with np.errstate(divide="raise", invalid="raise", over="raise"):
                for opcode, arg in self._program:
                    if opcode == "const":
                        stack.append(np.asarray(arg, dtype=float))
                    elif opcode == "var":
                        stack.append(x if arg == "x" else y)
                    elif opcode == "neg":
                        stack.append(-stack.pop())
                    elif opcode == "call":
                        stack.append(FUNCTIONS[arg](stack.pop()))
                    else:
                        b = stack.pop()
                        a = stack.pop()
                        stack.append(_apply_binary(arg, a, b))
        except (FloatingPointError, ZeroDivisionError) as exc:
            raise ExpressionEvaluationError(f"evaluating {self.text!r}: {exc}") from exc
        result = stack.pop()
        return np.broadcast_to(result, shape).copy()

    def __call__(self, x: Union[float, np.ndarray], y: Union[float, np.ndarray] = 0.0) -> np.ndarray:
        return self.evaluate(x, y)


def parse_potential(text: str) -> PotentialExpr:
    """
    Parse a potential expression.

    Raises:
        ExpressionSyntaxError: malformed text (message and .offset give the byte offset)
        UnknownIdentifier: name other than x, y, pi or a known function
        ArityMismatch: function called with the wrong number of arguments
    """
    if not text.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    return PotentialExpr(text=text, tree=_Parser(text).parse())


def potential_gradient(expr: PotentialExpr, x: np.ndarray, y: np.ndarray, axis: Axis) -> np.ndarray:
    """Partial derivative of the expression at arbitrary points, by complex step."""
    return complex_step_derivative(expr.evaluate, x, y, axis)

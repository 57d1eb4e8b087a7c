"""Infix arithmetic over row columns for derived-column rules.

Grammar: ``expr := term (('+'|'-') term)*``, ``term := factor (('*'|'/') factor)*``,
``factor := NUMBER | COLUMN | '(' expr ')' | '-' factor``. Evaluation is exact
decimal arithmetic; any null operand yields null, division by zero is a
per-row transform failure.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, DivisionByZero, InvalidOperation, ROUND_HALF_EVEN
from typing import Mapping

from .errors import RuleParameterError, TransformError

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[+\-*/()]))"
)

CENT = Decimal("0.01")


@dataclass(frozen=True)
class _Num:
    value: Decimal


@dataclass(frozen=True)
class _Col:
    name: str


@dataclass(frozen=True)
class _Neg:
    operand: object


@dataclass(frozen=True)
class _Bin:
    op: str
    left: object
    right: object


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise RuleParameterError(
                f"bad expression {text!r}: unexpected character at position {pos}"
            )
        pos = m.end()
        for kind in ("num", "name", "op"):
            value = m.group(kind)
            if value is not None:
                tokens.append((kind, value))
                break
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> tuple[str, str] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise RuleParameterError(f"bad expression {self.text!r}: unexpected end")
        self.pos += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.peek() is not None:
            raise RuleParameterError(
                f"bad expression {self.text!r}: trailing tokens after position {self.pos}"
            )
        return node

    def expr(self):
        node = self.term()
        while (tok := self.peek()) and tok[1] in "+-":
            self.take()
            node = _Bin(tok[1], node, self.term())
        return node

    def term(self):
        node = self.factor()
        while (tok := self.peek()) and tok[1] in "*/":
            self.take()
            node = _Bin(tok[1], node, self.factor())
        return node

    def factor(self):
        kind, value = self.take()
        if kind == "num":
            return _Num(Decimal(value))
        if kind == "name":
            return _Col(value)
        if value == "(":
            node = self.expr()
            tok = self.peek()
            if tok is None or tok[1] != ")":
                raise RuleParameterError(f"bad expression {self.text!r}: missing ')'")
            self.take()
            return node
        if value == "-":
            return _Neg(self.factor())
        raise RuleParameterError(f"bad expression {self.text!r}: unexpected {value!r}")


@dataclass(frozen=True)
class Expression:
    """Compiled arithmetic expression; ``columns`` lists referenced row columns."""

    source: str
    root: object
    columns: frozenset[str]

    def evaluate(self, values: Mapping[str, object]) -> Decimal | None:
        """Evaluate against one row; returns None when any operand is null."""
        try:
            return self._eval(self.root, values)
        except (DivisionByZero, InvalidOperation, ZeroDivisionError):
            raise TransformError(f"DivisionByZero({self.source})") from None

    def _eval(self, node, values) -> Decimal | None:
        if isinstance(node, _Num):
            return node.value
        if isinstance(node, _Col):
            raw = values.get(node.name)
            if raw is None:
                return None
            if isinstance(raw, Decimal):
                return raw
            if isinstance(raw, bool) or not isinstance(raw, int):
                raise TransformError(
                    f"NonNumericOperand({node.name}={raw!r})"
                )
            return Decimal(raw)
        if isinstance(node, _Neg):
            operand = self._eval(node.operand, values)
            return None if operand is None else -operand
        assert isinstance(node, _Bin)
        left = self._eval(node.left, values)
        right = self._eval(node.right, values)
        if left is None or right is None:
            return None
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        return left / right


def compile_expression(text: str) -> Expression:
    if not isinstance(text, str) or not text.strip():
        raise RuleParameterError("expression must be a non-empty string")
    root = _Parser(text).parse()
    columns = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if isinstance(node, _Col):
            columns.add(node.name)
        elif isinstance(node, _Neg):
            stack.append(node.operand)
        elif isinstance(node, _Bin):
            stack.extend((node.left, node.right))
    return Expression(source=text, root=root, columns=frozenset(columns))


def quantize_result(value: Decimal | None, data_kind: str) -> object:
    """Coerce an evaluated expression to the target column's kind.

    Decimal columns round half-even to scale 2 (money-like fields);
    integer columns round half-even to a whole number.
    """
    if value is None:
        return None
    if data_kind == "integer":
        return int(value.to_integral_value(rounding=ROUND_HALF_EVEN))
    return value.quantize(CENT, rounding=ROUND_HALF_EVEN)

"""
Scenario expression language.

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | primary
    primary := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Functions: pow(a, p), exp, log, abs, sqrt and norm2(group) over a declared
quaternionic coordinate group. Expressions evaluate to scalar jets.
"""

import re
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ArityError, ScenarioSyntaxError, UnknownIdentifierError
from .jets import Jet

_TOKEN = re.compile(r"\s*(?:(?P<number>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)"
                    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/(),]))")

FUNCTIONS = {'pow': 2, 'exp': 1, 'log': 1, 'abs': 1, 'sqrt': 1, 'norm2': 1}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    column: int


def tokenize(text: str, line: int = 1, offset: int = 0) -> List[Token]:
    """Columns are 1-based and shifted by `offset` (the position of the expression in its line)."""
    tokens = []
    position = 0
    while position < len(text):
        if text[position:].strip() == '':
            break
        match = _TOKEN.match(text, position)
        if match is None or match.end() == position:
            column = position + 1 + offset + (len(text[position:]) - len(text[position:].lstrip()))
            raise ScenarioSyntaxError(f"unexpected character {text[position:].strip()[0]!r}", line, column)
        kind = match.lastgroup
        tokens.append(Token(kind, match.group(kind), match.start(kind) + 1 + offset))
        position = match.end()
    tokens.append(Token('end', '', len(text) + 1 + offset))
    return tokens


# === AST ===

@dataclass(frozen=True)
class Number:
    value: float
    column: int


@dataclass(frozen=True)
class Name:
    ident: str
    column: int


@dataclass(frozen=True)
class Unary:
    operand: 'Node'
    column: int


@dataclass(frozen=True)
class Binary:
    op: str
    left: 'Node'
    right: 'Node'
    column: int


@dataclass(frozen=True)
class Call:
    function: str
    args: Tuple['Node', ...]
    column: int


Node = Union[Number, Name, Unary, Binary, Call]


class Parser:
    def __init__(self, text: str, line: int = 1, offset: int = 0):
        self.line = line
        self.tokens = tokenize(text, line, offset)
        self.index = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.index]

    def _advance(self) -> Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def _error(self, message: str, token: Optional[Token] = None):
        token = token or self.current
        found = 'end of input' if token.kind == 'end' else repr(token.text)
        raise ScenarioSyntaxError(f"{message}, found {found}", self.line, token.column)

    def _expect(self, text: str) -> Token:
        if self.current.text != text or self.current.kind != 'op':
            self._error(f"expected {text!r}")
        return self._advance()

    def parse(self) -> Node:
        node = self.expression()
        if self.current.kind != 'end':
            self._error("unexpected token")
        return node

    def expression(self) -> Node:
        node = self.term()
        while self.current.kind == 'op' and self.current.text in '+-':
            op = self._advance()
            node = Binary(op.text, node, self.term(), op.column)
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.current.kind == 'op' and self.current.text in '*/':
            op = self._advance()
            node = Binary(op.text, node, self.unary(), op.column)
        return node

    def unary(self) -> Node:
        if self.current.kind == 'op' and self.current.text == '-':
            op = self._advance()
            return Unary(self.unary(), op.column)
        return self.primary()

    def primary(self) -> Node:
        token = self.current
        if token.kind == 'number':
            self._advance()
            return Number(float(token.text), token.column)
        if token.kind == 'name':
            self._advance()
            if self.current.kind == 'op' and self.current.text == '(':
                self._advance()
                args = [self.expression()]
                while self.current.kind == 'op' and self.current.text == ',':
                    self._advance()
                    args.append(self.expression())
                self._expect(')')
                return Call(token.text, tuple(args), token.column)
            return Name(token.text, token.column)
        if token.kind == 'op' and token.text == '(':
            self._advance()
            node = self.expression()
            self._expect(')')
            return node
        self._error("expected a number, name or '('")


def parse_expression(text: str, line: int = 1, offset: int = 0) -> Node:
    return Parser(text, line, offset).parse()


# === RESOLUTION AND EVALUATION ===

class Expression:
    """A parsed scalar expression bound to a coordinate system."""

    def __init__(self, source: str, node: Node, coordinates: Sequence[str],
                 groups: Mapping[str, Sequence[int]], macros: Optional[Mapping[str, 'Expression']] = None,
                 line: int = 1):
        self.source = source
        self.node = node
        self.coordinates = {name: i for i, name in enumerate(coordinates)}
        self.groups = dict(groups)
        self.macros = dict(macros or {})
        self.line = line
        self._resolve(node)

    def __repr__(self):
        return f"Expression({self.source!r})"

    def _resolve(self, node: Node):
        if isinstance(node, Name):
            if node.ident not in self.coordinates and node.ident not in self.macros:
                raise UnknownIdentifierError(f"line {self.line}, column {node.column}: unknown identifier "
                                             f"{node.ident!r}")
        elif isinstance(node, Unary):
            self._resolve(node.operand)
        elif isinstance(node, Binary):
            self._resolve(node.left)
            self._resolve(node.right)
        elif isinstance(node, Call):
            if node.function not in FUNCTIONS:
                raise UnknownIdentifierError(f"line {self.line}, column {node.column}: unknown function "
                                             f"{node.function!r}")
            if len(node.args) != FUNCTIONS[node.function]:
                raise ArityError(f"line {self.line}, column {node.column}: {node.function} takes "
                                 f"{FUNCTIONS[node.function]} argument(s), got {len(node.args)}")
            if node.function == 'norm2':
                group = node.args[0]
                if not isinstance(group, Name) or group.ident not in self.groups:
                    raise UnknownIdentifierError(f"line {self.line}, column {node.column}: norm2 expects a "
                                                 f"quaternionic group ({', '.join(self.groups) or 'none declared'})")
                return
            if node.function == 'pow' and not self.is_constant(node.args[1]):
                raise ArityError(f"line {self.line}, column {node.column}: pow exponent must be constant")
            for arg in node.args:
                self._resolve(arg)

    def is_constant(self, node: Node) -> bool:
        if isinstance(node, Number):
            return True
        if isinstance(node, Unary):
            return self.is_constant(node.operand)
        if isinstance(node, Binary):
            return self.is_constant(node.left) and self.is_constant(node.right)
        return False

    def evaluate(self, variables: Jet) -> Jet:
        result = self._evaluate(self.node, variables)
        if not isinstance(result, Jet):
            result = Jet.constant(result, variables.space)
        return result

    def _evaluate(self, node: Node, v: Jet):
        if isinstance(node, Number):
            return node.value
        if isinstance(node, Name):
            if node.ident in self.coordinates:
                return v[self.coordinates[node.ident]]
            return self.macros[node.ident].evaluate(v)
        if isinstance(node, Unary):
            return -self._evaluate(node.operand, v)
        if isinstance(node, Binary):
            left, right = self._evaluate(node.left, v), self._evaluate(node.right, v)
            if node.op == '+':
                return left + right
            if node.op == '-':
                return left - right
            if node.op == '*':
                return left * right
            return left / right
        if node.function == 'norm2':
            indices = list(self.groups[node.args[0].ident])
            block = v[indices[0]:indices[-1] + 1] if indices == list(range(indices[0], indices[-1] + 1)) \
                else Jet.stack([v[i] for i in indices])
            return (block * block).sum()
        arg = self._evaluate(node.args[0], v)
        if not isinstance(arg, Jet):
            arg = Jet.constant(arg, v.space)
        if node.function == 'pow':
            return arg.power(float(self._evaluate(node.args[1], v)))
        return getattr(arg, node.function)()


def compile_expression(text: str, coordinates: Sequence[str], groups: Optional[Mapping[str, Sequence[int]]] = None,
                       macros: Optional[Mapping[str, Expression]] = None, line: int = 1,
                       offset: int = 0) -> Expression:
    return Expression(text, parse_expression(text, line, offset), coordinates, groups or {}, macros, line)


def quaternionic_groups(dim: int) -> Dict[str, Tuple[int, ...]]:
    """q1, q2, ... for consecutive blocks of four coordinates."""
    return {f"q{g + 1}": tuple(range(4 * g, 4 * g + 4)) for g in range(dim // 4)}


def evaluate_at(expression: Expression, point: Sequence[float]) -> float:
    return float(expression.evaluate(Jet.variables(np.asarray(point, dtype=float), 0)).value)

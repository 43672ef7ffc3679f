"""S-expression language the coordinator sends to parties.

Grammar::

    expr   := "(" op arg* ")"
    arg    := expr | key | tensor | number | string | symbol
    key    := "k:" digits              a tensor in the receiving party's store
    tensor := "t:" base64              inline tensor in the binary codec
    string := '"' chars '"'            no escapes; may not contain '"'

Numbers are ints when they parse as ints, floats otherwise.
"""

import base64
import re
from dataclasses import dataclass

import numpy as np

from ..errors import FormatError
from ..tensor import decode_tensor, encode_tensor

_TOKEN = re.compile(r'\s*(?:(\()|(\))|("[^"]*")|([^\s()"]+))')


@dataclass(frozen=True)
class Key:
    id: int

    def __str__(self):
        return f"k:{self.id}"


@dataclass(frozen=True)
class Symbol:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True, eq=False)
class Expression:
    op: str
    args: tuple

    def __str__(self):
        return "(" + " ".join([self.op, *(format_arg(a) for a in self.args)]) + ")"

    def keys(self):
        """Every store key referenced anywhere in the tree."""
        for a in self.args:
            if isinstance(a, Key):
                yield a
            elif isinstance(a, Expression):
                yield from a.keys()


def format_arg(a):
    if isinstance(a, (Expression, Key, Symbol)):
        return str(a)
    if isinstance(a, np.ndarray):
        return "t:" + base64.b64encode(encode_tensor(a)).decode("ascii")
    if isinstance(a, str):
        if '"' in a:
            raise ValueError("strings may not contain double quotes")
        return f'"{a}"'
    if isinstance(a, bool):
        return str(int(a))
    if isinstance(a, (int, np.integer)):
        return str(int(a))
    if isinstance(a, (float, np.floating)):
        return repr(float(a))
    raise TypeError(f"cannot format {type(a).__name__} as an expression argument")


def tokenize(text):
    pos = 0
    tokens = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise FormatError(f"bad expression syntax at offset {pos}")
        tokens.append(m.group(m.lastindex))
        pos = m.end()
    return tokens


def _atom(tok):
    if tok.startswith('"'):
        return tok[1:-1]
    if tok.startswith("k:"):
        try:
            return Key(int(tok[2:]))
        except ValueError:
            raise FormatError(f"bad key literal {tok!r}") from None
    if tok.startswith("t:"):
        try:
            raw = base64.b64decode(tok[2:], validate=True)
        except ValueError:
            raise FormatError("bad base64 tensor literal") from None
        t, end = decode_tensor(raw)
        if end != len(raw):
            raise FormatError("trailing bytes in tensor literal")
        return t
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        return Symbol(tok)


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self):
        tok = self.peek()
        if tok is None:
            raise FormatError("unexpected end of expression")
        self.pos += 1
        return tok

    def expr(self):
        if self.take() != "(":
            raise FormatError("expression must start with '('")
        op = self.take()
        if op in ("(", ")") or op.startswith('"'):
            raise FormatError(f"bad operator {op!r}")
        args = []
        while self.peek() != ")":
            if self.peek() is None:
                raise FormatError("unbalanced parentheses")
            args.append(self.expr() if self.peek() == "(" else _atom(self.take()))
        self.take()
        return Expression(op, tuple(args))


def parse(text):
    p = _Parser(tokenize(text))
    e = p.expr()
    if p.peek() is not None:
        raise FormatError("trailing tokens after expression")
    return e


def E(op, *args):
    """Build an expression; handy for coordinator code."""
    return Expression(op, tuple(args))


__all__ = ["E", "Expression", "Key", "Symbol", "format_arg", "parse", "tokenize"]

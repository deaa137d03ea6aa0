"""Recursive-descent parser for the coordinate expression language.

Grammar::

    expr   := term (("+"|"-") term)*
    term   := factor (("*"|"/") factor)*
    factor := ["-"] atom ["^" ["-"] integer]
    atom   := number | ident | varref | jet | "(" expr ")" | func "(" expr ")"
    varref := ("q"|"x") "[" int "]" | ("v"|"w"|"p") "[" int "," int "]"
            | ("u"|"s") "[" int "," int "," int "]"
    jet    := ("d/dx[" int "]")+ "(" varref ")"

Numbers are decimals or integers; ``3/2`` reads as a quotient and folds to
an exact rational.
"""
from __future__ import annotations

import re
from fractions import Fraction

from .expr import (
    FUNCTIONS,
    ROLE_ARITY,
    Const,
    Func,
    JetRef,
    Param,
    Var,
    VarRef,
    add,
    mul,
    neg,
    power,
)


class ParseError(ValueError):
    def __init__(self, msg, offset):
        super().__init__(f"{msg} at offset {offset}")
        self.offset = offset


class IndexRangeError(ParseError):
    def __init__(self, ref, offset):
        ValueError.__init__(self, f"index out of range: {ref} at offset {offset}")
        self.offset = offset
        self.ref = ref


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<jet>d/dx\[)
  | (?P<num>\d+(?:\.\d*)?|\.\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),\[\]])
    """,
    re.VERBOSE,
)


def _tokenize(text):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


def _bounds(ref, n, k):
    r, ix = ref.role, ref.indices
    if r == "x":
        lims = (k,)
    elif r in ("q", "dq"):
        lims = (n,)
    elif r in ("v", "w"):
        lims = (n, k)
    elif r == "p":
        lims = (k, n)
    elif r == "s":
        lims = (n, k, k)
    else:  # u
        lims = (n, k, k)
    return all(1 <= i <= lim for i, lim in zip(ix, lims))


class _Parser:
    def __init__(self, text, n, k, allow_forms):
        self.toks = _tokenize(text)
        self.i = 0
        self.n, self.k = n, k
        self.allow_forms = allow_forms
        self.roles = set(ROLE_ARITY) - ({"dq"} if not allow_forms else set())

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None, kind=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            raise ParseError(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok[2])
        if kind is not None and tok[0] != kind:
            raise ParseError(f"expected {kind}, found {tok[1] or 'end of input'!r}", tok[2])
        self.i += 1
        return tok

    def parse(self):
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected {tok[1]!r}", tok[2])
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            t = self.term()
            e = add(e, t) if op == "+" else add(e, neg(t))
        return e

    def term(self):
        e = self.factor()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            f = self.factor()
            e = mul(e, f) if op == "*" else mul(e, power(f, -1))
        return e

    def factor(self):
        negate = False
        if self.peek()[1] == "-":
            self.take()
            negate = True
        a = self.atom()
        if self.peek()[1] == "^":
            self.take()
            sign = 1
            if self.peek()[1] == "-":
                self.take()
                sign = -1
            tok = self.take(kind="num")
            if not tok[1].isdigit():
                raise ParseError("exponent must be an integer", tok[2])
            a = power(a, sign * int(tok[1]))
        return neg(a) if negate else a

    def _indices(self):
        ix = [int(self.take(kind="num")[1])]
        while self.peek()[1] == ",":
            self.take()
            ix.append(int(self.take(kind="num")[1]))
        self.take("]")
        return tuple(ix)

    def varref(self, kind, text, pos):
        if kind != "ident" or text not in self.roles or self.peek()[1] != "[":
            raise ParseError("expected a coordinate such as q[1]", pos)
        self.take("[")
        ix = self._indices()
        if len(ix) != ROLE_ARITY[text]:
            raise ParseError(f"{text} takes {ROLE_ARITY[text]} indices", pos)
        ref = VarRef(text, ix)
        if self.n is not None and not _bounds(ref, self.n, self.k):
            raise IndexRangeError(ref, pos)
        return ref

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Const(Fraction(text))
        if kind == "jet":
            alphas = [self._jet_index(pos)]
            while self.peek()[0] == "jet":
                self.take()
                alphas.append(self._jet_index(pos))
            self.take("(")
            k2, t2, p2 = self.take()
            ref = self.varref(k2, t2, p2)
            self.take(")")
            if len(alphas) > 2:
                raise ParseError("at most second-order jets are supported", pos)
            return Var(JetRef(ref, tuple(alphas)))
        if text == "(":
            e = self.expr()
            self.take(")")
            return e
        if kind == "ident":
            if text in FUNCTIONS and self.peek()[1] == "(":
                self.take("(")
                e = self.expr()
                self.take(")")
                return Func(text, e)
            if text in self.roles and self.peek()[1] == "[":
                return Var(self.varref(kind, text, pos))
            return Param(text)
        raise ParseError(f"unexpected {text or 'end of input'!r}", pos)

    def _jet_index(self, pos):
        a = int(self.take(kind="num")[1])
        self.take("]")
        if self.k is not None and not 1 <= a <= self.k:
            raise IndexRangeError(f"d/dx[{a}]", pos)
        return a


def parse(text, chart=None, *, allow_forms=False):
    """Parse ``text``; ``chart`` (anything with ``n`` and ``k``) bounds indices.

    With ``allow_forms`` the basis covectors ``dq[i]`` are accepted as
    symbols so semi-basic one-forms can be read as linear expressions.
    """
    n = getattr(chart, "n", None)
    k = getattr(chart, "k", None)
    if isinstance(chart, tuple):
        n, k = chart
    return _Parser(text, n, k, allow_forms).parse()

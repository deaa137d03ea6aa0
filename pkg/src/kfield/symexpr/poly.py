"""Sparse distributed polynomials over the rationals.

A monomial is a tuple of ``(symbol, exponent)`` pairs sorted by
``leaf_sort_key``; symbols are VarRef/JetRef objects or parameter names.
Terms are ordered graded-lexicographically (highest first).
"""
from __future__ import annotations

from fractions import Fraction

from .expr import (
    Add,
    Const,
    Func,
    Mul,
    Neg,
    Param,
    Pow,
    Var,
    add,
    as_expr,
    leaf_sort_key,
    mul,
    power,
)


def _mono_mul(a, b):
    if not a:
        return b
    if not b:
        return a
    d = dict(a)
    for s, e in b:
        d[s] = d.get(s, 0) + e
    return tuple(sorted(d.items(), key=lambda t: leaf_sort_key(t[0])))


def _mono_div(a, b):
    """a / b if b divides a, else None."""
    d = dict(a)
    for s, e in b:
        if d.get(s, 0) < e:
            return None
        d[s] -= e
        if d[s] == 0:
            del d[s]
    return tuple(sorted(d.items(), key=lambda t: leaf_sort_key(t[0])))


def _mono_key(m):
    deg = sum(e for _, e in m)
    return (-deg, tuple((leaf_sort_key(s), -e) for s, e in m))


class Poly:
    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = {m: c for m, c in (terms or {}).items() if c != 0}

    @classmethod
    def constant(cls, c):
        return cls({(): Fraction(c)})

    @classmethod
    def symbol(cls, s):
        return cls({((s, 1),): Fraction(1)})

    def __eq__(self, other):
        if not isinstance(other, Poly):
            other = Poly.constant(other)
        return self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def is_zero(self):
        return not self.terms

    def is_constant(self):
        return all(m == () for m in self.terms)

    def constant_value(self):
        return self.terms.get((), Fraction(0))

    def symbols(self):
        return {s for m in self.terms for s, _ in m}

    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly.constant(other)
        t = dict(self.terms)
        for m, c in other.terms.items():
            t[m] = t.get(m, 0) + c
        return Poly(t)

    __radd__ = __add__

    def __neg__(self):
        return Poly({m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        if not isinstance(other, Poly):
            other = Poly.constant(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Poly):
            other = Poly.constant(other)
        t = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = _mono_mul(m1, m2)
                t[m] = t.get(m, 0) + c1 * c2
        return Poly(t)

    __rmul__ = __mul__

    def __pow__(self, n):
        if n < 0:
            raise ValueError("negative power of a polynomial")
        r = Poly.constant(1)
        b = self
        while n:
            if n & 1:
                r = r * b
            b = b * b
            n >>= 1
        return r

    def sorted_terms(self):
        return sorted(self.terms.items(), key=lambda t: _mono_key(t[0]))

    def leading(self):
        return self.sorted_terms()[0]

    def divexact(self, other):
        """Quotient of an exact division (raises if there is a remainder)."""
        if other.is_zero():
            raise ZeroDivisionError("polynomial division by zero")
        lm, lc = other.leading()
        rem = self
        quot = Poly()
        while not rem.is_zero():
            m, c = rem.leading()
            qm = _mono_div(m, lm)
            if qm is None:
                raise ArithmeticError("inexact polynomial division")
            t = Poly({qm: c / lc})
            quot = quot + t
            rem = rem - t * other
        return quot

    def to_expr(self):
        parts = []
        for m, c in self.sorted_terms():
            # parameters print as leading coefficients
            ordered = [t for t in m if isinstance(t[0], str)] + [t for t in m if not isinstance(t[0], str)]
            fs = [power(as_expr(s) if isinstance(s, str) else Var(s), e) for s, e in ordered]
            parts.append(mul(Const(c), *fs))
        return add(*parts)

    def __repr__(self):
        return f"Poly({self.to_expr()})"


def to_poly(e):
    """Polynomial form of ``e`` or None when ``e`` is not polynomial."""
    return _to_poly(e, {})


def _to_poly(e, memo):
    if e in memo:
        return memo[e]
    if isinstance(e, Const):
        r = Poly.constant(e.value)
    elif isinstance(e, Var):
        r = Poly.symbol(e.ref)
    elif isinstance(e, Param):
        r = Poly.symbol(e.name)
    elif isinstance(e, Add):
        r = Poly()
        for t in e.terms:
            pt = _to_poly(t, memo)
            if pt is None:
                r = None
                break
            r = r + pt
    elif isinstance(e, Mul):
        r = Poly.constant(1)
        for f in e.factors:
            pf = _to_poly(f, memo)
            if pf is None:
                r = None
                break
            r = r * pf
    elif isinstance(e, Pow):
        b = _to_poly(e.base, memo)
        if b is None:
            r = None
        elif e.exp >= 0:
            r = b**e.exp
        elif b.is_constant() and b.constant_value() != 0:
            r = Poly.constant(b.constant_value() ** e.exp)
        else:
            r = None
    elif isinstance(e, Neg):
        a = _to_poly(e.arg, memo)
        r = None if a is None else -a
    elif isinstance(e, Func):
        r = None
    else:  # pragma: no cover
        raise TypeError(type(e))
    memo[e] = r
    return r


def normalize(e):
    """Polynomial normal form when available, else the tree unchanged."""
    pe = to_poly(e)
    return e if pe is None else pe.to_expr()


def bareiss_det(matrix):
    """Fraction-free determinant of a square matrix of Poly entries."""
    a = [[x if isinstance(x, Poly) else Poly.constant(x) for x in row] for row in matrix]
    nrow = len(a)
    if nrow == 0:
        return Poly.constant(1)
    sign = 1
    prev = Poly.constant(1)
    for kk in range(nrow - 1):
        if a[kk][kk].is_zero():
            for r in range(kk + 1, nrow):
                if not a[r][kk].is_zero():
                    a[kk], a[r] = a[r], a[kk]
                    sign = -sign
                    break
            else:
                return Poly()
        for i in range(kk + 1, nrow):
            for j in range(kk + 1, nrow):
                a[i][j] = (a[i][j] * a[kk][kk] - a[i][kk] * a[kk][j]).divexact(prev)
        prev = a[kk][kk]
    det = a[-1][-1]
    return det if sign > 0 else -det

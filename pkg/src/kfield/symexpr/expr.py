"""Immutable expression trees over bundle coordinates.

Constants are exact rationals. Every constructor below goes through the
smart builders (``add``, ``mul``, ``power``, ``neg``) which flatten nested
sums/products and fold constants, so two routes to the same tree produce
equal (and equally hashed) objects.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

import numpy as np

ROLES = ("x", "q", "v", "p", "w", "s", "u")
ROLE_ARITY = {"x": 1, "q": 1, "v": 2, "p": 2, "w": 2, "s": 3, "u": 3, "dq": 1}
_ROLE_RANK = {r: i for i, r in enumerate(ROLES + ("dq",))}

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")

# named constants resolved at evaluation time when the assignment omits them
CONSTANTS = {"pi": math.pi}


class DomainError(ArithmeticError):
    """Evaluation left the real domain (log of nonpositive, 1/0, ...)."""


class MissingSymbolError(KeyError):
    pass


@dataclass(frozen=True)
class VarRef:
    """A chart coordinate: role plus index tuple.

    Index conventions: x[a], q[i], v[i,a], p[a,i], w[i,a] = (v_a)^i,
    s[i,b,a] = d v^i_b / dx^a, u[i,a,b] = (v_a)^b_i = d p^b_i / dx^a.
    """

    role: str
    indices: tuple

    def __post_init__(self):
        if self.role not in ROLE_ARITY:
            raise ValueError(f"unknown role {self.role!r}")
        if len(self.indices) != ROLE_ARITY[self.role]:
            raise ValueError(f"{self.role} takes {ROLE_ARITY[self.role]} indices")

    def __str__(self):
        return f"{self.role}[{','.join(str(i) for i in self.indices)}]"

    def sort_key(self):
        return (0, _ROLE_RANK[self.role], self.indices)


def q(i):
    return VarRef("q", (i,))


def x(a):
    return VarRef("x", (a,))


def v(i, a):
    return VarRef("v", (i, a))


def p(a, i):
    return VarRef("p", (a, i))


def w(i, a):
    return VarRef("w", (i, a))


def u(i, a, b):
    return VarRef("u", (i, a, b))


@dataclass(frozen=True)
class JetRef:
    """Formal total derivative D_a (or D_a D_b) of a field symbol."""

    var: VarRef
    alphas: tuple

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(sorted(self.alphas)))

    def __str__(self):
        return "".join(f"d/dx[{a}]" for a in self.alphas) + f"({self.var})"

    def sort_key(self):
        return (1, len(self.alphas), self.var.sort_key(), self.alphas)


def jet(var, *alphas):
    return JetRef(var, tuple(alphas))


def leaf_sort_key(key):
    """Total order on symbols: coordinates, then jets, then parameters."""
    if isinstance(key, str):
        return (2, key)
    return key.sort_key()


class Expr:
    __slots__ = ("_hash", "_str", "_free")

    def _key(self):
        raise NotImplementedError

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr) or type(self) is not type(other):
            return False
        return hash(self) == hash(other) and self._key() == other._key()

    def __hash__(self):
        try:
            return self._hash
        except AttributeError:
            h = hash((type(self).__name__, self._key()))
            object.__setattr__(self, "_hash", h)
            return h

    def __str__(self):
        try:
            return self._str
        except AttributeError:
            from .printer import to_string

            s = to_string(self)
            object.__setattr__(self, "_str", s)
            return s

    def __repr__(self):
        return f"Expr({str(self)!r})"

    # arithmetic sugar; python numbers are coerced to exact constants
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return mul(self, power(as_expr(other), -1))

    def __rtruediv__(self, other):
        return mul(as_expr(other), power(self, -1))

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        if not isinstance(n, int):
            raise TypeError("only integer powers are supported")
        return power(self, n)

    @property
    def free_symbols(self):
        try:
            return self._free
        except AttributeError:
            fs = self._compute_free()
            object.__setattr__(self, "_free", fs)
            return fs

    def _compute_free(self):
        out = set()
        for c in self.children():
            out |= c.free_symbols
        return frozenset(out)

    def children(self):
        return ()

    def is_zero(self):
        return isinstance(self, Const) and self.value == 0


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        if isinstance(value, float):
            raise TypeError("floating-point constants are not allowed in trees")
        object.__setattr__(self, "value", Fraction(value))

    def _key(self):
        return (self.value,)

    def _compute_free(self):
        return frozenset()


class Param(Expr):
    __slots__ = ("name",)

    def __init__(self, name):
        object.__setattr__(self, "name", name)

    def _key(self):
        return (self.name,)

    def _compute_free(self):
        return frozenset([self.name])


class Var(Expr):
    __slots__ = ("ref",)

    def __init__(self, ref):
        object.__setattr__(self, "ref", ref)

    def _key(self):
        return (self.ref,)

    def _compute_free(self):
        return frozenset([self.ref])


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms):
        object.__setattr__(self, "terms", tuple(terms))

    def _key(self):
        return self.terms

    def children(self):
        return self.terms


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors):
        object.__setattr__(self, "factors", tuple(factors))

    def _key(self):
        return self.factors

    def children(self):
        return self.factors


class Pow(Expr):
    __slots__ = ("base", "exp")

    def __init__(self, base, exp):
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "exp", int(exp))

    def _key(self):
        return (self.base, self.exp)

    def children(self):
        return (self.base,)


class Neg(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg):
        object.__setattr__(self, "arg", arg)

    def _key(self):
        return (self.arg,)

    def children(self):
        return (self.arg,)


class Func(Expr):
    __slots__ = ("name", "arg")

    def __init__(self, name, arg):
        if name not in FUNCTIONS:
            raise ValueError(f"unsupported function {name!r}")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "arg", arg)

    def _key(self):
        return (self.name, self.arg)

    def children(self):
        return (self.arg,)


ZERO = Const(0)
ONE = Const(1)


def as_expr(obj):
    if isinstance(obj, Expr):
        return obj
    if isinstance(obj, (VarRef, JetRef)):
        return Var(obj)
    if isinstance(obj, (int, Rational)):
        return Const(obj)
    if isinstance(obj, str):
        return Param(obj)
    raise TypeError(f"cannot convert {type(obj).__name__} to Expr")


def const(value):
    return Const(value)


def var(ref):
    return Var(ref)


def param(name):
    return Param(name)


def add(*args):
    terms = []
    c = Fraction(0)
    for a in args:
        a = as_expr(a)
        parts = a.terms if isinstance(a, Add) else (a,)
        for t in parts:
            if isinstance(t, Const):
                c += t.value
            else:
                terms.append(t)
    if c != 0:
        terms.append(Const(c))
    if not terms:
        return ZERO
    if len(terms) == 1:
        return terms[0]
    return Add(terms)


def mul(*args):
    factors = []
    c = Fraction(1)
    for a in args:
        a = as_expr(a)
        stack = [a]
        while stack:
            f = stack.pop(0)
            if isinstance(f, Mul):
                stack[0:0] = list(f.factors)
            elif isinstance(f, Neg):
                c = -c
                stack.insert(0, f.arg)
            elif isinstance(f, Const):
                c *= f.value
            else:
                factors.append(f)
    if c == 0:
        return ZERO
    if not factors:
        return Const(c)
    if c == 1:
        return factors[0] if len(factors) == 1 else Mul(factors)
    if c == -1 and len(factors) == 1:
        return Neg(factors[0])
    return Mul([Const(c)] + factors)


def power(base, n):
    base = as_expr(base)
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return base
    if isinstance(base, Const):
        if base.value == 0 and n < 0:
            raise DomainError("division by zero")
        return Const(base.value**n)
    if isinstance(base, Pow):
        return power(base.base, base.exp * n)
    return Pow(base, n)


def neg(a):
    a = as_expr(a)
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    if isinstance(a, Mul):
        return mul(Const(-1), a)
    return Neg(a)


def func(name, arg):
    return Func(name, as_expr(arg))


def sub(a, b):
    return add(a, neg(b))


def div(a, b):
    return mul(a, power(b, -1))


def total(exprs):
    return add(*exprs)


# --------------------------------------------------------------- differentiate

def differentiate(e, wrt):
    """Exact partial derivative of ``e`` with respect to a symbol.

    ``wrt`` is a VarRef, JetRef, or a parameter name.
    """
    if isinstance(wrt, Var):
        wrt = wrt.ref
    elif isinstance(wrt, Param):
        wrt = wrt.name
    return _diff(e, wrt, {})


def _diff(e, s, memo):
    if s not in e.free_symbols:
        return ZERO
    key = e
    if key in memo:
        return memo[key]
    if isinstance(e, Var):
        r = ONE
    elif isinstance(e, Param):
        r = ONE
    elif isinstance(e, Add):
        r = add(*(_diff(t, s, memo) for t in e.terms))
    elif isinstance(e, Mul):
        parts = []
        fs = e.factors
        for i, f in enumerate(fs):
            df = _diff(f, s, memo)
            if df.is_zero():
                continue
            parts.append(mul(*fs[:i], df, *fs[i + 1:]))
        r = add(*parts)
    elif isinstance(e, Pow):
        r = mul(Const(e.exp), power(e.base, e.exp - 1), _diff(e.base, s, memo))
    elif isinstance(e, Neg):
        r = neg(_diff(e.arg, s, memo))
    elif isinstance(e, Func):
        a = e.arg
        da = _diff(a, s, memo)
        if e.name == "sin":
            r = mul(Func("cos", a), da)
        elif e.name == "cos":
            r = neg(mul(Func("sin", a), da))
        elif e.name == "exp":
            r = mul(e, da)
        elif e.name == "log":
            r = mul(da, power(a, -1))
        else:  # sqrt
            r = mul(Const(Fraction(1, 2)), da, power(e, -1))
    else:  # pragma: no cover
        raise TypeError(type(e))
    memo[key] = r
    return r


# ----------------------------------------------------------------- substitute

def subs(e, mapping):
    """Replace symbols (VarRef/JetRef/param name) by expressions."""
    m = {}
    for k, val in mapping.items():
        if isinstance(k, Var):
            k = k.ref
        elif isinstance(k, Param):
            k = k.name
        m[k] = as_expr(val)
    if not m:
        return e
    keys = frozenset(m)
    return _subs(e, m, keys, {})


def _subs(e, m, keys, memo):
    if not (e.free_symbols & keys):
        return e
    if e in memo:
        return memo[e]
    if isinstance(e, Var):
        r = m[e.ref]
    elif isinstance(e, Param):
        r = m[e.name]
    elif isinstance(e, Add):
        r = add(*(_subs(t, m, keys, memo) for t in e.terms))
    elif isinstance(e, Mul):
        r = mul(*(_subs(t, m, keys, memo) for t in e.factors))
    elif isinstance(e, Pow):
        r = power(_subs(e.base, m, keys, memo), e.exp)
    elif isinstance(e, Neg):
        r = neg(_subs(e.arg, m, keys, memo))
    elif isinstance(e, Func):
        r = Func(e.name, _subs(e.arg, m, keys, memo))
    else:  # pragma: no cover
        raise TypeError(type(e))
    memo[e] = r
    return r


def free_refs(e):
    """Coordinate and jet symbols (parameters excluded)."""
    return {s for s in e.free_symbols if not isinstance(s, str)}


def free_params(e):
    return {s for s in e.free_symbols if isinstance(s, str)}


# ------------------------------------------------------------------- evaluate

def evaluate(e, assignment, min_denominator=0.0):
    """Evaluate numerically; values may be floats or numpy arrays.

    ``assignment`` maps VarRef/JetRef/parameter-name to a value. Named
    constants such as ``pi`` fall back to their numeric value.
    ``min_denominator`` turns near-singular divisions into DomainError.
    """
    return _eval(e, assignment, min_denominator, {})


def _bad(mask):
    return bool(np.any(mask))


def _eval(e, a, tiny, memo):
    if isinstance(e, Const):
        return float(e.value)
    if e in memo:
        return memo[e]
    if isinstance(e, Var):
        try:
            r = a[e.ref]
        except KeyError:
            raise MissingSymbolError(str(e.ref)) from None
    elif isinstance(e, Param):
        if e.name in a:
            r = a[e.name]
        elif e.name in CONSTANTS:
            r = CONSTANTS[e.name]
        else:
            raise MissingSymbolError(e.name)
    elif isinstance(e, Add):
        r = _eval(e.terms[0], a, tiny, memo)
        for t in e.terms[1:]:
            r = r + _eval(t, a, tiny, memo)
    elif isinstance(e, Mul):
        r = _eval(e.factors[0], a, tiny, memo)
        for f in e.factors[1:]:
            r = r * _eval(f, a, tiny, memo)
    elif isinstance(e, Pow):
        b = _eval(e.base, a, tiny, memo)
        if e.exp < 0:
            if _bad(np.abs(b) <= tiny):
                raise DomainError(f"division by (near) zero in {e}")
            r = 1.0 / b ** (-e.exp)
        else:
            r = b**e.exp
    elif isinstance(e, Neg):
        r = -_eval(e.arg, a, tiny, memo)
    elif isinstance(e, Func):
        arg = _eval(e.arg, a, tiny, memo)
        if e.name == "log":
            if _bad(np.asarray(arg) <= 0):
                raise DomainError(f"log of nonpositive value in {e}")
            r = np.log(arg)
        elif e.name == "sqrt":
            if _bad(np.asarray(arg) < 0):
                raise DomainError(f"sqrt of negative value in {e}")
            r = np.sqrt(arg)
        else:
            r = getattr(np, e.name)(arg)
    else:  # pragma: no cover
        raise TypeError(type(e))
    memo[e] = r
    return r

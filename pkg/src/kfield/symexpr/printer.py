"""Text rendering that the parser reads back to the identical tree."""
from __future__ import annotations

from .expr import Add, Const, Func, Mul, Neg, Param, Pow, Var


def _const(c):
    v = c.value
    if v.denominator == 1:
        return str(v.numerator)
    return f"{v.numerator}/{v.denominator}"


def _atom(e):
    """Render so the result is a grammar atom (safe under ^ and unary -)."""
    if isinstance(e, (Var, Param, Func)):
        return to_string(e)
    if isinstance(e, Const) and e.value >= 0 and e.value.denominator == 1:
        return _const(e)
    return f"({to_string(e)})"


def _factor(e):
    """Render as something usable between '*' signs."""
    if isinstance(e, (Add, Neg)):
        return f"({to_string(e)})"
    if isinstance(e, Pow) and e.exp < 0:
        return f"({to_string(e)})"
    return to_string(e)


def _pow(e):
    if e.exp < 0:
        return f"1/{_atom(e.base)}" + ("" if e.exp == -1 else f"^{-e.exp}")
    return f"{_atom(e.base)}^{e.exp}"


def _mul(e):
    out = ""
    first = True
    fs = list(e.factors)
    if isinstance(fs[0], Const):
        c = fs.pop(0)
        out = "-" if c.value == -1 else _const(c)
        if c.value not in (1, -1):
            first = False
        elif c.value == -1 and fs and isinstance(fs[0], Pow) and fs[0].exp < 0:
            out = "-1"
            first = False
    for f in fs:
        if isinstance(f, Pow) and f.exp < 0:
            den = _atom(f.base) + ("" if f.exp == -1 else f"^{-f.exp}")
            out += ("1/" if first and out in ("", "-") and out != "-1" else "/") + den
        else:
            out += ("" if first else "*") + _factor(f)
        first = False
    return out


def _is_negative(t):
    if isinstance(t, Neg):
        return True
    if isinstance(t, Mul) and isinstance(t.factors[0], Const) and t.factors[0].value < 0:
        return True
    if isinstance(t, Const) and t.value < 0:
        return True
    return False


def to_string(e):
    if isinstance(e, Const):
        return _const(e)
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Var):
        return str(e.ref)
    if isinstance(e, Func):
        return f"{e.name}({to_string(e.arg)})"
    if isinstance(e, Pow):
        return _pow(e)
    if isinstance(e, Neg):
        a = e.arg
        if isinstance(a, (Var, Param, Func)) or (isinstance(a, Pow) and a.exp > 0):
            return "-" + to_string(a)
        if isinstance(a, Pow):
            return "-" + to_string(a)
        return f"-({to_string(a)})"
    if isinstance(e, Mul):
        return _mul(e)
    if isinstance(e, Add):
        parts = []
        for i, t in enumerate(e.terms):
            if i and _is_negative(t):
                s = to_string(t)
                parts.append(" - " + s[1:])
            elif i:
                parts.append(" + " + to_string(t))
            else:
                parts.append(to_string(t))
        return "".join(parts)
    raise TypeError(type(e))  # pragma: no cover

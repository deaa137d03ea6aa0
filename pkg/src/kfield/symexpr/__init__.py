"""Minimal computer-algebra core over bundle coordinates."""
from .equivalence import Equivalence, equivalent
from .expr import (
    CONSTANTS,
    FUNCTIONS,
    ONE,
    ROLES,
    ZERO,
    Add,
    Const,
    DomainError,
    Expr,
    Func,
    JetRef,
    MissingSymbolError,
    Mul,
    Neg,
    Param,
    Pow,
    Var,
    VarRef,
    add,
    as_expr,
    const,
    differentiate,
    div,
    evaluate,
    free_params,
    free_refs,
    func,
    jet,
    leaf_sort_key,
    mul,
    neg,
    param,
    power,
    p,
    q,
    sub,
    subs,
    u,
    v,
    var,
    w,
    x,
)
from .parser import IndexRangeError, ParseError, parse
from .poly import Poly, bareiss_det, normalize, to_poly
from .printer import to_string

__all__ = [name for name in dir() if not name.startswith("_")]

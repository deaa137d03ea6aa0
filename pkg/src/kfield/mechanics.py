"""Legendre transformation, Hessian regularity, energies and the Hamiltonian."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .symexpr import (
    Const,
    Poly,
    Var,
    VarRef,
    add,
    bareiss_det,
    differentiate,
    evaluate,
    free_refs,
    mul,
    normalize,
    power,
    sub,
    subs,
    to_poly,
)

PIVOT_RTOL = 1e-10


class NotHyperregular(ArithmeticError):
    """The velocity Hessian is singular, so FL cannot be inverted."""


class UnsupportedForm(ValueError):
    """The Lagrangian is not quadratic-plus-linear in the velocities."""


def velocity_refs(n, k):
    """(i, alpha) pairs in chart order: v^1_1, v^2_1, ..., v^n_k."""
    return [VarRef("v", (i, a)) for a in range(1, k + 1) for i in range(1, n + 1)]


def momentum_of(vref):
    i, a = vref.indices
    return VarRef("p", (a, i))


def _roles(e):
    return {r.role if isinstance(r, VarRef) else "jet" for r in free_refs(e)}


@dataclass
class LagrangianProblem:
    n: int
    k: int
    L: object
    params: dict = field(default_factory=dict)
    body_force: list = None
    constraints: object = None

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise ValueError("n and k must be positive")
        bad = _roles(self.L) - {"q", "v"}
        if bad:
            raise ValueError(f"Lagrangian may depend on q and v only, found roles {sorted(bad)}")
        if self.body_force is not None:
            if len(self.body_force) != self.n:
                raise ValueError(f"body force needs {self.n} components")
            for f in self.body_force:
                bad = _roles(f) - {"q", "x"}
                if bad:
                    raise ValueError(f"body force may depend on x and q only, found roles {sorted(bad)}")

    @property
    def m(self):
        return 0 if self.constraints is None else self.constraints.m

    def lagrangian(self):
        """L plus the body-force term sum_i f_i q^i when present."""
        if not self.body_force:
            return self.L
        return add(self.L, *[mul(f, Var(VarRef("q", (i,)))) for i, f in enumerate(self.body_force, start=1)])

    def without_body_force(self):
        return LagrangianProblem(self.n, self.k, self.L, dict(self.params), None, self.constraints)

    def with_params(self, values):
        """Copy with numeric parameter values substituted as exact rationals."""
        mapping = {name: Const(_fraction(val)) for name, val in values.items()}
        bf = None if self.body_force is None else [subs(f, mapping) for f in self.body_force]
        cons = self.constraints.substitute(mapping) if self.constraints is not None else None
        rest = {k: val for k, val in self.params.items() if k not in values}
        return LagrangianProblem(self.n, self.k, subs(self.L, mapping), rest, bf, cons)


def _fraction(val):
    if isinstance(val, (int, Fraction)):
        return Fraction(val)
    return Fraction(str(val))


@dataclass
class LegendreMap:
    momenta: dict  # VarRef p[a,i] -> Expr

    def __getitem__(self, pref):
        return self.momenta[pref]

    def as_substitution(self):
        return dict(self.momenta)


def legendre_map(P):
    L = P.lagrangian()
    return LegendreMap({momentum_of(vr): normalize(differentiate(L, vr)) for vr in velocity_refs(P.n, P.k)})


@dataclass
class RegularityReport:
    hessian: list
    determinant: object  # Expr or "non-polynomial"
    verdict: str = None
    rank: int = None

    @property
    def size(self):
        return len(self.hessian)


def _hessian(P):
    L = P.lagrangian()
    vs = velocity_refs(P.n, P.k)
    first = [differentiate(L, a) for a in vs]
    return [[normalize(differentiate(first[r], b)) for b in vs] for r in range(len(vs))]


def factor_content(pe):
    """Split a polynomial as monomial-content * primitive part, as an Expr."""
    if pe.is_zero() or len(pe.terms) == 1:
        return pe.to_expr()
    common = None
    for m in pe.terms:
        d = dict(m)
        common = d if common is None else {s: min(e, d[s]) for s, e in common.items() if s in d}
    if not common:
        return pe.to_expr()
    content = Poly({tuple(sorted(common.items(), key=lambda t: _sym_key(t[0]))): Fraction(1)})
    rest = pe.divexact(content)
    return mul(content.to_expr(), rest.to_expr())


def _sym_key(s):
    from .symexpr import leaf_sort_key

    return leaf_sort_key(s)


def numeric_rank(matrix, rtol=PIVOT_RTOL):
    """Rank by Gaussian elimination with full pivoting."""
    a = np.array(matrix, dtype=float)
    if a.size == 0:
        return 0
    scale = np.max(np.abs(a))
    if scale == 0:
        return 0
    tol = rtol * scale
    rank = 0
    rows, cols = a.shape
    for r in range(min(rows, cols)):
        sub_a = np.abs(a[r:, r:])
        i, j = np.unravel_index(np.argmax(sub_a), sub_a.shape)
        if sub_a[i, j] <= tol:
            break
        a[[r, r + i]] = a[[r + i, r]]
        a[:, [r, r + j]] = a[:, [r + j, r]]
        a[r + 1:, r:] -= np.outer(a[r + 1:, r] / a[r, r], a[r, r:])
        rank += 1
    return rank


def velocity_hessian(P, at=None):
    H = _hessian(P)
    polys = [[to_poly(e) for e in row] for row in H]
    if all(pe is not None for row in polys for pe in row):
        det = factor_content(bareiss_det(polys))
    else:
        det = "non-polynomial"
    report = RegularityReport(H, det)
    if at is not None:
        env = dict(P.params)
        env.update(at)
        num = [[float(evaluate(e, env)) for e in row] for row in H]
        report.rank = numeric_rank(num)
        report.verdict = "regular" if report.rank == len(H) else "singular"
    return report


def generalized_energy(P, flavor="pontryagin"):
    L = P.lagrangian()
    vs = velocity_refs(P.n, P.k)
    if flavor == "pontryagin":
        pv = [mul(Var(momentum_of(vr)), Var(vr)) for vr in vs]
    elif flavor == "lagrangian":
        pv = [mul(differentiate(L, vr), Var(vr)) for vr in vs]
    else:
        raise ValueError(f"unknown energy flavor {flavor!r}")
    return normalize(sub(add(*pv), L))


def _quadratic_parts(P):
    """L = 1/2 v.A.v + b.v + c with A v-free; returns (A as Polys, b, c)."""
    L = P.lagrangian()
    vs = velocity_refs(P.n, P.k)
    zero_v = {vr: Const(0) for vr in vs}
    H = _hessian(P)
    A = []
    for row in H:
        prow = []
        for e in row:
            if any(r.role == "v" for r in free_refs(e) if isinstance(r, VarRef)):
                raise UnsupportedForm("velocity Hessian depends on v; only v-quadratic Lagrangians are inverted")
            pe = to_poly(e)
            if pe is None:
                raise UnsupportedForm(f"non-polynomial Hessian entry {e}")
            prow.append(pe)
        A.append(prow)
    b = [normalize(subs(differentiate(L, vr), zero_v)) for vr in vs]
    c = normalize(subs(L, zero_v))
    return vs, A, b, c


def _minor(A, r, c):
    return [[A[i][j] for j in range(len(A)) if j != c] for i in range(len(A)) if i != r]


def _over(num_poly_expr, det):
    if det.is_constant():
        return mul(Const(1 / det.constant_value()), num_poly_expr)
    return mul(num_poly_expr, power(det.to_expr(), -1))


def inverse_legendre(P):
    """v^i_a as expressions in (q, p): the map FL^{-1} for v-quadratic L."""
    vs, A, b, _ = _quadratic_parts(P)
    det = bareiss_det(A)
    if det.is_zero():
        raise NotHyperregular("velocity Hessian determinant vanishes identically")
    N = len(vs)
    rhs = [sub(Var(momentum_of(vr)), b[j]) for j, vr in enumerate(vs)]
    out = {}
    for j, vr in enumerate(vs):
        terms = []
        for i in range(N):
            cof = bareiss_det(_minor(A, i, j)) if N > 1 else Poly.constant(1)
            if (i + j) % 2:
                cof = -cof
            if not cof.is_zero():
                terms.append(mul(cof.to_expr(), rhs[i]))
        out[vr] = normalize(_over(add(*terms), det))
    return out


def hamiltonian_from_lagrangian(P):
    """H = E_L o FL^{-1}; for quadratic L this is 1/2 (p-b).v(p) - c."""
    vs, A, b, c = _quadratic_parts(P)
    vinv = inverse_legendre(P)
    half = [mul(Const(Fraction(1, 2)), sub(Var(momentum_of(vr)), b[j]), vinv[vr]) for j, vr in enumerate(vs)]
    return normalize(sub(add(*half), c))

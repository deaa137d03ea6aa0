"""Symbolic derivation of the field equations and intrinsic residual evaluation.

Rows are written in field notation: q[i] is phi^i(x), v[i,a] is phi^i_a(x),
p[a,i] is psi^a_i(x), and d/dx[a](...) is a partial derivative along the
field. Multipliers lambda^A_a appear as parameters ``lambda_A_a``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import Bundle, DiscreteField, Grid, make_chart, prolong_discrete
from .mechanics import (
    hamiltonian_from_lagrangian,
    inverse_legendre,
    legendre_map,
    momentum_of,
    numeric_rank,
    velocity_refs,
)
from .symexpr import (
    ZERO,
    Const,
    JetRef,
    Param,
    Var,
    VarRef,
    add,
    differentiate,
    evaluate,
    free_refs,
    mul,
    neg,
    normalize,
    parse,
    sub,
    subs,
)

KIND_ORDER = (
    "velocity-definition",
    "momentum-definition",
    "balance",
    "constraint",
    "hdw-position",
    "hdw-momentum",
)

RANK_TOL = 1e-10
RANK_PROBES = 3


class RankDeficient(ValueError):
    pass


class ChartMismatch(ValueError):
    pass


def multiplier_name(A, alpha):
    return f"lambda_{A}_{alpha}"


def multiplier_param(A, alpha):
    return Param(multiplier_name(A, alpha))


# ------------------------------------------------------------------ systems

@dataclass
class Row:
    kind: str
    indices: tuple
    lhs: object
    rhs: object
    multipliers: list = field(default_factory=list)  # [((A, alpha), coeff)]

    def residual(self, with_multipliers=True):
        r = sub(self.lhs, self.rhs)
        if with_multipliers and self.multipliers:
            r = sub(r, add(*[mul(multiplier_param(A, a), c) for (A, a), c in self.multipliers]))
        return r

    def render(self):
        parts = [str(self.rhs)] if self.rhs != ZERO or not self.multipliers else []
        for (A, a), c in self.multipliers:
            name = multiplier_name(A, a)
            parts.append(name if c == Const(1) else f"{name}*({c})")
        return f"{self.kind}: {self.lhs} = {' + '.join(parts)}"

    def to_tree(self):
        return {
            "kind": self.kind,
            "indices": list(self.indices),
            "lhs": str(self.lhs),
            "rhs": str(self.rhs),
            "multipliers": [{"A": A, "alpha": a, "coefficient": str(c)} for (A, a), c in self.multipliers],
        }


@dataclass
class PdeSystem:
    name: str
    n: int
    k: int
    rows: list
    params: dict = field(default_factory=dict)  # default parameter values

    def __post_init__(self):
        self.rows.sort(key=lambda r: (KIND_ORDER.index(r.kind), r.indices))

    def of_kind(self, kind):
        return [r for r in self.rows if r.kind == kind]

    def count(self, kind):
        return len(self.of_kind(kind))

    def residuals(self, with_multipliers=True):
        return [r.residual(with_multipliers) for r in self.rows]

    def render_text(self):
        return "\n".join(r.render() for r in self.rows) + "\n"

    def to_tree(self):
        return {"system": self.name, "n": self.n, "k": self.k, "rows": [r.to_tree() for r in self.rows]}

    def render_tree(self):
        return json.dumps(self.to_tree(), indent=2, sort_keys=True) + "\n"


# -------------------------------------------------------------- constraints

class ConstraintSet:
    """Constraint functions Phi_A(q, v) with semi-basic forms eta_A = (eta^1_A, ..., eta^k_A).

    ``eta[A][a]`` is a list of n coefficient expressions (eta^a_A)_i.
    """

    def __init__(self, n, k, phis, eta):
        self.n, self.k = n, k
        self.phis = list(phis)
        self.eta = [[list(row) for row in ea] for ea in eta]
        if len(self.eta) != len(self.phis):
            raise ValueError("need one eta form per constraint function")
        for ea in self.eta:
            if len(ea) != k or any(len(row) != n for row in ea):
                raise ValueError(f"each eta form needs {k} slots of {n} coefficients")

    @property
    def m(self):
        return len(self.phis)

    @classmethod
    def empty(cls, n, k):
        return cls(n, k, [], [])

    @classmethod
    def from_strings(cls, n, k, phi_strings, eta_strings):
        """``eta_strings[A]`` holds k one-form strings in dq[i] syntax."""
        phis = [parse(s, (n, k)) for s in phi_strings]
        eta = []
        for forms in eta_strings:
            if len(forms) != k:
                raise ValueError(f"eta needs {k} one-forms, got {len(forms)}")
            eta.append([one_form_coefficients(s, n, k) for s in forms])
        return cls(n, k, phis, eta)

    def substitute(self, mapping):
        return ConstraintSet(
            self.n,
            self.k,
            [subs(f, mapping) for f in self.phis],
            [[[subs(c, mapping) for c in row] for row in ea] for ea in self.eta],
        )

    def coefficient_matrix(self):
        """m x (k n) matrix of (eta^a_A)_i."""
        return [[c for row in ea for c in row] for ea in self.eta]

    def check_rank(self, params=None, seed=0):
        if self.m == 0:
            return
        mat = self.coefficient_matrix()
        syms = set()
        for row in mat:
            for c in row:
                syms |= c.free_symbols
        rng = np.random.default_rng(seed)
        params = dict(params or {})
        for _ in range(RANK_PROBES):
            env = {s: params[s] if s in params else float(rng.uniform(0.5, 1.5)) for s in syms}
            num = [[float(evaluate(c, env)) for c in row] for row in mat]
            if numeric_rank(num, RANK_TOL) < self.m:
                raise RankDeficient(f"constraint forms have rank below m={self.m} at a probe point")


def one_form_coefficients(text, n, k):
    """Coefficients (a_1, ..., a_n) of a semi-basic form a_i dq[i]."""
    e = parse(text, (n, k), allow_forms=True)
    dqs = [VarRef("dq", (i,)) for i in range(1, n + 1)]
    coeffs = [normalize(differentiate(e, d)) for d in dqs]
    rest = normalize(subs(e, {d: Const(0) for d in dqs}))
    if rest != ZERO or any(r.role == "dq" for c in coeffs for r in free_refs(c) if isinstance(r, VarRef)):
        raise ValueError(f"{text!r} is not linear in the dq[i]")
    return coeffs


def distribution_constraints(one_forms, n, k):
    """Constraints v^i_a (psi^a_l)_i = 0 from per-direction lists of 1-forms on Q.

    ``one_forms[a-1]`` is the list of forms for direction a, each given as a
    dq[i] string or as a list of n coefficient expressions.
    """
    if len(one_forms) != k:
        raise ValueError(f"need one list of forms per direction (k={k})")
    phis, eta = [], []
    for a, forms in enumerate(one_forms, start=1):
        for f in forms:
            coeffs = one_form_coefficients(f, n, k) if isinstance(f, str) else [normalize(c) for c in f]
            for c in coeffs:
                bad = [r for r in free_refs(c) if not (isinstance(r, VarRef) and r.role == "q")]
                if bad:
                    raise ValueError(f"distribution form coefficients must depend on q only, found {bad}")
            phis.append(normalize(add(*[mul(c, Var(VarRef("v", (i, a)))) for i, c in enumerate(coeffs, start=1)])))
            slots = [[Const(0)] * n for _ in range(k)]
            slots[a - 1] = coeffs
            eta.append(slots)
    return ConstraintSet(n, k, phis, eta)


# ------------------------------------------------------- total derivatives

def total_derivative(f, alpha):
    """D_alpha along a field: chain rule over x, field symbols and first jets."""
    terms = []
    for s in free_refs(f):
        df = differentiate(f, s)
        if isinstance(s, VarRef):
            if s.role == "x":
                if s.indices[0] == alpha:
                    terms.append(df)
                continue
            terms.append(mul(df, Var(JetRef(s, (alpha,)))))
        else:
            if len(s.alphas) != 1:
                raise ValueError("total derivatives beyond second order are not supported")
            terms.append(mul(df, Var(JetRef(s.var, s.alphas + (alpha,)))))
    return add(*terms)


def along_prolongation(e, n, k):
    """Substitute v^i_a -> d/dx[a](q[i])."""
    return subs(e, {VarRef("v", (i, a)): Var(JetRef(VarRef("q", (i,)), (a,))) for i in range(1, n + 1) for a in range(1, k + 1)})


# ------------------------------------------------------------- derivations

def derive_el(P):
    n, k = P.n, P.k
    L = along_prolongation(P.lagrangian(), n, k)
    Lraw = P.lagrangian()
    rows = []
    for i in range(1, n + 1):
        parts = []
        for a in range(1, k + 1):
            dv = along_prolongation(differentiate(Lraw, VarRef("v", (i, a))), n, k)
            parts.append(total_derivative(dv, a))
        lhs = normalize(sub(add(*parts), differentiate(L, VarRef("q", (i,)))))
        rows.append(Row("balance", (i,), lhs, ZERO))
    return PdeSystem("el", n, k, rows, dict(P.params))


def _multiplier_terms(cons, i, transform=None):
    out = []
    if cons is None:
        return out
    for A in range(1, cons.m + 1):
        for a in range(1, cons.k + 1):
            c = cons.eta[A - 1][a - 1][i - 1]
            if transform is not None:
                c = transform(c)
            c = normalize(c)
            if c != ZERO:
                out.append(((A, a), c))
    return out


def _implicit_rows(P, cons):
    n, k = P.n, P.k
    L = P.lagrangian()
    rows = []
    for a in range(1, k + 1):
        for i in range(1, n + 1):
            rows.append(Row("velocity-definition", (i, a), Var(VarRef("v", (i, a))), Var(JetRef(VarRef("q", (i,)), (a,)))))
    for pref, P_ai in legendre_map(P).momenta.items():
        rows.append(Row("momentum-definition", pref.indices, Var(pref), P_ai))
    for i in range(1, n + 1):
        div = add(*[Var(JetRef(VarRef("p", (a, i)), (a,))) for a in range(1, k + 1)])
        rows.append(Row("balance", (i,), div, normalize(differentiate(L, VarRef("q", (i,)))), _multiplier_terms(cons, i)))
    if cons is not None:
        for A, phi in enumerate(cons.phis, start=1):
            rows.append(Row("constraint", (A,), normalize(phi), ZERO))
    return rows


def derive_implicit_el(P):
    return PdeSystem("implicit-el", P.n, P.k, _implicit_rows(P, None), dict(P.params))


def derive_nh_implicit_el(P, constraints=None, check_rank=True):
    cons = constraints if constraints is not None else P.constraints
    if cons is None:
        cons = ConstraintSet.empty(P.n, P.k)
    if check_rank:
        cons.check_rank(P.params)
    return PdeSystem("nh-el", P.n, P.k, _implicit_rows(P, cons if cons.m else None), dict(P.params))


def _role_check(H, allowed):
    bad = {r.role if isinstance(r, VarRef) else "jet" for r in free_refs(H)} - set(allowed)
    if bad:
        raise ValueError(f"Hamiltonian may depend on q and p only, found roles {sorted(bad)}")


def _hdw_rows(H, n, k):
    rows = []
    for a in range(1, k + 1):
        for i in range(1, n + 1):
            rows.append(Row("hdw-position", (i, a), Var(JetRef(VarRef("q", (i,)), (a,))), normalize(differentiate(H, VarRef("p", (a, i))))))
    for i in range(1, n + 1):
        div = add(*[Var(JetRef(VarRef("p", (a, i)), (a,))) for a in range(1, k + 1)])
        rows.append(Row("hdw-momentum", (i,), div, normalize(neg(differentiate(H, VarRef("q", (i,)))))))
    return rows


def derive_hdw(H, n, k):
    _role_check(H, ("q", "p"))
    return PdeSystem("hdw", n, k, _hdw_rows(H, n, k))


def derive_nh_hdw(P, constraints=None):
    cons = constraints if constraints is not None else P.constraints
    H = hamiltonian_from_lagrangian(P)
    n, k = P.n, P.k
    rows = _hdw_rows(H, n, k)
    if cons is None or cons.m == 0:
        return PdeSystem("nh-hdw", n, k, rows, dict(P.params))
    vinv = inverse_legendre(P)

    def to_momenta(e):
        return subs(e, vinv)

    for r in rows:
        if r.kind == "hdw-momentum":
            r.multipliers = _multiplier_terms(cons, r.indices[0], to_momenta)
    for A, phi in enumerate(cons.phis, start=1):
        rows.append(Row("constraint", (A,), normalize(to_momenta(phi)), ZERO))
    return PdeSystem("nh-hdw", n, k, rows, dict(P.params))


# --------------------------------------------------------------- elimination

def _momentum_substitution(P):
    """p^a_i -> dL/dv^i_a along the prolongation, with its first jets."""
    n, k = P.n, P.k
    mom = {pref: along_prolongation(e, n, k) for pref, e in legendre_map(P).momenta.items()}
    m = dict(mom)
    for pref, e in mom.items():
        for b in range(1, k + 1):
            m[JetRef(pref, (b,))] = total_derivative(e, b)
    return m


def _jet_substitution(n, k):
    m = {}
    for i in range(1, n + 1):
        for a in range(1, k + 1):
            m[VarRef("v", (i, a))] = Var(JetRef(VarRef("q", (i,)), (a,)))
            for b in range(1, k + 1):
                m[JetRef(VarRef("v", (i, a)), (b,))] = Var(JetRef(VarRef("q", (i,)), (a, b)))
    return m


def eliminate_definitions(system, P):
    """Drop velocity/momentum definition rows by substitution.

    Returns balance rows (residual form, right side 0) and constraint rows in
    terms of q and its jets, directly comparable with ``derive_el``.
    """
    n, k = system.n, system.k
    pm = _momentum_substitution(P)
    vm = _jet_substitution(n, k)

    def elim(e):
        return normalize(subs(subs(e, pm), vm))

    rows = []
    for r in system.rows:
        if r.kind in ("balance", "constraint", "hdw-momentum"):
            lhs = elim(r.residual(with_multipliers=False))
            mult = [(ix, elim(c)) for ix, c in r.multipliers]
            rows.append(Row("balance" if r.kind != "constraint" else "constraint", r.indices, lhs, ZERO, mult))
    return PdeSystem(system.name + "-eliminated", n, k, rows, dict(system.params))


def eliminate_hdw(system, P):
    """Map p -> FL(q, Dq) in an HdDW system; position rows become identities."""
    n, k = system.n, system.k
    pm = _momentum_substitution(P)
    vm = _jet_substitution(n, k)
    rows = []
    for r in system.rows:
        e = normalize(subs(subs(r.residual(with_multipliers=False), pm), vm))
        kind = "balance" if r.kind == "hdw-momentum" else r.kind
        rows.append(Row(kind, r.indices, e, ZERO, list(r.multipliers)))
    return PdeSystem(system.name + "-eliminated", n, k, rows, dict(system.params))


# ----------------------------------------------------------- residual forms

RESIDUAL_CHARTS = {
    "lambda-el": Bundle.COTANGENT,
    "chi-hdw": Bundle.COTANGENT,
    "chi-implicit": Bundle.PONTRYAGIN,
    "chi-nonholonomic": Bundle.PONTRYAGIN,
}


@dataclass
class MultiplierField:
    """lambda^A_a on a grid: values of shape (m, k, *grid.sizes)."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 + self.grid.k or self.values.shape[2:] != self.grid.sizes:
            raise ValueError("multiplier values must have shape (m, k, *grid sizes)")

    @property
    def m(self):
        return self.values.shape[0]


@dataclass
class ResidualReport:
    which: str
    coefficients: dict  # basis label -> array over interior nodes
    groups: dict  # group name -> list of basis labels

    def max_norm(self, group=None):
        labels = self.groups[group] if group else list(self.coefficients)
        return max((float(np.max(np.abs(self.coefficients[b]))) for b in labels), default=0.0)

    def rms(self, group=None):
        labels = self.groups[group] if group else list(self.coefficients)
        if not labels:
            return 0.0
        sq = np.concatenate([np.ravel(self.coefficients[b]) ** 2 for b in labels])
        return float(np.sqrt(np.mean(sq)))

    def summary(self):
        out = {"max": self.max_norm(), "rms": self.rms()}
        for g in self.groups:
            out[f"{g}.max"] = self.max_norm(g)
            out[f"{g}.rms"] = self.rms(g)
        return out


def interior_block(f, width=1):
    """Restrict a field to its interior nodes (drops a ``width``-node layer)."""
    sl = f.grid.interior(width)
    g = f.grid
    sub_grid = Grid(
        tuple(s - 2 * width for s in g.sizes),
        g.spacings,
        tuple(o + width * h for o, h in zip(g.origin, g.spacings)),
    )
    return DiscreteField(f.chart, sub_grid, f.values[sl])


def _env_from(fld, params):
    env = dict(params)
    env.update(fld.assignment())
    return env


def _ev(e, env, shape):
    return np.broadcast_to(np.asarray(evaluate(e, env), dtype=float), shape)


def intrinsic_residual(which, problem, fld, multipliers=None, params=None):
    """Coefficients of the intrinsic one-form residual on interior nodes.

    ``problem`` is a LagrangianProblem, or the Hamiltonian Expr for chi-hdw.
    The boundary layer is dropped before the field is prolonged, so every
    derivative in the residual comes from nodes at least one away from the
    boundary (the block edge uses the one-sided closure).
    """
    if which not in RESIDUAL_CHARTS:
        raise ValueError(f"unknown residual {which!r}")
    if fld.chart.bundle is not RESIDUAL_CHARTS[which]:
        raise ChartMismatch(f"{which} needs a field on the {RESIDUAL_CHARTS[which].value} chart, got {fld.chart.bundle.value}")
    if which == "chi-nonholonomic" and multipliers is None:
        raise ValueError("chi-nonholonomic needs a multiplier field")
    if which != "chi-nonholonomic" and multipliers is not None:
        raise ValueError(f"{which} takes no multipliers")
    n, k = fld.chart.n, fld.chart.k
    block = interior_block(fld)
    pro = prolong_discrete(block)
    shape = block.grid.sizes
    base_params = dict(getattr(problem, "params", {}) or {})
    base_params.update(params or {})
    env = _env_from(pro, base_params)
    coeffs, groups = {}, {}

    def put(group, label, arr):
        coeffs[label] = np.array(arr, dtype=float)
        groups.setdefault(group, []).append(label)

    def div_u(i):
        return sum(env[VarRef("u", (i, a, a))] for a in range(1, k + 1))

    if which == "chi-hdw":
        H = problem
        _role_check(H, ("q", "p"))
        for i in range(1, n + 1):
            put("balance", f"dq[{i}]", -div_u(i) - _ev(differentiate(H, VarRef("q", (i,))), env, shape))
        for a in range(1, k + 1):
            for i in range(1, n + 1):
                dHdp = _ev(differentiate(H, VarRef("p", (a, i))), env, shape)
                put("position", f"dp[{a},{i}]", env[VarRef("w", (i, a))] - dHdp)
        return ResidualReport(which, coeffs, groups)

    P = problem
    L = P.lagrangian()
    if which == "lambda-el":
        onw = {VarRef("v", (i, a)): Var(VarRef("w", (i, a))) for i in range(1, n + 1) for a in range(1, k + 1)}
        for i in range(1, n + 1):
            dLdq = _ev(subs(differentiate(L, VarRef("q", (i,))), onw), env, shape)
            put("balance", f"dq[{i}]", div_u(i) - dLdq)
        for a in range(1, k + 1):
            for i in range(1, n + 1):
                dLdv = _ev(subs(differentiate(L, VarRef("v", (i, a))), onw), env, shape)
                put("momentum", f"dw[{i},{a}]", env[VarRef("p", (a, i))] - dLdv)
        return ResidualReport(which, coeffs, groups)

    # chi-implicit / chi-nonholonomic on the Pontryagin bundle
    cons = P.constraints if which == "chi-nonholonomic" else None
    if which == "chi-nonholonomic":
        m = 0 if cons is None else cons.m
        if multipliers.m != m or multipliers.values.shape[1] != k:
            raise ValueError(f"multiplier field must have shape ({m}, {k}, ...)")
        lam = multipliers.values[(slice(None), slice(None)) + fld.grid.interior(1)]
    for i in range(1, n + 1):
        val = -div_u(i) + _ev(differentiate(L, VarRef("q", (i,))), env, shape)
        if cons is not None:
            for A in range(1, cons.m + 1):
                for a in range(1, k + 1):
                    c = cons.eta[A - 1][a - 1][i - 1]
                    if c != ZERO:
                        val = val + lam[A - 1, a - 1] * _ev(c, env, shape)
        put("balance", f"dq[{i}]", val)
    for vr in velocity_refs(n, k):
        dLdv = _ev(differentiate(L, vr), env, shape)
        put("momentum", f"d{vr}", -(env[momentum_of(vr)] - dLdv))
    for vr in velocity_refs(n, k):
        i, a = vr.indices
        put("velocity", f"d{momentum_of(vr)}", env[VarRef("w", (i, a))] - env[vr])
    if cons is not None:
        for A, phi in enumerate(cons.phis, start=1):
            put("constraint", f"Phi[{A}]", _ev(phi, env, shape))
    return ResidualReport(which, coeffs, groups)


def legendre_field(P, fld, params=None):
    """psi = FL o phi^(1): momenta from the discrete prolongation of a base field."""
    if fld.chart.bundle is not Bundle.Q:
        raise ChartMismatch("legendre_field expects a field on Q")
    pro = prolong_discrete(fld)
    env = dict(P.params)
    env.update(params or {})
    env.update(pro.assignment())
    chart = make_chart(P.n, P.k, Bundle.COTANGENT)
    vals = np.empty(fld.grid.sizes + (chart.dim,))
    for j, ref in enumerate(chart.coords):
        if ref.role == "q":
            vals[..., j] = pro[ref]
        else:
            vals[..., j] = _ev(legendre_map(P).momenta[ref], env, fld.grid.sizes)
    return DiscreteField(chart, fld.grid, vals)


def pontryagin_field(P, fld, params=None):
    """(phi, phi^(1), FL o phi^(1)) on the Pontryagin chart."""
    pro = prolong_discrete(fld)
    cot = legendre_field(P, fld, params)
    chart = make_chart(P.n, P.k, Bundle.PONTRYAGIN)
    vals = np.empty(fld.grid.sizes + (chart.dim,))
    for j, ref in enumerate(chart.coords):
        vals[..., j] = cot[ref] if ref.role == "p" else pro[ref]
    return DiscreteField(chart, fld.grid, vals)

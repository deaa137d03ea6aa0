"""Independent checks: finite-difference derivatives, discrete actions, variational identity.

Three quadratures are available for the Hamilton action:

* ``corner``: every cell averages L over its 2^k corners, each corner using
  the one-sided edge differences that start there. Its discrete
  Euler-Lagrange equations are exactly the compact/cross stencil used by the
  Navier solver, so dS/deps vanishes at discrete solutions.
* ``midpoint``: L at cell centres from corner-averaged node values and node
  (centered) derivatives.
* ``node``: trapezoid weights at the nodes with centered derivatives; the
  Hamilton-Pontryagin action uses this rule.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .equations import derive_el
from .geometry import Bundle, DiscreteField, VectorFieldOnQ, complete_lift, make_chart, prolong_discrete
from .symexpr import (
    CONSTANTS,
    DomainError,
    JetRef,
    VarRef,
    differentiate,
    evaluate,
    leaf_sort_key,
    parse,
)

FD_STEP = 1e-6
MAX_RESAMPLE = 8
PAIRING_FLOOR = 1e-9


def fd_derivative_check(e, wrt, points=100, seed=0, low=-2.0, high=2.0, fixed=None):
    """Max relative error between ``differentiate`` and central differences."""
    d = differentiate(e, wrt)
    symbols = sorted((e.free_symbols | {wrt}) - set(CONSTANTS), key=leaf_sort_key)
    fixed = dict(fixed or {})
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        for _attempt in range(MAX_RESAMPLE):
            env = {s: float(rng.uniform(low, high)) for s in symbols}
            env.update(fixed)
            x0 = env[wrt]
            h = FD_STEP * max(1.0, abs(x0))
            try:
                exact = float(evaluate(d, env))
                env[wrt] = x0 + h
                fp = float(evaluate(e, env))
                env[wrt] = x0 - h
                fm = float(evaluate(e, env))
            except DomainError:
                continue
            break
        else:
            raise DomainError(f"no admissible sample point after {MAX_RESAMPLE} attempts")
        approx = (fp - fm) / (2 * h)
        worst = max(worst, abs(exact - approx) / max(1.0, abs(exact)))
    return worst


# ------------------------------------------------------------------ actions

@dataclass
class ActionValue:
    value: float
    sizes: tuple
    spacings: tuple
    quadrature: str


def _params(P, params):
    env = dict(P.params)
    env.update(params or {})
    return env


def _corner_action(P, fld, env):
    n, k = P.n, P.k
    L = P.lagrangian()
    g = fld.grid
    q = [fld[VarRef("q", (i,))] for i in range(1, n + 1)]
    mesh = g.mesh()
    total = 0.0
    cells = tuple(slice(0, s - 1) for s in g.sizes)
    for corner in itertools.product((0, 1), repeat=k):
        at = tuple(slice(c, s - 1 + c) for c, s in zip(corner, g.sizes))
        a = dict(env)
        for i in range(n):
            a[VarRef("q", (i + 1,))] = q[i][at]
        for al in range(k):
            a[VarRef("x", (al + 1,))] = mesh[al][at]
            lo = list(at)
            hi = list(at)
            lo[al] = slice(0, g.sizes[al] - 1)
            hi[al] = slice(1, g.sizes[al])
            for i in range(n):
                a[VarRef("v", (i + 1, al + 1))] = (q[i][tuple(hi)] - q[i][tuple(lo)]) / g.spacings[al]
        val = np.broadcast_to(np.asarray(evaluate(L, a), dtype=float), np.shape(mesh[0][cells]))
        total += float(np.sum(val))
    return total * float(np.prod(g.spacings)) / 2**k


def _midpoint_action(P, fld, env):
    pro = prolong_discrete(fld)
    g = fld.grid
    k = g.k
    a = dict(env)
    full = pro.assignment()
    for ref, arr in full.items():
        acc = 0.0
        for corner in itertools.product((0, 1), repeat=k):
            acc = acc + arr[tuple(slice(c, s - 1 + c) for c, s in zip(corner, g.sizes))]
        a[ref] = acc / 2**k
    val = np.broadcast_to(np.asarray(evaluate(P.lagrangian(), a), dtype=float), tuple(s - 1 for s in g.sizes))
    return float(np.sum(val)) * float(np.prod(g.spacings))


def trapezoid_weights(grid):
    w = np.ones(grid.sizes)
    for al, s in enumerate(grid.sizes):
        shape = [1] * grid.k
        shape[al] = s
        wa = np.ones(s)
        wa[0] = wa[-1] = 0.5
        w = w * wa.reshape(shape)
    return w


def _node_action(P, fld, env):
    pro = prolong_discrete(fld)
    a = dict(env)
    a.update(pro.assignment())
    val = np.broadcast_to(np.asarray(evaluate(P.lagrangian(), a), dtype=float), fld.grid.sizes)
    return float(np.sum(trapezoid_weights(fld.grid) * val)) * float(np.prod(fld.grid.spacings))


def _hp_action(P, fld, env):
    """sum_nodes w [p^a_i (G_a q^i - v^i_a) + L(q, v)] prod h."""
    n, k = P.n, P.k
    g = fld.grid
    a = dict(env)
    a.update(fld.assignment())
    integrand = np.broadcast_to(np.asarray(evaluate(P.lagrangian(), a), dtype=float), g.sizes).copy()
    for i in range(1, n + 1):
        qi = fld[VarRef("q", (i,))]
        for al in range(1, k + 1):
            dq = np.gradient(qi, g.spacings[al - 1], axis=al - 1, edge_order=2)
            integrand += fld[VarRef("p", (al, i))] * (dq - fld[VarRef("v", (i, al))])
    return float(np.sum(trapezoid_weights(g) * integrand)) * float(np.prod(g.spacings))


def discrete_action(flavor, P, fld, scheme=None, params=None):
    env = _params(P, params)
    if flavor == "hamilton":
        if fld.chart.bundle is not Bundle.Q:
            raise ValueError("the Hamilton action takes a field on Q")
        scheme = scheme or "corner"
        fn = {"corner": _corner_action, "midpoint": _midpoint_action, "node": _node_action}.get(scheme)
        if fn is None:
            raise ValueError(f"unknown quadrature {scheme!r}")
    elif flavor == "hamilton-pontryagin":
        if fld.chart.bundle is not Bundle.PONTRYAGIN:
            raise ValueError("the Hamilton-Pontryagin action takes a field on M")
        scheme = scheme or "node"
        if scheme != "node":
            raise ValueError("the Hamilton-Pontryagin action uses the node rule")
        fn = _hp_action
    else:
        raise ValueError(f"unknown action flavor {flavor!r}")
    return ActionValue(fn(P, fld, env), fld.grid.sizes, fld.grid.spacings, scheme)


# ---------------------------------------------------------- variational check

def bump_fields(n, count, seed=0, k=1):
    """Z^i = c_i prod_j sin(pi m_ij q^j) with c in [-1, 1] and m in {1, 2, 3}."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        comps = []
        for _i in range(n):
            c = rng.uniform(-1.0, 1.0)
            ms = rng.integers(1, 4, size=n)
            # 17 significant digits keep the parsed coefficient identical to c
            text = f"{c:.17g}*" + "*".join(f"sin({m}*pi*q[{j + 1}])" for j, m in enumerate(ms))
            comps.append(parse(text, make_chart(n, k, Bundle.Q)))
        out.append(VectorFieldOnQ(comps, k))
    return out


def _lift_values(Z, fld, target, env):
    """Complete-lift components evaluated along a field, keyed by chart coordinate."""
    chart = make_chart(Z.n, Z.k, target)
    comps = complete_lift(Z, target)
    a = dict(env)
    a.update(fld.assignment())
    return {ref: np.broadcast_to(np.asarray(evaluate(c, a), dtype=float), fld.grid.sizes) for ref, c in zip(chart.coords, comps)}


def _deformed(fld, lift, eps):
    vals = fld.values.copy()
    for j, ref in enumerate(fld.chart.coords):
        if ref in lift:
            vals[..., j] = vals[..., j] + eps * lift[ref]
    return DiscreteField(fld.chart, fld.grid, vals)


def compact_el_residual(P, fld, params=None):
    """Rows of derive_el on interior nodes with compact second differences."""
    sys_ = derive_el(P)
    n, k = P.n, P.k
    g = fld.grid
    inner = g.interior(1)
    a = _params(P, params)
    full = fld.assignment()
    for ref, arr in full.items():
        a[ref] = arr[inner]
    for j in range(1, n + 1):
        qj = fld[VarRef("q", (j,))]
        for al in range(1, k + 1):
            h = g.spacings[al - 1]
            a[JetRef(VarRef("q", (j,)), (al,))] = np.gradient(qj, h, axis=al - 1)[inner]
            for be in range(al, k + 1):
                if be == al:
                    d2 = (np.roll(qj, -1, axis=al - 1) - 2 * qj + np.roll(qj, 1, axis=al - 1)) / h**2
                else:
                    hb = g.spacings[be - 1]
                    d2 = (
                        np.roll(np.roll(qj, -1, al - 1), -1, be - 1)
                        - np.roll(np.roll(qj, -1, al - 1), 1, be - 1)
                        - np.roll(np.roll(qj, 1, al - 1), -1, be - 1)
                        + np.roll(np.roll(qj, 1, al - 1), 1, be - 1)
                    ) / (4 * h * hb)
                a[JetRef(VarRef("q", (j,)), (al, be))] = d2[inner]
    shape = tuple(s - 2 for s in g.sizes)
    return [np.broadcast_to(np.asarray(evaluate(r.residual(), a), dtype=float), shape) for r in sys_.rows]


@dataclass
class VariationalReport:
    flavor: str
    dS_deps: float
    dS_deps_by_eps: dict
    pairing: float
    boundary_max: float

    @property
    def difference(self):
        return self.dS_deps - self.pairing

    @property
    def relative_difference(self):
        # both sides can vanish for a bump that misses the field; roundoff of the
        # eps-differencing sets the floor
        scale = max(abs(self.dS_deps), abs(self.pairing), PAIRING_FLOOR)
        return abs(self.difference) / scale

    def to_text(self):
        lines = [
            ("flavor", self.flavor),
            ("dS_deps", f"{self.dS_deps:.17g}"),
            ("pairing", f"{self.pairing:.17g}"),
            ("difference", f"{self.difference:.17g}"),
            ("relative_difference", f"{self.relative_difference:.17g}"),
            ("boundary_max", f"{self.boundary_max:.17g}"),
        ]
        lines += [(f"dS_deps[eps={e:g}]", f"{v:.17g}") for e, v in self.dS_deps_by_eps.items()]
        return "".join(f"{k} = {v}\n" for k, v in lines)


class BoundaryViolation(ValueError):
    pass


def variational_check(flavor, P, fld, Z, eps=(1e-3,), scheme=None, params=None, boundary_tol=1e-14):
    env = _params(P, params)
    n, k = P.n, P.k
    q_chart_field = fld if fld.chart.bundle is Bundle.Q else None
    a = dict(env)
    a.update(fld.assignment())
    zvals = [np.broadcast_to(np.asarray(evaluate(c, a), dtype=float), fld.grid.sizes) for c in Z.components]
    edge = np.ones(fld.grid.sizes, dtype=bool)
    edge[fld.grid.interior(1)] = False
    bmax = max(float(np.max(np.abs(z[edge]))) for z in zvals)
    if bmax > boundary_tol:
        raise BoundaryViolation(f"deformation field does not vanish on the boundary (max {bmax:.3e})")
    if flavor == "hamilton":
        lift = {VarRef("q", (i,)): zvals[i - 1] for i in range(1, n + 1)}
    elif flavor == "hamilton-pontryagin":
        lift = _lift_values(Z, fld, Bundle.PONTRYAGIN, env)
    else:
        raise ValueError(f"unknown action flavor {flavor!r}")
    by_eps = {}
    for e in eps:
        sp_ = discrete_action(flavor, P, _deformed(fld, lift, e), scheme, params).value
        sm_ = discrete_action(flavor, P, _deformed(fld, lift, -e), scheme, params).value
        by_eps[e] = (sp_ - sm_) / (2 * e)
    base = q_chart_field
    if base is None:
        chart = make_chart(n, k, Bundle.Q)
        base = DiscreteField(chart, fld.grid, np.stack([fld[r] for r in chart.coords], axis=-1))
    R = compact_el_residual(P, base, params)
    inner = fld.grid.interior(1)
    pairing = -float(np.prod(fld.grid.spacings)) * float(sum(np.sum(R[i] * zvals[i][inner]) for i in range(n)))
    return VariationalReport(flavor, by_eps[eps[0]], by_eps, pairing, bmax)


def square_boundary_field(a=0.1, b=0.1):
    """Boundary data mapping the unit square onto itself (bumps vanish there)."""
    return [
        parse(f"x[1] + {a!r}*sin(pi*x[1])*cos(pi*x[2])"),
        parse(f"x[2] + {b!r}*sin(pi*x[2])*cos(pi*x[1])"),
    ]


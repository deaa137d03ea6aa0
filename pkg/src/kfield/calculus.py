"""Coordinate differential forms and the Tulczyjew derivations.

Forms live on (T^1_k)^*Q (coordinates q, p) or on the iterated bundle
T^1_k((T^1_k)^*Q) (coordinates q, p, w, u). A basis element is a tuple of
coordinates sorted in chart order, so dy^I ^ dy^J is stored once with I < J.
"""
from __future__ import annotations

from .geometry import Bundle, make_chart
from .symexpr import ZERO, Const, Var, VarRef, add, differentiate, equivalent, mul, neg, normalize


class CoordForm:
    def __init__(self, degree, chart, coeffs=None):
        self.degree = degree
        self.chart = chart
        self.coeffs = {}
        for basis, c in (coeffs or {}).items():
            basis = (basis,) if isinstance(basis, VarRef) else tuple(basis)
            if len(basis) != degree:
                raise ValueError(f"basis {basis} has the wrong degree for a {degree}-form")
            self._accumulate(basis, c)

    def _accumulate(self, basis, c):
        sign, key = _canonical(basis, self.chart)
        if key is None:
            return
        c = c if sign > 0 else neg(c)
        old = self.coeffs.get(key)
        self.coeffs[key] = c if old is None else add(old, c)

    def normalized(self):
        out = CoordForm(self.degree, self.chart)
        for key, c in self.coeffs.items():
            c = normalize(c)
            if c != ZERO:
                out.coeffs[key] = c
        return out

    def coefficient(self, *basis):
        sign, key = _canonical(tuple(basis), self.chart)
        if key is None:
            return ZERO
        c = self.coeffs.get(key, ZERO)
        return c if sign > 0 else neg(c)

    def __add__(self, other):
        if other.degree != self.degree or other.chart != self.chart:
            raise ValueError("cannot add forms of different degree or chart")
        out = CoordForm(self.degree, self.chart, self.coeffs)
        for key, c in other.coeffs.items():
            out._accumulate(key, c)
        return out

    def __neg__(self):
        return CoordForm(self.degree, self.chart, {b: neg(c) for b, c in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-other)

    def scale(self, f):
        return CoordForm(self.degree, self.chart, {b: mul(f, c) for b, c in self.coeffs.items()})

    def is_zero(self):
        return not self.normalized().coeffs

    def equivalent_to(self, other):
        diff = (self - other).normalized()
        return all(equivalent(c, ZERO).equal for c in diff.coeffs.values())

    def __repr__(self):
        if not self.coeffs:
            return "0"
        parts = []
        for key in sorted(self.coeffs, key=lambda b: [self.chart.index(r) for r in b]):
            basis = "^".join(f"d{r}" for r in key)
            parts.append(f"({self.coeffs[key]})" + (f"*{basis}" if basis else ""))
        return " + ".join(parts)


def _canonical(basis, chart):
    """Sort a wedge of basis covectors; returns (sign, key) or (0, None) if repeated."""
    if len(set(basis)) != len(basis):
        return 0, None
    idx = [chart.index(r) for r in basis]
    sign = 1
    # bubble sort keeps track of the permutation parity
    order = list(basis)
    for i in range(len(idx)):
        for j in range(len(idx) - 1 - i):
            if idx[j] > idx[j + 1]:
                idx[j], idx[j + 1] = idx[j + 1], idx[j]
                order[j], order[j + 1] = order[j + 1], order[j]
                sign = -sign
    return sign, tuple(order)


def function_form(chart, f):
    return CoordForm(0, chart, {(): f})


def exterior_derivative(form, chart=None):
    """d on coordinate forms; ``chart`` lets the result live on a larger chart."""
    chart = chart or form.chart
    out = CoordForm(form.degree + 1, chart)
    for basis, c in form.coeffs.items():
        for ref in chart.coords:
            dc = differentiate(c, ref)
            if dc != ZERO:
                out._accumulate((ref,) + basis, dc)
    return out


def _check_degree(form):
    if form.degree not in (0, 1, 2, 3):
        raise ValueError(f"forms of degree {form.degree} are not supported")


def _interior(form, vector, chart):
    """Insert ``vector`` (ref -> component) into the first slot."""
    out = CoordForm(max(form.degree - 1, 0), chart)
    if form.degree == 0:
        return out
    for basis, c in form.coeffs.items():
        for s, ref in enumerate(basis):
            comp = vector.get(ref, ZERO)
            if comp == ZERO:
                continue
            rest = basis[:s] + basis[s + 1:]
            term = mul(c, comp)
            out._accumulate(rest, term if s % 2 == 0 else neg(term))
    return out


def iterated_chart(n, k):
    return make_chart(n, k, Bundle.ITERATED)


def velocity_lift(ref, alpha):
    """The alpha-th velocity of a (T^1_k)^*Q coordinate on the iterated bundle."""
    if ref.role == "q":
        return VarRef("w", (ref.indices[0], alpha))
    if ref.role == "p":
        b, i = ref.indices
        return VarRef("u", (i, alpha, b))
    raise ValueError(f"{ref} is not a coordinate of the cotangent chart")


def _lift_vector(chart, alpha):
    return {ref: Var(velocity_lift(ref, alpha)) for ref in chart.coords}


def _check_source(form):
    if form.chart.bundle is not Bundle.COTANGENT:
        raise ValueError("Tulczyjew derivations act on forms over the cotangent chart")


def _check_alpha(chart, alpha):
    if not 1 <= alpha <= chart.k:
        raise ValueError(f"alpha={alpha} out of range 1..{chart.k}")


def tulczyjew_iT(form, alpha):
    """i_{T_alpha}: degree -1 derivation along the alpha-th velocity."""
    _check_source(form)
    _check_alpha(form.chart, alpha)
    _check_degree(form)
    target = iterated_chart(form.chart.n, form.chart.k)
    return _interior(form, _lift_vector(form.chart, alpha), target)


def tulczyjew_dT(form, alpha):
    """d_{T_alpha} = i_{T_alpha} d + d i_{T_alpha}."""
    _check_source(form)
    _check_alpha(form.chart, alpha)
    target = iterated_chart(form.chart.n, form.chart.k)
    first = tulczyjew_iT(exterior_derivative(form), alpha)
    if form.degree == 0:
        return first
    return first + exterior_derivative(tulczyjew_iT(form, alpha), target)


def canonical_theta_omega(n, k, alpha):
    if not 1 <= alpha <= k:
        raise ValueError(f"alpha={alpha} out of range 1..{k}")
    chart = make_chart(n, k, Bundle.COTANGENT)
    theta = CoordForm(1, chart, {VarRef("q", (i,)): Var(VarRef("p", (alpha, i))) for i in range(1, n + 1)})
    omega = CoordForm(2, chart, {(VarRef("q", (i,)), VarRef("p", (alpha, i))): Const(1) for i in range(1, n + 1)})
    return theta, omega


def build_lambda(n, k):
    chart = iterated_chart(n, k)
    coeffs = {}
    for i in range(1, n + 1):
        coeffs[VarRef("q", (i,))] = add(*[Var(VarRef("u", (i, a, a))) for a in range(1, k + 1)])
        for a in range(1, k + 1):
            coeffs[VarRef("w", (i, a))] = Var(VarRef("p", (a, i)))
    return CoordForm(1, chart, coeffs)


def build_chi(n, k):
    chart = iterated_chart(n, k)
    coeffs = {}
    for i in range(1, n + 1):
        coeffs[VarRef("q", (i,))] = neg(add(*[Var(VarRef("u", (i, a, a))) for a in range(1, k + 1)]))
        for a in range(1, k + 1):
            coeffs[VarRef("p", (a, i))] = Var(VarRef("w", (i, a)))
    return CoordForm(1, chart, coeffs)


def lambda_via_derivations(n, k):
    total = CoordForm(1, iterated_chart(n, k))
    for a in range(1, k + 1):
        theta, _ = canonical_theta_omega(n, k, a)
        total = total + tulczyjew_dT(theta, a)
    return total.normalized()


def chi_via_derivations(n, k):
    total = CoordForm(1, iterated_chart(n, k))
    for a in range(1, k + 1):
        _, omega = canonical_theta_omega(n, k, a)
        total = total + tulczyjew_iT(omega, a)
    return total.normalized()

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_polynomial, symbol_names
from kfield.calculus import (
    CoordForm,
    build_chi,
    build_lambda,
    canonical_theta_omega,
    chi_via_derivations,
    exterior_derivative,
    function_form,
    iterated_chart,
    lambda_via_derivations,
    tulczyjew_dT,
    tulczyjew_iT,
)
from kfield.geometry import Bundle, make_chart
from kfield.symexpr import Const, Var, VarRef, add, equivalent, mul, parse

NK = [(n, k) for n in (1, 2, 3) for k in (1, 2, 3)]


def q(i):
    return VarRef("q", (i,))


def p(a, i):
    return VarRef("p", (a, i))


def w(i, a):
    return VarRef("w", (i, a))


def u(i, a, b):
    return VarRef("u", (i, a, b))


def random_one_form(rng, n, k):
    chart = make_chart(n, k, Bundle.COTANGENT)
    names = symbol_names(n, k, ("q", "p"))
    coeffs = {}
    for ref in rng.sample(chart.coords, min(3, chart.dim)):
        coeffs[ref] = parse(random_polynomial(rng, names, max_terms=3, max_degree=2)[0], (n, k))
    return CoordForm(1, chart, coeffs)


class TestCanonical:
    def test_one_dimensional(self):
        theta, omega = canonical_theta_omega(1, 1, 1)
        assert equivalent(theta.coefficient(q(1)), Var(p(1, 1))).equal
        assert equivalent(omega.coefficient(q(1), p(1, 1)), Const(1)).equal
        assert equivalent(omega.coefficient(p(1, 1), q(1)), Const(-1)).equal

    def test_second_direction(self):
        theta, _ = canonical_theta_omega(2, 2, 2)
        assert equivalent(theta.coefficient(q(1)), Var(p(2, 1))).equal
        assert equivalent(theta.coefficient(q(2)), Var(p(2, 2))).equal
        assert equivalent(theta.coefficient(p(1, 1)), Const(0)).equal

    @pytest.mark.parametrize("n,k", NK)
    def test_omega_is_minus_d_theta(self, n, k):
        for a in range(1, k + 1):
            theta, omega = canonical_theta_omega(n, k, a)
            assert (exterior_derivative(theta) + omega).is_zero()

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            canonical_theta_omega(2, 2, 3)


class TestDerivations:
    def test_function_goes_to_zero(self):
        chart = make_chart(1, 1, Bundle.COTANGENT)
        assert tulczyjew_iT(function_form(chart, parse("q[1]^2")), 1).is_zero()

    def test_dq_lifts_to_velocity(self):
        chart = make_chart(1, 1, Bundle.COTANGENT)
        res = tulczyjew_iT(CoordForm(1, chart, {q(1): Const(1)}), 1)
        assert res.degree == 0
        assert equivalent(res.coefficient(), Var(w(1, 1))).equal

    def test_dT_of_constant(self):
        chart = make_chart(2, 2, Bundle.COTANGENT)
        assert tulczyjew_dT(function_form(chart, Const(5)), 2).is_zero()

    def test_dT_of_coordinate(self):
        chart = make_chart(1, 1, Bundle.COTANGENT)
        res = tulczyjew_dT(function_form(chart, parse("q[1]")), 1)
        assert res.degree == 0 and equivalent(res.coefficient(), Var(w(1, 1))).equal

    def test_rejects_iterated_source(self):
        form = CoordForm(1, iterated_chart(1, 1), {q(1): Const(1)})
        with pytest.raises(ValueError):
            tulczyjew_iT(form, 1)

    @given(st.integers(0, 10**6), st.sampled_from(NK))
    def test_function_linearity(self, seed, nk):
        n, k = nk
        rng = random.Random(seed)
        mu = random_one_form(rng, n, k)
        f = parse(random_polynomial(rng, symbol_names(n, k, ("q", "p")), max_degree=2)[0], (n, k))
        a = rng.randint(1, k)
        lhs = tulczyjew_iT(mu.scale(f), a)
        rhs = tulczyjew_iT(mu, a).scale(f)
        assert lhs.equivalent_to(rhs)

    @given(st.integers(0, 10**6), st.sampled_from([(1, 1), (2, 1), (1, 2), (2, 2)]))
    def test_d_commutes_with_dT(self, seed, nk):
        n, k = nk
        rng = random.Random(seed)
        mu = random_one_form(rng, n, k)
        a = rng.randint(1, k)
        target = iterated_chart(n, k)
        lhs = exterior_derivative(tulczyjew_dT(mu, a), target)
        rhs = tulczyjew_dT(exterior_derivative(mu), a)
        assert lhs.equivalent_to(rhs)


class TestLambdaChi:
    @pytest.mark.parametrize("n,k", NK)
    def test_cross_construction(self, n, k):
        assert build_lambda(n, k).equivalent_to(lambda_via_derivations(n, k))
        assert build_chi(n, k).equivalent_to(chi_via_derivations(n, k))

    def test_single_index_case(self):
        lam, chi = build_lambda(1, 1), build_chi(1, 1)
        assert equivalent(lam.coefficient(q(1)), Var(u(1, 1, 1))).equal
        assert equivalent(lam.coefficient(w(1, 1)), Var(p(1, 1))).equal
        assert equivalent(chi.coefficient(p(1, 1)), Var(w(1, 1))).equal
        assert equivalent(chi.coefficient(q(1)), mul(Const(-1), Var(u(1, 1, 1)))).equal

    def test_trace_on_dq(self):
        lam = build_lambda(2, 2)
        assert equivalent(lam.coefficient(q(1)), add(Var(u(1, 1, 1)), Var(u(1, 2, 2)))).equal

    @pytest.mark.parametrize("n,k", NK)
    def test_sum_is_exact(self, n, k):
        chart = iterated_chart(n, k)
        pairing = add(*[mul(Var(p(a, i)), Var(w(i, a))) for a in range(1, k + 1) for i in range(1, n + 1)])
        assert (build_lambda(n, k) + build_chi(n, k)).equivalent_to(exterior_derivative(function_form(chart, pairing)))

    @pytest.mark.parametrize("n,k", [(1, 1), (2, 2), (3, 2)])
    def test_closed(self, n, k):
        for form in (build_lambda(n, k), build_chi(n, k)):
            assert exterior_derivative(exterior_derivative(form)).is_zero()

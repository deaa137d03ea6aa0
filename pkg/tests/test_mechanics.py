import itertools
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import NAVIER_L, quadratic_lagrangian
from kfield.mechanics import (
    LagrangianProblem,
    NotHyperregular,
    UnsupportedForm,
    generalized_energy,
    hamiltonian_from_lagrangian,
    inverse_legendre,
    legendre_map,
    momentum_of,
    numeric_rank,
    velocity_hessian,
    velocity_refs,
)
from kfield.symexpr import Const, Var, VarRef, differentiate, equivalent, parse, subs, to_poly


def navier(params=None):
    return LagrangianProblem(2, 2, parse(NAVIER_L, (2, 2)), params or {})


def p(a, i):
    return VarRef("p", (a, i))


def cofactor_det(M):
    """Plain Laplace expansion over exact polynomials (independent of Bareiss)."""
    if len(M) == 1:
        return M[0][0]
    total = None
    for j, entry in enumerate(M[0]):
        minor = [row[:j] + row[j + 1:] for row in M[1:]]
        term = entry * cofactor_det(minor)
        if j % 2:
            term = -term
        total = term if total is None else total + term
    return total


class TestLegendre:
    def test_navier_momenta(self):
        fl = legendre_map(navier())
        want = {
            p(1, 1): "(lam + 2*mu)*v[1,1] + (lam + mu)*v[2,2]",
            p(1, 2): "mu*v[2,1]",
            p(2, 1): "mu*v[1,2]",
            p(2, 2): "(lam + 2*mu)*v[2,2] + (lam + mu)*v[1,1]",
        }
        for ref, text in want.items():
            assert equivalent(fl[ref], parse(text, (2, 2))).equal

    def test_hessian_symmetric_navier(self):
        H = velocity_hessian(navier()).hessian
        for r, c in itertools.product(range(4), repeat=2):
            assert equivalent(H[r][c], H[c][r]).equal


class TestRegularity:
    def test_navier_determinant_symbolic(self):
        rep = velocity_hessian(navier())
        assert equivalent(rep.determinant, parse("mu^3*(2*lam + 3*mu)")).equal

    def test_navier_determinant_cofactor_oracle(self):
        rep = velocity_hessian(navier())
        oracle = cofactor_det([[to_poly(e) for e in row] for row in rep.hessian])
        assert to_poly(rep.determinant) == oracle

    def test_navier_regular_at_point(self):
        rep = velocity_hessian(navier(), at={"lam": 1.0, "mu": 1.0})
        assert rep.verdict == "regular" and rep.rank == 4

    def test_navier_singular_when_mu_zero(self):
        assert velocity_hessian(navier(), at={"lam": 1.0, "mu": 0.0}).verdict == "singular"

    def test_rank_helper(self):
        assert numeric_rank([[1, 2], [2, 4]]) == 1
        assert numeric_rank([[1, 0], [0, 1e-12]]) == 1
        assert numeric_rank([[0, 0], [0, 0]]) == 0

    def test_non_polynomial_determinant(self):
        P = LagrangianProblem(1, 1, parse("exp(q[1])*v[1,1]^2/2"))
        rep = velocity_hessian(P, at={VarRef("q", (1,)): 0.0})
        assert rep.determinant == "non-polynomial" and rep.verdict == "regular"


class TestEnergy:
    def test_pontryagin_form(self):
        P = LagrangianProblem(1, 1, parse("v[1,1]^2/2 - q[1]^2/2"))
        E = generalized_energy(P, "pontryagin")
        assert equivalent(E, parse("p[1,1]*v[1,1] - v[1,1]^2/2 + q[1]^2/2")).equal

    def test_lagrangian_form(self):
        P = LagrangianProblem(1, 1, parse("v[1,1]^2/2 - q[1]^2/2"))
        assert equivalent(generalized_energy(P, "lagrangian"), parse("v[1,1]^2/2 + q[1]^2/2")).equal

    @given(st.integers(0, 10**6), st.integers(1, 2), st.integers(1, 2))
    def test_flavors_agree_on_legendre_image(self, seed, n, k):
        L = parse(quadratic_lagrangian(random.Random(seed), n, k), (n, k))
        P = LagrangianProblem(n, k, L)
        Ep = subs(generalized_energy(P, "pontryagin"), legendre_map(P).as_substitution())
        assert equivalent(Ep, generalized_energy(P, "lagrangian")).equal

    def test_unknown_flavor(self):
        with pytest.raises(ValueError):
            generalized_energy(navier(), "bogus")


class TestHamiltonian:
    def test_navier_unit_params(self):
        P = navier().with_params({"lam": 1, "mu": 1})
        H = hamiltonian_from_lagrangian(P)
        want = parse("3/10*p[1,1]^2 - 2/5*p[1,1]*p[2,2] + 1/2*p[1,2]^2 + 1/2*p[2,1]^2 + 3/10*p[2,2]^2", (2, 2))
        assert equivalent(H, want).equal

    def test_singular_rejected(self):
        P = LagrangianProblem(1, 2, parse("v[1,1]^2/2"))
        with pytest.raises(NotHyperregular):
            inverse_legendre(P)

    def test_non_quadratic_rejected(self):
        with pytest.raises(UnsupportedForm):
            hamiltonian_from_lagrangian(LagrangianProblem(1, 1, parse("v[1,1]^4")))

    @given(st.integers(0, 10**6), st.integers(1, 2), st.integers(1, 2))
    def test_round_trip(self, seed, n, k):
        L = parse(quadratic_lagrangian(random.Random(seed), n, k), (n, k))
        P = LagrangianProblem(n, k, L)
        H = hamiltonian_from_lagrangian(P)
        fl = legendre_map(P).as_substitution()
        assert equivalent(subs(H, fl), generalized_energy(P, "lagrangian")).equal
        for vr in velocity_refs(n, k):
            dHdp = subs(differentiate(H, momentum_of(vr)), fl)
            assert equivalent(dHdp, Var(vr)).equal


class TestProblem:
    def test_rejects_momentum_in_lagrangian(self):
        with pytest.raises(ValueError):
            LagrangianProblem(1, 1, parse("p[1,1]*v[1,1]"))

    def test_body_force_enters_lagrangian(self):
        P = LagrangianProblem(1, 1, parse("v[1,1]^2/2"), body_force=[parse("x[1]")])
        assert equivalent(P.lagrangian(), parse("v[1,1]^2/2 + x[1]*q[1]")).equal
        assert P.without_body_force().body_force is None

    def test_with_params_exact(self):
        P = navier().with_params({"lam": 0.5, "mu": 2})
        assert not P.lagrangian().free_symbols & {"lam", "mu"}
        assert equivalent(P.L, subs(parse(NAVIER_L, (2, 2)), {"lam": Const(Fraction(1, 2)), "mu": Const(2)})).equal

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import NAVIER_L
from kfield.equations import pontryagin_field
from kfield.geometry import Bundle, DiscreteField, Grid, VectorFieldOnQ, make_chart
from kfield.mechanics import LagrangianProblem
from kfield.oracle import (
    BoundaryViolation,
    bump_fields,
    discrete_action,
    fd_derivative_check,
    square_boundary_field,
    trapezoid_weights,
    variational_check,
)
from kfield.solvers import EllipticProblem, solve_navier
from kfield.symexpr import Const, VarRef, add, evaluate, parse

SCHEMES = ("corner", "midpoint", "node")


def navier():
    return LagrangianProblem(2, 2, parse(NAVIER_L, (2, 2)), {"lam": 1.0, "mu": 1.0})


def dirichlet():
    return LagrangianProblem(1, 2, parse("(v[1,1]^2 + v[1,2]^2)/2", (1, 2)))


def unit_grid(N):
    return Grid.uniform((N, N), (0, 0), (1, 1))


def q_field(n, grid, fn):
    return DiscreteField.from_function(make_chart(n, grid.k, Bundle.Q), grid, fn)


@pytest.fixture(scope="module")
def solved():
    out = {}
    for N in (17, 33):
        out[N] = solve_navier(EllipticProblem(navier(), unit_grid(N), square_boundary_field())).field
    return out


class TestFd:
    @pytest.mark.parametrize("ref", ["v[1,1]", "v[1,2]", "v[2,1]", "v[2,2]"])
    def test_navier(self, ref):
        L = parse(NAVIER_L, (2, 2))
        assert fd_derivative_check(L, parse(ref, (2, 2)).ref) < 1e-6

    def test_constant(self):
        assert fd_derivative_check(Const(3), VarRef("q", (1,))) == 0.0

    def test_transcendental(self):
        e = parse("exp(q[1])*sin(v[1,1]) + q[1]^3", (1, 1))
        assert fd_derivative_check(e, VarRef("q", (1,)), seed=4) < 1e-6


class TestActions:
    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_unit_lagrangian_area(self, scheme):
        P = LagrangianProblem(2, 2, Const(1))
        g = Grid.uniform((9, 5), (0, 0), (2, 0.5))
        f = q_field(2, g, lambda x, y: [x, y])
        assert abs(discrete_action("hamilton", P, f, scheme).value - 1.0) < 1e-12

    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_dirichlet_linear_exact(self, scheme):
        f = q_field(1, unit_grid(9), lambda x, y: [x])
        assert discrete_action("hamilton", dirichlet(), f, scheme).value == pytest.approx(0.5, abs=1e-13)

    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_dirichlet_second_order(self, scheme):
        # the node rule's one-sided edge gradients need the finer pair to be asymptotic
        errs = []
        for N in (33, 65):
            f = q_field(1, unit_grid(N), lambda x, y: [np.sin(np.pi * x) * np.sin(np.pi * y)])
            errs.append(abs(discrete_action("hamilton", dirichlet(), f, scheme).value - math.pi**2 / 4))
        assert 1.7 <= math.log2(errs[0] / errs[1]) <= 2.3

    def test_trapezoid_weights_sum(self):
        g = Grid((5, 7), (0.25, 0.5), (0, 0))
        assert np.sum(trapezoid_weights(g)) * 0.25 * 0.5 == pytest.approx(3.0)

    def test_chart_checks(self):
        f = q_field(2, unit_grid(5), lambda x, y: [x, y])
        with pytest.raises(ValueError):
            discrete_action("hamilton-pontryagin", navier(), f)
        with pytest.raises(ValueError):
            discrete_action("hamilton", navier(), f, scheme="simpson")
        with pytest.raises(ValueError):
            discrete_action("lagrange", navier(), f)

    @given(st.integers(0, 10**6))
    @settings(max_examples=15)
    def test_hp_equals_node_when_v_is_gradient(self, seed):
        rng = np.random.default_rng(seed)
        g = unit_grid(9)
        c = rng.uniform(-1, 1, size=4)
        qf = q_field(2, g, lambda x, y: [x + c[0] * x * y, y + c[1] * np.sin(x + c[2] * y)])
        chart = make_chart(2, 2, Bundle.PONTRYAGIN)
        vals = np.empty(g.sizes + (chart.dim,))
        for j, ref in enumerate(chart.coords):
            if ref.role == "q":
                vals[..., j] = qf.values[..., ref.indices[0] - 1]
            elif ref.role == "v":
                i, a = ref.indices
                vals[..., j] = np.gradient(qf.values[..., i - 1], g.spacings[a - 1], axis=a - 1, edge_order=2)
            else:
                vals[..., j] = rng.normal(size=g.sizes)
        M = DiscreteField(chart, g, vals)
        hp = discrete_action("hamilton-pontryagin", navier(), M).value
        node = discrete_action("hamilton", navier(), qf, "node").value
        assert hp == pytest.approx(node, rel=1e-12, abs=1e-12)


class TestBumps:
    def test_deterministic(self):
        a = [str(c) for Z in bump_fields(2, 3, seed=5, k=2) for c in Z.components]
        b = [str(c) for Z in bump_fields(2, 3, seed=5, k=2) for c in Z.components]
        assert a == b

    def test_vanish_on_unit_square_edges(self):
        for Z in bump_fields(2, 4, k=2):
            for pt in [(0.0, 0.3), (1.0, 0.7), (0.4, 0.0), (0.2, 1.0)]:
                env = {VarRef("q", (1,)): pt[0], VarRef("q", (2,)): pt[1]}
                assert all(abs(evaluate(c, env)) < 1e-14 for c in Z.components)


class TestVariational:
    def test_identity_field(self):
        f = q_field(2, unit_grid(17), lambda x, y: [x, y])
        for Z in bump_fields(2, 3, k=2):
            assert abs(variational_check("hamilton", navier(), f, Z).dS_deps) < 1e-8

    def test_zero_deformation(self, solved):
        Z = VectorFieldOnQ([Const(0), Const(0)], 2)
        rep = variational_check("hamilton", navier(), solved[17], Z)
        assert rep.dS_deps == 0.0 and rep.pairing == 0.0

    def test_boundary_violation(self, solved):
        with pytest.raises(BoundaryViolation):
            variational_check("hamilton", navier(), solved[17], VectorFieldOnQ([Const(1), Const(0)], 2))

    def test_solved_field_stationary(self, solved):
        for N, f in solved.items():
            for Z in bump_fields(2, 5, k=2):
                rep = variational_check("hamilton", navier(), f, Z)
                assert abs(rep.dS_deps) < 1e-8
                assert abs(rep.pairing) < 1e-8

    def test_perturbed_field_matches_pairing(self, solved):
        f = solved[33]
        x, y = f.grid.mesh()
        pert = f.values.copy()
        pert[..., 0] += 0.05 * np.sin(2 * np.pi * x) * np.sin(np.pi * y)
        pert[..., 1] += 0.03 * np.sin(np.pi * x) * np.sin(3 * np.pi * y)
        g = DiscreteField(f.chart, f.grid, pert)
        for Z in bump_fields(2, 5, k=2):
            rep = variational_check("hamilton", navier(), g, Z)
            assert abs(rep.dS_deps) > 1e-6
            assert rep.relative_difference < 0.02

    def test_eps_independent_for_quadratic(self, solved):
        Z = bump_fields(2, 1, seed=3, k=2)[0]
        f = solved[17]
        x, y = f.grid.mesh()
        pert = DiscreteField(f.chart, f.grid, f.values + 0.01 * np.sin(np.pi * x)[..., None] * np.sin(np.pi * y)[..., None])
        rep = variational_check("hamilton", navier(), pert, Z, eps=(1e-2, 1e-3, 1e-4))
        vals = list(rep.dS_deps_by_eps.values())
        assert max(vals) - min(vals) < 1e-8 * max(1.0, abs(vals[0]))

    @given(st.integers(0, 10**6))
    @settings(max_examples=10)
    def test_linear_in_deformation(self, seed):
        g = unit_grid(9)
        f = q_field(2, g, lambda x, y: [x + 0.1 * np.sin(np.pi * x) * np.sin(np.pi * y) ** 2, y + 0.05 * np.sin(np.pi * y)])
        Z1, Z2 = bump_fields(2, 2, seed=seed, k=2)
        Z12 = VectorFieldOnQ([add(a, b) for a, b in zip(Z1.components, Z2.components)], 2)
        d = [variational_check("hamilton", navier(), f, Z).dS_deps for Z in (Z1, Z2, Z12)]
        assert d[2] == pytest.approx(d[0] + d[1], rel=1e-8, abs=1e-10)

    def test_hp_matches_node_hamilton(self, solved):
        f = solved[17]
        M = pontryagin_field(navier(), f)
        for Z in bump_fields(2, 3, k=2):
            hp = variational_check("hamilton-pontryagin", navier(), M, Z).dS_deps
            node = variational_check("hamilton", navier(), f, Z, scheme="node").dS_deps
            assert abs(hp - node) < 1e-10

    def test_report_text(self, solved):
        rep = variational_check("hamilton", navier(), solved[17], bump_fields(2, 1, k=2)[0])
        text = rep.to_text()
        assert text.startswith("flavor = hamilton\n") and "pairing = " in text

import random
from fractions import Fraction

import pytest
from hypothesis import settings
from hypothesis import strategies as st

from kfield import data_path
from kfield.symexpr import parse

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

NAVIER_L = "(lam/2 + mu)*(v[1,1]^2 + v[2,2]^2) + mu/2*(v[1,2]^2 + v[2,1]^2) + (lam + mu)*v[1,1]*v[2,2]"


@pytest.fixture(scope="session")
def navier_prob():
    return str(data_path("navier.prob"))


@pytest.fixture(scope="session")
def cosserat_prob():
    return str(data_path("cosserat.prob"))


def symbol_names(n, k, roles=("q", "v")):
    names = []
    if "q" in roles:
        names += [f"q[{i}]" for i in range(1, n + 1)]
    if "v" in roles:
        names += [f"v[{i},{a}]" for a in range(1, k + 1) for i in range(1, n + 1)]
    if "p" in roles:
        names += [f"p[{a},{i}]" for a in range(1, k + 1) for i in range(1, n + 1)]
    return names


def random_polynomial(rng, names, max_terms=4, max_degree=3):
    """Random polynomial as (text, python callable on a dict name->value).

    The callable is an independent oracle: it never touches the package parser.
    """
    terms = []
    for _ in range(rng.randint(1, max_terms)):
        c = Fraction(rng.randint(-9, 9), rng.randint(1, 4))
        if c == 0:
            c = Fraction(1)
        factors = [rng.choice(names) for _ in range(rng.randint(0, max_degree))]
        terms.append((c, factors))

    def text():
        parts = []
        for c, fs in terms:
            piece = f"({c.numerator}/{c.denominator})"
            for f in fs:
                piece += f"*{f}"
            parts.append(piece)
        return " + ".join(parts)

    def value(env):
        total = 0.0
        for c, fs in terms:
            t = float(c)
            for f in fs:
                t *= env[f]
            total += t
        return total

    return text(), value


@st.composite
def polynomial_lagrangians(draw, max_n=3, max_k=3):
    """(n, k, text) for a random polynomial Lagrangian in q and v (degree <= 3)."""
    n = draw(st.integers(1, max_n))
    k = draw(st.integers(1, max_k))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = random.Random(seed)
    text, _ = random_polynomial(rng, symbol_names(n, k), max_terms=5, max_degree=3)
    return n, k, text


def quadratic_lagrangian(rng, n, k):
    """Hyperregular v-quadratic L: 1/2 v.A.v + b.v + c with A = B^T B + I."""
    vs = symbol_names(n, k, ("v",))
    N = len(vs)
    B = [[rng.randint(-2, 2) for _ in range(N)] for _ in range(N)]
    A = [[sum(B[r][i] * B[r][j] for r in range(N)) + (1 if i == j else 0) for j in range(N)] for i in range(N)]
    parts = []
    for i in range(N):
        for j in range(N):
            if A[i][j]:
                parts.append(f"({A[i][j]}/2)*{vs[i]}*{vs[j]}")
    qs = symbol_names(n, k, ("q",))
    for i in range(N):
        b = rng.randint(-2, 2)
        if b:
            parts.append(f"({b})*{rng.choice(qs)}*{vs[i]}")
    parts.append(f"({rng.randint(-3, 3)})*{rng.choice(qs)}^2")
    return " + ".join(parts)


def parse_nk(text, n, k):
    return parse(text, (n, k))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

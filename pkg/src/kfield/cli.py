"""Command-line entry point: ``kfield <command> ...``.

Exit codes: 0 success, 1 domain error (message on stderr), 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import equations as eq
from .geometry import Bundle, DiscreteField, Grid, GridError, make_chart
from .mechanics import (
    LagrangianProblem,
    NotHyperregular,
    UnsupportedForm,
    generalized_energy,
    hamiltonian_from_lagrangian,
    legendre_map,
    velocity_hessian,
)
from .oracle import BoundaryViolation, bump_fields, fd_derivative_check, variational_check
from .solvers import (
    CflViolation,
    CosseratProblem,
    EllipticProblem,
    NonConvergence,
    NotElliptic,
    StepRejected,
    field_error,
    mms_problem,
    solve_cosserat,
    solve_navier,
)
from .symexpr import DomainError, MissingSymbolError, ParseError, parse, to_string


class ProblemFileError(ValueError):
    pass


SYSTEMS = ("el", "implicit-el", "nh-el", "hdw", "nh-hdw")
RESIDUALS = ("lambda-el", "chi-implicit", "chi-nonholonomic", "chi-hdw")
FLAVORS = ("hamilton", "hamilton-pontryagin")

_SECTION_KEYS = {
    "problem": {"n", "k", "params", "lagrangian", "hamiltonian", "bodyforce"},
    "constraint": {"phi", "eta"},
    "grid": {"sizes", "spacings", "origin"},
    "boundary": None,  # q1..qn, checked against n
    "mms": None,
    "cosserat": {"rho", "alpha", "beta", "kk", "rr", "dt", "steps", "ns", "length", "save_every", "twist", "twist_rate"},
}


@dataclass
class ProblemFile:
    problem: LagrangianProblem
    hamiltonian: object = None
    grid: Grid = None
    boundary: list = None
    mms: list = None
    cosserat: dict = field(default_factory=dict)


def _need(table, key, kind, where):
    if key not in table:
        raise ProblemFileError(f"[{where}] is missing '{key}'")
    val = table[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, kind) or isinstance(val, bool) and kind is not bool:
        raise ProblemFileError(f"[{where}] '{key}' must be {kind.__name__}")
    return val


def _strict(table, allowed, where):
    extra = sorted(set(table) - allowed)
    if extra:
        raise ProblemFileError(f"unknown key(s) in [{where}]: {', '.join(extra)}")


def _components(table, n, where, chart):
    _strict(table, {f"q{i}" for i in range(1, n + 1)}, where)
    try:
        return [parse(_need(table, f"q{i}", str, where), chart) for i in range(1, n + 1)]
    except ParseError as exc:
        raise ProblemFileError(f"[{where}] {exc}") from exc


def load_problem(text):
    """Parse problem-file text (TOML syntax, strict keys)."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ProblemFileError(f"problem file syntax: {exc}") from exc
    _strict(doc, set(_SECTION_KEYS), "top level")
    if "problem" not in doc:
        raise ProblemFileError("missing [problem] section")
    pt = doc["problem"]
    _strict(pt, _SECTION_KEYS["problem"], "problem")
    n = _need(pt, "n", int, "problem")
    k = _need(pt, "k", int, "problem")
    if n < 1 or k < 1:
        raise ProblemFileError("[problem] n and k must be positive")
    chart = (n, k)
    params = pt.get("params", {})
    if not isinstance(params, dict):
        raise ProblemFileError("[problem] 'params' must be a table")
    for name, val in params.items():
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ProblemFileError(f"[problem] parameter '{name}' must be a number")
    params = {name: float(val) for name, val in params.items()}
    try:
        L = parse(_need(pt, "lagrangian", str, "problem"), chart)
        H = parse(pt["hamiltonian"], chart) if "hamiltonian" in pt else None
        bf = None
        if "bodyforce" in pt:
            if not isinstance(pt["bodyforce"], list) or len(pt["bodyforce"]) != n:
                raise ProblemFileError(f"[problem] 'bodyforce' must be a list of {n} strings")
            bf = [parse(s, chart) for s in pt["bodyforce"]]
        cons = None
        if "constraint" in doc:
            phis, etas = [], []
            for c in doc["constraint"]:
                _strict(c, _SECTION_KEYS["constraint"], "constraint")
                phis.append(_need(c, "phi", str, "constraint"))
                forms = _need(c, "eta", list, "constraint")
                if len(forms) != k or not all(isinstance(s, str) for s in forms):
                    raise ProblemFileError(f"[[constraint]] 'eta' must be a list of {k} one-form strings")
                etas.append(forms)
            cons = eq.ConstraintSet.from_strings(n, k, phis, etas)
    except ParseError as exc:
        raise ProblemFileError(f"[problem] {exc}") from exc
    problem = LagrangianProblem(n, k, L, params, bf, cons)
    pf = ProblemFile(problem, H)
    if "grid" in doc:
        g = doc["grid"]
        _strict(g, _SECTION_KEYS["grid"], "grid")
        sizes = tuple(_need(g, "sizes", list, "grid"))
        spacings = tuple(float(h) for h in _need(g, "spacings", list, "grid"))
        origin = tuple(float(o) for o in g.get("origin", [0.0] * len(sizes)))
        if len(sizes) != k or len(spacings) != k or len(origin) != k:
            raise ProblemFileError(f"[grid] needs {k} sizes, spacings and origin entries")
        pf.grid = Grid(sizes, spacings, origin)
    if "boundary" in doc:
        pf.boundary = _components(doc["boundary"], n, "boundary", chart)
    if "mms" in doc:
        pf.mms = _components(doc["mms"], n, "mms", chart)
    if "cosserat" in doc:
        ct = doc["cosserat"]
        _strict(ct, _SECTION_KEYS["cosserat"], "cosserat")
        rename = {"kk": "K", "rr": "R"}
        for key, val in ct.items():
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ProblemFileError(f"[cosserat] '{key}' must be a number")
            if key in ("steps", "ns", "save_every") and not isinstance(val, int):
                raise ProblemFileError(f"[cosserat] '{key}' must be an integer")
            pf.cosserat[rename.get(key, key)] = val
    return pf


def read_problem(path):
    with open(path, encoding="utf-8") as fh:
        return load_problem(fh.read())


# ------------------------------------------------------------------ field IO

def _chart_from_header(names, n, k):
    for b in Bundle:
        chart = make_chart(n, k, b)
        if chart.names() == names:
            return chart
    raise GridError(f"CSV columns do not match any chart with n={n}, k={k}")


def read_field(path, n, k):
    """Read a field CSV; the grid is recovered from the x[a] columns."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 2:
        raise GridError("field CSV has no data rows")
    header = rows[0]
    if header[:k] != [f"x[{a}]" for a in range(1, k + 1)]:
        raise GridError(f"field CSV must start with x[1]..x[{k}]")
    chart = _chart_from_header(header[k:], n, k)
    grid = _grid_from_columns(np.array([[float(t) for t in r[:k]] for r in rows[1:]]))
    return DiscreteField.from_csv(text, chart, grid)


def _grid_from_columns(xs):
    sizes, spacings, origin = [], [], []
    for a in range(xs.shape[1]):
        axis = np.unique(xs[:, a])
        if axis.size < 3:
            raise GridError("each grid axis needs at least 3 nodes")
        steps = np.diff(axis)
        if np.max(np.abs(steps - steps.mean())) > 1e-9 * max(1.0, abs(steps.mean())):
            raise GridError("field CSV grid is not uniform")
        sizes.append(int(axis.size))
        spacings.append(float((axis[-1] - axis[0]) / (axis.size - 1)))
        origin.append(float(axis[0]))
    return Grid(tuple(sizes), tuple(spacings), tuple(origin))


def write_multipliers(mf, path):
    m, k = mf.values.shape[:2]
    cols = [f"x[{a}]" for a in range(1, mf.grid.k + 1)]
    cols += [eq.multiplier_name(A, a) for A in range(1, m + 1) for a in range(1, k + 1)]
    mesh = [x.ravel() for x in mf.grid.mesh()]
    flat = mf.values.reshape(m * k, -1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in range(flat.shape[1]):
            w.writerow([f"{x[r]:.17g}" for x in mesh] + [f"{v:.17g}" for v in flat[:, r]])


def read_multipliers(path, grid, m, k):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    expected = [f"x[{a}]" for a in range(1, grid.k + 1)]
    expected += [eq.multiplier_name(A, a) for A in range(1, m + 1) for a in range(1, k + 1)]
    if rows[0] != expected:
        raise GridError(f"multiplier CSV header {rows[0]} does not match {expected}")
    data = np.array([[float(t) for t in r] for r in rows[1:]])
    vals = data[:, grid.k:].T.reshape((m, k) + grid.sizes)
    return eq.MultiplierField(vals, grid)


def multipliers_path(out):
    root, _ = os.path.splitext(out)
    return root + ".multipliers.csv"


# ----------------------------------------------------------------- commands

def _emit(text, out=None):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _kv(pairs):
    out = []
    for key, val in pairs:
        if isinstance(val, float):
            val = f"{val:.17g}"
        elif isinstance(val, bool):
            val = str(val).lower()
        out.append(f"{key} = {val}\n")
    return "".join(out)


def _parse_at(text):
    values = {}
    for item in filter(None, (t.strip() for t in text.split(","))):
        name, sep, val = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected name=value, got {item!r}")
        try:
            values[name.strip()] = float(val)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"{val!r} is not a number") from exc
    return values


def _hamiltonian(pf):
    return pf.hamiltonian if pf.hamiltonian is not None else hamiltonian_from_lagrangian(pf.problem)


def cmd_derive(args):
    pf = read_problem(args.problem)
    P = pf.problem
    s = args.system
    if s == "el":
        system = eq.derive_el(P)
    elif s == "implicit-el":
        system = eq.derive_implicit_el(P)
    elif s == "nh-el":
        system = eq.derive_nh_implicit_el(P, P.constraints)
    elif s == "hdw":
        system = eq.derive_hdw(_hamiltonian(pf), P.n, P.k)
    else:
        system = eq.derive_nh_hdw(P, P.constraints)
    if args.eliminate:
        system = eq.eliminate_hdw(system, P) if s in ("hdw", "nh-hdw") else eq.eliminate_definitions(system, P)
    text = system.render_tree() if args.format == "tree" else system.render_text()
    _emit(text, args.out)
    return 0


def cmd_legendre(args):
    pf = read_problem(args.problem)
    P = pf.problem
    fl = legendre_map(P)
    lines = [f"{ref} = {to_string(e)}\n" for ref, e in fl.momenta.items()]
    if args.check_regularity:
        at = dict(P.params)
        at.update(args.at or {})
        rep = velocity_hessian(P, at=at)
        det = rep.determinant if isinstance(rep.determinant, str) else to_string(rep.determinant).replace(" ", "")
        if rep.verdict == "regular":
            lines.append(f"regular, det = {det}\n")
        else:
            lines.append(f"singular, rank = {rep.rank} of {rep.size}, det = {det}\n")
    _emit("".join(lines))
    return 0


def cmd_energy(args):
    P = read_problem(args.problem).problem
    _emit(f"E = {to_string(generalized_energy(P, args.flavor))}\n")
    return 0


def cmd_solve_navier(args):
    pf = read_problem(args.problem)
    if pf.grid is None:
        raise ProblemFileError("solve navier needs a [grid] section")
    P = pf.problem
    if args.mms:
        if pf.mms is None:
            raise ProblemFileError("--mms needs an [mms] section")
        ep = mms_problem(P, pf.grid, pf.mms)
    else:
        if pf.boundary is None:
            raise ProblemFileError("solve navier needs a [boundary] section")
        ep = EllipticProblem(P, pf.grid, pf.boundary)
    ep.rtol = args.rtol
    ep.max_iter = args.max_iter
    report = solve_navier(ep)
    report.field.to_csv(args.out)
    text = report.to_text()
    if args.mms:
        text += _kv([("mms_max_error", field_error(report.field, pf.mms, P.params))])
    _emit(text)
    return 0


def cmd_solve_cosserat(args):
    pf = read_problem(args.problem)
    kwargs = dict(pf.cosserat)
    if args.dt is not None:
        kwargs["dt"] = args.dt
    cp = CosseratProblem(**kwargs)
    report = solve_cosserat(cp)
    report.field.to_csv(args.out)
    write_multipliers(report.multipliers, multipliers_path(args.out))
    _emit(report.to_text())
    return 0


def cmd_verify_residual(args):
    pf = read_problem(args.problem)
    P = pf.problem
    if args.mms:
        if pf.mms is None:
            raise ProblemFileError("--mms needs an [mms] section")
        P = mms_problem(P, pf.grid, pf.mms).problem
    fld = read_field(args.field, P.n, P.k)
    target = eq.RESIDUAL_CHARTS[args.which]
    mapped = "none"
    if fld.chart.bundle is Bundle.Q and target is not Bundle.Q:
        if target is Bundle.COTANGENT:
            fld, mapped = eq.legendre_field(P, fld), "legendre"
        else:
            fld, mapped = eq.pontryagin_field(P, fld), "pontryagin"
    mult = None
    if args.which == "chi-nonholonomic":
        if args.multipliers is None:
            raise ValueError("chi-nonholonomic needs --multipliers")
        mult = read_multipliers(args.multipliers, fld.grid, P.m, P.k)
    elif args.multipliers is not None:
        raise ValueError(f"{args.which} takes no multipliers")
    subject = _hamiltonian(pf) if args.which == "chi-hdw" else P
    rep = eq.intrinsic_residual(args.which, subject, fld, mult, P.params)
    pairs = [("which", args.which), ("mapped", mapped)] + sorted(rep.summary().items())
    _emit(_kv(pairs))
    if args.tol is not None and rep.max_norm() > args.tol:
        raise ValueError(f"residual check failed: max {rep.max_norm():.3e} > tol {args.tol:g}")
    return 0


def cmd_verify_variational(args):
    pf = read_problem(args.problem)
    P = pf.problem
    fld = read_field(args.field, P.n, P.k)
    if args.flavor == "hamilton-pontryagin" and fld.chart.bundle is Bundle.Q:
        fld = eq.pontryagin_field(P, fld)
    bumps = bump_fields(P.n, args.bumps, seed=args.seed, k=P.k)
    pairs = [("flavor", args.flavor), ("bumps", args.bumps), ("seed", args.seed)]
    worst_abs = worst_rel = 0.0
    for j, Z in enumerate(bumps, start=1):
        rep = variational_check(args.flavor, P, fld, Z, eps=(args.eps,), boundary_tol=args.boundary_tol)
        pairs += [
            (f"bump{j}.dS_deps", rep.dS_deps),
            (f"bump{j}.pairing", rep.pairing),
            (f"bump{j}.relative_difference", rep.relative_difference),
        ]
        worst_abs = max(worst_abs, abs(rep.dS_deps))
        worst_rel = max(worst_rel, rep.relative_difference)
    pairs += [("max_abs_dS_deps", worst_abs), ("max_relative_difference", worst_rel)]
    _emit(_kv(pairs))
    if args.tol is not None and worst_abs > args.tol:
        raise ValueError(f"variational check failed: |dS/deps| {worst_abs:.3e} > tol {args.tol:g}")
    return 0


def cmd_verify_fd(args):
    P = read_problem(args.problem).problem
    L = P.lagrangian()
    refs = [r for r in make_chart(P.n, P.k, Bundle.TANGENT).coords]
    pairs = []
    worst = 0.0
    for j, ref in enumerate(refs):
        err = fd_derivative_check(L, ref, points=args.points, seed=args.seed + j)
        pairs.append((f"d/d{ref}", err))
        worst = max(worst, err)
    pairs.append(("max_relative_error", worst))
    _emit(_kv(pairs))
    if worst > args.tol:
        raise ValueError(f"fd check failed: max relative error {worst:.3e} > tol {args.tol:g}")
    return 0


# ------------------------------------------------------------------- parser

def _positive_int(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return val


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random draw (default 0)")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker threads (default 1)")

    ap = argparse.ArgumentParser(prog="kfield", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("derive", parents=[common], help="derive a PDE system")
    p.add_argument("--problem", required=True)
    p.add_argument("--system", required=True, choices=SYSTEMS)
    p.add_argument("--format", choices=("text", "tree"), default="text")
    p.add_argument("--out")
    p.add_argument("--eliminate", action="store_true", help="eliminate definition rows")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("legendre", parents=[common], help="Legendre map and regularity")
    p.add_argument("--problem", required=True)
    p.add_argument("--check-regularity", action="store_true")
    p.add_argument("--at", type=_parse_at)
    p.set_defaults(func=cmd_legendre)

    p = sub.add_parser("energy", parents=[common], help="generalized energy")
    p.add_argument("--problem", required=True)
    p.add_argument("--flavor", required=True, choices=("pontryagin", "lagrangian"))
    p.set_defaults(func=cmd_energy)

    solve = sub.add_parser("solve", help="numerical solvers").add_subparsers(dest="solver", required=True)
    p = solve.add_parser("navier", parents=[common])
    p.add_argument("--problem", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mms", action="store_true")
    p.add_argument("--rtol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=_positive_int, default=None)
    p.set_defaults(func=cmd_solve_navier)
    p = solve.add_parser("cosserat", parents=[common])
    p.add_argument("--problem", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dt", type=float, default=None)
    p.set_defaults(func=cmd_solve_cosserat)

    verify = sub.add_parser("verify", help="independent checks").add_subparsers(dest="check", required=True)
    p = verify.add_parser("residual", parents=[common])
    p.add_argument("--problem", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--which", required=True, choices=RESIDUALS)
    p.add_argument("--multipliers")
    p.add_argument("--mms", action="store_true", help="include the manufactured body force")
    p.add_argument("--tol", type=float, default=None)
    p.set_defaults(func=cmd_verify_residual)
    p = verify.add_parser("variational", parents=[common])
    p.add_argument("--problem", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--flavor", required=True, choices=FLAVORS)
    p.add_argument("--bumps", required=True, type=_positive_int)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--boundary-tol", type=float, default=1e-14)
    p.add_argument("--tol", type=float, default=None)
    p.set_defaults(func=cmd_verify_variational)
    p = verify.add_parser("fd", parents=[common])
    p.add_argument("--problem", required=True)
    p.add_argument("--points", required=True, type=_positive_int)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_verify_fd)
    return ap


DOMAIN_ERRORS = (
    ProblemFileError,
    ParseError,
    GridError,
    DomainError,
    MissingSymbolError,
    NotHyperregular,
    UnsupportedForm,
    NotElliptic,
    NonConvergence,
    StepRejected,
    CflViolation,
    BoundaryViolation,
    eq.RankDeficient,
    eq.ChartMismatch,
    ValueError,
    ArithmeticError,
    OSError,
)


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except DOMAIN_ERRORS as exc:
        print(f"kfield: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

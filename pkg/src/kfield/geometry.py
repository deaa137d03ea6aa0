"""Bundle charts, discrete fields on rectangular grids, and complete lifts."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .symexpr import Var, VarRef, add, differentiate, free_refs, mul, neg, normalize


class Bundle(str, Enum):
    Q = "Q"
    TANGENT = "T"
    COTANGENT = "T*"
    PONTRYAGIN = "M"
    ITERATED = "Iterated"
    ITERATED_M = "IteratedM"


_ALIASES = {
    "q": Bundle.Q,
    "base": Bundle.Q,
    "t": Bundle.TANGENT,
    "tangent": Bundle.TANGENT,
    "t*": Bundle.COTANGENT,
    "cotangent": Bundle.COTANGENT,
    "m": Bundle.PONTRYAGIN,
    "pontryagin": Bundle.PONTRYAGIN,
    "iterated": Bundle.ITERATED,
    "iteratedm": Bundle.ITERATED_M,
}


def bundle_tag(tag):
    if isinstance(tag, Bundle):
        return tag
    try:
        return _ALIASES[str(tag).lower()]
    except KeyError:
        raise ValueError(f"unknown bundle {tag!r}") from None


# base bundle -> its first-prolongation target
PROLONGATION = {
    Bundle.Q: Bundle.TANGENT,
    Bundle.COTANGENT: Bundle.ITERATED,
    Bundle.PONTRYAGIN: Bundle.ITERATED_M,
}


def _qs(n):
    return [VarRef("q", (i,)) for i in range(1, n + 1)]


def _vs(n, k, role="v"):
    # alpha-major, field index fastest: v^1_1, v^2_1, v^1_2, ...
    return [VarRef(role, (i, a)) for a in range(1, k + 1) for i in range(1, n + 1)]


def _ps(n, k):
    # p^1_1, p^1_2, ..., p^2_1, ...
    return [VarRef("p", (a, i)) for a in range(1, k + 1) for i in range(1, n + 1)]


def _us(n, k):
    # u[i,a,b] = d p^b_i / dx^a, ordered by (a, b) then i
    return [VarRef("u", (i, a, b)) for a in range(1, k + 1) for b in range(1, k + 1) for i in range(1, n + 1)]


def _ss(n, k):
    # s[i,b,a] = d v^i_b / dx^a, ordered by (a, b) then i
    return [VarRef("s", (i, b, a)) for a in range(1, k + 1) for b in range(1, k + 1) for i in range(1, n + 1)]


@dataclass(frozen=True)
class Chart:
    n: int
    k: int
    bundle: Bundle
    coords: tuple = field(init=False, repr=False, compare=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n, k = self.n, self.k
        b = self.bundle
        if b is Bundle.Q:
            refs = _qs(n)
        elif b is Bundle.TANGENT:
            refs = _qs(n) + _vs(n, k)
        elif b is Bundle.COTANGENT:
            refs = _qs(n) + _ps(n, k)
        elif b is Bundle.PONTRYAGIN:
            refs = _qs(n) + _vs(n, k) + _ps(n, k)
        elif b is Bundle.ITERATED:
            refs = _qs(n) + _ps(n, k) + _vs(n, k, "w") + _us(n, k)
        else:
            refs = _qs(n) + _vs(n, k) + _ps(n, k) + _vs(n, k, "w") + _ss(n, k) + _us(n, k)
        object.__setattr__(self, "coords", tuple(refs))
        object.__setattr__(self, "_index", {r: j for j, r in enumerate(refs)})

    @property
    def dim(self):
        return len(self.coords)

    def index(self, ref):
        try:
            return self._index[ref]
        except KeyError:
            raise KeyError(f"{ref} is not a coordinate of the {self.bundle.value} chart") from None

    def __contains__(self, ref):
        return ref in self._index

    def names(self):
        return [str(r) for r in self.coords]

    def base(self):
        return make_chart(self.n, self.k, Bundle.Q)


def make_chart(n, k, bundle):
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise ValueError(f"n must be a positive integer, got {n!r}")
    if not (isinstance(k, (int, np.integer)) and k >= 1):
        raise ValueError(f"k must be a positive integer, got {k!r}")
    return Chart(int(n), int(k), bundle_tag(bundle))


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    sizes: tuple
    spacings: tuple
    origin: tuple = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        spacings = tuple(float(h) for h in self.spacings)
        origin = tuple(float(o) for o in self.origin) if self.origin is not None else (0.0,) * len(sizes)
        if not (len(sizes) == len(spacings) == len(origin)):
            raise GridError("sizes, spacings and origin must have one entry per axis")
        if any(s < 3 for s in sizes):
            raise GridError(f"every axis needs at least 3 nodes, got {sizes}")
        if any(not h > 0 for h in spacings):
            raise GridError(f"spacings must be positive, got {spacings}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "spacings", spacings)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def uniform(cls, sizes, lower, upper):
        """Grid with ``sizes[a]`` nodes spanning [lower[a], upper[a]]."""
        h = [(hi - lo) / (s - 1) for s, lo, hi in zip(sizes, lower, upper)]
        return cls(tuple(sizes), tuple(h), tuple(lower))

    @property
    def k(self):
        return len(self.sizes)

    def axes(self):
        return [o + h * np.arange(s) for s, h, o in zip(self.sizes, self.spacings, self.origin)]

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def interior(self, width=1):
        return tuple(slice(width, s - width) for s in self.sizes)


class DiscreteField:
    """Values of a map from a grid into a chart; ``values[..., j]`` is coordinate j."""

    def __init__(self, chart, grid, values):
        values = np.asarray(values, dtype=float)
        if grid.k != chart.k:
            raise GridError(f"grid has {grid.k} axes but the chart has k={chart.k}")
        if values.shape != grid.sizes + (chart.dim,):
            raise GridError(f"values shape {values.shape} does not match {grid.sizes + (chart.dim,)}")
        self.chart = chart
        self.grid = grid
        self.values = values

    def __getitem__(self, ref):
        return self.values[..., self.chart.index(ref)]

    def assignment(self):
        """Symbol table for ``evaluate``: coordinates plus base x[a]."""
        env = {r: self.values[..., j] for j, r in enumerate(self.chart.coords)}
        for a, xa in enumerate(self.grid.mesh(), start=1):
            env[VarRef("x", (a,))] = xa
        return env

    @classmethod
    def from_function(cls, chart, grid, fn):
        """Sample ``fn(*mesh) -> sequence of chart.dim arrays``."""
        mesh = grid.mesh()
        comps = fn(*mesh)
        vals = np.stack([np.broadcast_to(np.asarray(c, dtype=float), grid.sizes) for c in comps], axis=-1)
        return cls(chart, grid, vals)

    def to_csv(self, path_or_buf=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x[{a}]" for a in range(1, self.grid.k + 1)] + self.chart.names())
        mesh = [m.ravel() for m in self.grid.mesh()]
        flat = self.values.reshape(-1, self.chart.dim)
        for row in range(flat.shape[0]):
            w.writerow([f"{m[row]:.17g}" for m in mesh] + [f"{val:.17g}" for val in flat[row]])
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return None

    @classmethod
    def from_csv(cls, path_or_text, chart, grid):
        if isinstance(path_or_text, str) and "\n" in path_or_text:
            text = path_or_text
        else:
            with open(path_or_text) as fh:
                text = fh.read()
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        expected = [f"x[{a}]" for a in range(1, grid.k + 1)] + chart.names()
        if header != expected:
            raise GridError(f"CSV header {header} does not match {expected}")
        data = np.array([[float(t) for t in r] for r in rows[1:]], dtype=float)
        vals = data[:, grid.k:].reshape(grid.sizes + (chart.dim,))
        return cls(chart, grid, vals)


def _gradient(a, grid, axis):
    return np.gradient(a, grid.spacings[axis], axis=axis, edge_order=2)


def prolong_discrete(f, scheme="centered"):
    """Discrete first prolongation: append finite-difference partials.

    Interior nodes use centered differences, boundary nodes the 3-point
    one-sided closure, so the result is second order everywhere.
    """
    if scheme not in ("centered", "one-sided-boundary"):
        raise ValueError(f"unknown scheme {scheme!r}")
    src = f.chart
    if src.bundle not in PROLONGATION:
        raise ValueError(f"cannot prolong a field on the {src.bundle.value} chart")
    if any(s < 3 for s in f.grid.sizes):
        raise GridError("prolongation needs at least 3 nodes per axis")
    target = make_chart(src.n, src.k, PROLONGATION[src.bundle])
    out = np.empty(f.grid.sizes + (target.dim,))
    for j, ref in enumerate(src.coords):
        out[..., target.index(ref)] = f.values[..., j]
    vel_role = "v" if src.bundle is Bundle.Q else "w"
    for j, ref in enumerate(src.coords):
        comp = f.values[..., j]
        for a in range(1, src.k + 1):
            d = _gradient(comp, f.grid, a - 1)
            i = ref.indices
            if ref.role == "q":
                dst = VarRef(vel_role, (i[0], a))
            elif ref.role == "v":
                dst = VarRef("s", (i[0], i[1], a))
            else:  # p[b,i]
                dst = VarRef("u", (i[1], a, i[0]))
            out[..., target.index(dst)] = d
    return DiscreteField(target, f.grid, out)


class VectorFieldOnQ:
    """Z = Z^i d/dq^i with components depending on q and parameters only."""

    def __init__(self, components, k=1):
        self.components = list(components)
        self.n = len(self.components)
        self.k = k
        for c in self.components:
            bad = [r for r in free_refs(c) if not (isinstance(r, VarRef) and r.role == "q")]
            if bad:
                raise ValueError(f"vector field component depends on non-base symbols {bad}")


def complete_lift(Z, target):
    """Components of the complete lift of ``Z`` in ``target`` chart order."""
    target = bundle_tag(target)
    if target not in (Bundle.TANGENT, Bundle.COTANGENT, Bundle.PONTRYAGIN):
        raise ValueError(f"complete lift to {target.value} is not supported")
    n, k = Z.n, Z.k
    chart = make_chart(n, k, target)
    dZ = [[differentiate(Z.components[jj], VarRef("q", (ii,))) for ii in range(1, n + 1)] for jj in range(n)]
    comps = {}
    for i in range(1, n + 1):
        comps[VarRef("q", (i,))] = Z.components[i - 1]
    if target in (Bundle.TANGENT, Bundle.PONTRYAGIN):
        for a in range(1, k + 1):
            for j in range(1, n + 1):
                comps[VarRef("v", (j, a))] = normalize(
                    add(*[mul(Var(VarRef("v", (i, a))), dZ[j - 1][i - 1]) for i in range(1, n + 1)])
                )
    if target in (Bundle.COTANGENT, Bundle.PONTRYAGIN):
        for a in range(1, k + 1):
            for j in range(1, n + 1):
                comps[VarRef("p", (a, j))] = normalize(
                    neg(add(*[mul(Var(VarRef("p", (a, i))), dZ[i - 1][j - 1]) for i in range(1, n + 1)]))
                )
    return [comps[r] for r in chart.coords]

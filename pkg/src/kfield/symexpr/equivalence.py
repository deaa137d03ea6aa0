"""Equality of expressions: exact for polynomials, sampled otherwise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expr import CONSTANTS, DomainError, evaluate
from .poly import to_poly

SAMPLE_SEED = 20_190_521
SAMPLE_POINTS = 64
SAMPLE_RTOL = 1e-9
SAMPLE_LOW, SAMPLE_HIGH = -2.0, 2.0
MIN_DENOMINATOR = 1e-3
MAX_RESAMPLE = 8


@dataclass(frozen=True)
class Equivalence:
    equal: bool
    certificate: str  # "polynomial" or "sampled"

    def __bool__(self):
        return self.equal


def _symbol_order(symbols):
    from .expr import leaf_sort_key

    return sorted(symbols, key=leaf_sort_key)


def equivalent(a, b, *, seed=SAMPLE_SEED, points=SAMPLE_POINTS, rtol=SAMPLE_RTOL):
    pa, pb = to_poly(a), to_poly(b)
    if pa is not None and pb is not None:
        return Equivalence(pa == pb, "polynomial")
    symbols = [s for s in _symbol_order(a.free_symbols | b.free_symbols) if s not in CONSTANTS]
    rng = np.random.default_rng(seed)
    for _ in range(points):
        for attempt in range(MAX_RESAMPLE):
            vals = rng.uniform(SAMPLE_LOW, SAMPLE_HIGH, size=len(symbols))
            env = dict(zip(symbols, vals.tolist()))
            try:
                va = evaluate(a, env, min_denominator=MIN_DENOMINATOR)
                vb = evaluate(b, env, min_denominator=MIN_DENOMINATOR)
            except DomainError:
                continue
            break
        else:
            raise DomainError(f"no admissible sample point after {MAX_RESAMPLE} attempts")
        if not np.isfinite(va) or not np.isfinite(vb):
            return Equivalence(False, "sampled")
        if abs(va - vb) > rtol * max(1.0, abs(va), abs(vb)):
            return Equivalence(False, "sampled")
    return Equivalence(True, "sampled")

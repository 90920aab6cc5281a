"""When does the collection-limited double Gaussian stand in for the sinc?

The overlap is the cosine similarity, over the plane, of

    f(q) = exp(-q²/(cσ_C²)) · sinc(2q²/σ_S²)   and   g(q) = exp(-q²/(cσ_C²)),

with c = 1 for the coincidence path and c = 2 for singles. Both depend only
on |q|, so the planar integrals reduce to radial ones. Lengths are measured
in units of σ_C, which leaves the ratio σ_S/σ_C as the only parameter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import sinc
from .quadrature import composite_rule

PATHS = {"coincidence": 1.0, "singles": 2.0}
RATIO_TOL = 1e-4
MAX_RATIO = 1e3


class RangeError(ValueError):
    """The requested overlap is not reached on the searched ratio range."""


@dataclass(frozen=True)
class OverlapResult:
    ratio: float
    overlap: float
    path: str


def _radial_rule(c: float, ratio: float, order: int = 64):
    # Gaussian support ends near r = 8√c; the sinc oscillates on the scale σ_S/√(2r)
    r_max = 8.0 * math.sqrt(c)
    n_osc = 2.0 * r_max**2 / ratio**2 / math.pi
    n_panels = int(min(400, max(8, math.ceil(2 * n_osc))))
    return composite_rule(np.linspace(0.0, r_max, n_panels + 1), order)


def cl_overlap(ratio: float, path: str = "coincidence") -> float:
    """⟨f, g⟩ / (‖f‖ ‖g‖) with the planar measure 2πr dr."""
    if path not in PATHS:
        raise ValueError(f"path must be one of {tuple(PATHS)}, got {path!r}")
    if not ratio > 0:
        raise ValueError("ratio must be positive")
    c = PATHS[path]
    r, w = _radial_rule(c, ratio)
    w = w * r  # 2π cancels in the ratio
    g = np.exp(-r * r / c)
    f = g * sinc(2.0 * r * r / ratio**2)
    cos = np.sum(w * f * g) / math.sqrt(np.sum(w * f * f) * np.sum(w * g * g))
    return float(min(cos, 1.0))


def overlap_result(ratio: float, path: str = "coincidence") -> OverlapResult:
    return OverlapResult(float(ratio), cl_overlap(ratio, path), path)


def threshold_ratio(target_overlap: float, path: str = "coincidence") -> float:
    """Smallest σ_S/σ_C with overlap ≥ target, by bisection to 1e-4 in the ratio."""
    if not 0.5 < target_overlap < 1.0:
        raise ValueError("target_overlap must lie in (0.5, 1)")
    lo, hi = 0.5, 1.0
    if cl_overlap(lo, path) >= target_overlap:
        return lo
    while cl_overlap(hi, path) < target_overlap:
        lo, hi = hi, 2.0 * hi
        if hi > MAX_RATIO:
            raise RangeError(f"overlap {target_overlap} not reached for ratio <= {MAX_RATIO:g}")
    while hi - lo > RATIO_TOL:
        mid = 0.5 * (lo + hi)
        if cl_overlap(mid, path) >= target_overlap:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def overlap_table(ratios, paths=("coincidence", "singles")):
    return [overlap_result(r, p) for r in ratios for p in paths]

"""Analytic SLM transfer functions built from disks and π phase steps."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

GAIN_TOL = 1e-12


class GainError(ValueError):
    """A hologram whose pointwise modulus would exceed one."""


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"disk radius must be positive, got {self.radius!r}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        dx = q[..., 0] - self.center[0]
        dy = q[..., 1] - self.center[1]
        return (dx * dx + dy * dy <= self.radius**2).astype(float)

    def shifted(self, dx: float, dy: float = 0.0) -> "Disk":
        return Disk((self.center[0] + dx, self.center[1] + dy), self.radius)

    def overlaps(self, other: "Disk") -> bool:
        return math.dist(self.center, other.center) < self.radius + other.radius


@dataclass(frozen=True)
class PiStep:
    """+1 for q_x < edge, -1 for q_x > edge. ``edge = inf`` is the flat hologram."""

    edge: float

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        return np.where(q[..., 0] < self.edge, 1.0, -1.0)

    def shifted(self, dx: float, dy: float = 0.0) -> "PiStep":
        return PiStep(self.edge + dx)


@dataclass(frozen=True)
class Hologram:
    """Φ(q) = global_gain · Σ_k coefficients[k] · primitives[k](q)."""

    primitives: tuple
    coefficients: tuple = None
    global_gain: float = 1.0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        prims = tuple(self.primitives)
        coeffs = self.coefficients
        coeffs = (1.0,) * len(prims) if coeffs is None else tuple(complex(c) for c in coeffs)
        if len(coeffs) != len(prims):
            raise ValueError("one coefficient per primitive is required")
        object.__setattr__(self, "primitives", prims)
        object.__setattr__(self, "coefficients", coeffs)
        if self.max_modulus() > 1.0 + GAIN_TOL:
            raise GainError(f"max |Φ| = {self.max_modulus():.6g} exceeds 1")

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        out = np.zeros(q.shape[:-1], dtype=complex)
        for c, prim in zip(self.coefficients, self.primitives):
            out = out + c * prim(q)
        out = self.global_gain * out
        return out.real if np.all(np.imag(self.coefficients) == 0) else out

    @property
    def disks(self):
        return [p for p in self.primitives if isinstance(p, Disk)]

    @property
    def steps(self):
        return [p for p in self.primitives if isinstance(p, PiStep)]

    def max_modulus(self) -> float:
        """Exact sup |Φ| for disk-only or step-only holograms; a safe bound otherwise."""
        if not self.primitives:
            return 0.0
        g = abs(self.global_gain)
        if len(self.disks) == len(self.primitives):
            return g * _disk_sup(self.disks, self.coefficients)
        if len(self.steps) == len(self.primitives):
            edges = sorted({s.edge for s in self.steps})
            probes = [edges[0] - 1.0] + [e + 1e-9 * max(1.0, abs(e)) for e in edges if math.isfinite(e)]
            best = 0.0
            for x in probes:
                val = sum(c * (1.0 if x < s.edge else -1.0) for c, s in zip(self.coefficients, self.steps))
                best = max(best, abs(val))
            return g * best
        return g * sum(abs(c) for c in self.coefficients)

    def shifted(self, dx: float, dy: float = 0.0) -> "Hologram":
        return Hologram(tuple(p.shifted(dx, dy) for p in self.primitives), self.coefficients,
                        self.global_gain, self.label)

    def terms(self):
        """(coefficient × gain, primitive) pairs: the hologram is linear in these."""
        return [(self.global_gain * c, p) for c, p in zip(self.coefficients, self.primitives)]


def _disk_sup(disks, coeffs) -> float:
    if not any(a.overlaps(b) for a, b in itertools.combinations(disks, 2)):
        return max(abs(c) for c in coeffs)
    # overlapping disks: probe centres and a ring of boundary points of each disk
    pts = []
    for d in disks:
        pts.append(d.center)
        for t in np.linspace(0, 2 * np.pi, 64, endpoint=False):
            for s in (0.999999, 0.5):
                pts.append((d.center[0] + s * d.radius * np.cos(t), d.center[1] + s * d.radius * np.sin(t)))
    pts = np.asarray(pts)
    val = sum(c * d(pts) for c, d in zip(coeffs, disks))
    return float(np.max(np.abs(val)))


def flat() -> Hologram:
    return Hologram((PiStep(math.inf),), label="flat")


def pi_step(edge: float) -> Hologram:
    return Hologram((PiStep(float(edge)),), label=f"pi_step({edge:g})")


def pixel(center, radius: float) -> Hologram:
    return Hologram((Disk(tuple(center), radius),), label="pixel")

"""Pixel bases, the post-selected state matrix T_ab and its entanglement metrics.

Signal pixels are disks in the signal momentum plane; the idler basis is the
point mirror (q → -q) of the signal basis, so that perfect anti-correlation
maps pixel a onto idler pixel a and T is diagonal in the σ_P → 0 limit.

T_ab for the collection-limited model is evaluated semi-analytically: after
mirroring the idler, the kernel factorises into x and y parts, the signal y
integral over each chord is an erf difference, and the remaining three
coordinates use Gauss-Legendre rules with a sine substitution that removes
the square-root end behaviour of disk chords.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf, erfc

from .holograms import Disk, Hologram
from .kvfile import dump_kv
from .model import JtmaParams, amplitude_function, momentum_to_slm, pump_factor, sinc
from .quadrature import (CHUNK_POINTS, QuadratureSpec, QuadResult, composite_rule, disk_rule,
                         gauss_legendre, refine)

LAYOUTS = ("hex", "rings")
# pairs whose edge-to-edge gap exceeds this many σ̃_P contribute below e^-40
PRUNE_GAPS = 9.0
PANEL_WIDTHS = 12.0  # chord panels in units of the narrow kernel width
MAX_PANELS = 4


class PackingError(ValueError):
    """The requested pixels do not fit inside the collection disk."""


# ---------------------------------------------------------------------------
# bases

@dataclass(frozen=True)
class PixelBasis:
    pixels: tuple
    layout: str
    max_radius: float
    ring_counts: tuple = ()

    def __post_init__(self):
        pixels = tuple(self.pixels)
        if not pixels:
            raise ValueError("a basis needs at least one pixel")
        object.__setattr__(self, "pixels", pixels)
        for a, b in itertools.combinations(range(len(pixels)), 2):
            pa, pb = pixels[a], pixels[b]
            if math.dist(pa.center, pb.center) <= pa.radius + pb.radius:
                raise PackingError(f"pixels {a} and {b} are not disjoint")
        for k, px in enumerate(pixels):
            if math.hypot(*px.center) + px.radius > self.max_radius * (1 + 1e-12):
                raise PackingError(f"pixel {k} extends beyond the collection radius {self.max_radius:g}")

    @property
    def d(self) -> int:
        return len(self.pixels)

    def mirrored(self) -> "PixelBasis":
        return PixelBasis(tuple(Disk((-p.center[0], -p.center[1]), p.radius) for p in self.pixels),
                          self.layout, self.max_radius, self.ring_counts)

    def min_gap(self) -> float:
        gaps = [math.dist(a.center, b.center) - a.radius - b.radius
                for a, b in itertools.combinations(self.pixels, 2)]
        return min(gaps) if gaps else math.inf

    def to_dict(self, lambda_nm: float | None = None, focal_length_mm: float | None = None) -> dict:
        out = {"d": self.d, "layout": self.layout, "max_radius_rad_per_mm": self.max_radius}
        cx = [p.center[0] for p in self.pixels]
        cy = [p.center[1] for p in self.pixels]
        rr = [p.radius for p in self.pixels]
        out.update(center_x_rad_per_mm=cx, center_y_rad_per_mm=cy, radius_rad_per_mm=rr)
        if lambda_nm and focal_length_mm:
            out["lambda_nm"] = lambda_nm
            out["focal_length_mm"] = focal_length_mm
            out["center_x_slm_mm"] = [float(v) for v in momentum_to_slm(cx, lambda_nm, focal_length_mm)]
            out["center_y_slm_mm"] = [float(v) for v in momentum_to_slm(cy, lambda_nm, focal_length_mm)]
            out["radius_slm_mm"] = [float(v) for v in momentum_to_slm(rr, lambda_nm, focal_length_mm)]
        return out

    def dumps(self, lambda_nm=None, focal_length_mm=None) -> str:
        return dump_kv(self.to_dict(lambda_nm, focal_length_mm), header="pixel basis")


def hex_points(d: int) -> np.ndarray:
    """First d triangular-lattice points (unit pitch) ordered by distance, then angle."""
    m = int(math.ceil(math.sqrt(d))) + 2
    pts = []
    for i in range(-m, m + 1):
        for j in range(-m, m + 1):
            x, y = i + 0.5 * j, j * math.sqrt(3) / 2
            ang = math.atan2(y, x) % (2 * math.pi)
            pts.append((round(x * x + y * y, 9), round(ang, 9), x, y))
    pts.sort()
    return np.array([(x, y) for *_, x, y in pts[:d]])


def _hex_rings(d: int) -> int:
    m = 1
    while 3 * m * (m + 1) < d - 1:
        m += 1
    return m


def _split(total: int, parts: int, step: float) -> tuple:
    """Split ``total`` into ``parts`` non-decreasing integers in arithmetic progression."""
    base = total / parts - step * (parts - 1) / 2.0
    raw = [base + step * i for i in range(parts)]
    out = [int(math.floor(v)) for v in raw]
    for i in range(total - sum(out)):
        out[parts - 1 - i % parts] += 1
    return tuple(out)


def candidate_ring_counts(d: int) -> list:
    """Ring partitions tried by the optimiser, most balanced first.

    Up to six pixels form a single ring with no centre pixel, which makes
    every pixel equivalent. Larger d get a centre pixel, a first ring of six
    and the remainder spread over outer rings whose counts grow outwards,
    since the collection roll-off forces outer pixels to be larger.
    """
    if d <= 6:
        return [(d,)]
    m = _hex_rings(d)
    rest = d - 7
    if m == 1 or rest == 0:
        return [(1, 6 + rest)] if rest else [(1, 6)]
    out = []
    for step in (0.0, 1.0, 2.0, 3.0, 4.0, 6.0):
        parts = _split(rest, m - 1, step)
        if parts[0] >= 6 and (1, 6, *parts) not in out:
            out.append((1, 6, *parts))
    return out or [(1, 6, rest)]


def default_ring_counts(d: int) -> tuple:
    """The evenly split candidate partition (used for uniform ring bases)."""
    return candidate_ring_counts(d)[0]


@dataclass(frozen=True)
class RingLayout:
    """Centre pixel plus concentric rings of equally spaced equal pixels.

    Ring radii are not free: each ring sits at the smallest radius that keeps
    an edge-to-edge gap of at least ``gap`` to its own neighbours and to every
    pixel of the rings inside it.
    """

    counts: tuple
    radii: tuple
    gap: float
    offsets: tuple = ()

    def ring_radii(self):
        offsets = self.offsets or (0.0,) * len(self.counts)
        placed = []
        ring_r = []
        for k, (n, rho, off) in enumerate(zip(self.counts, self.radii, offsets)):
            if k == 0 and n == 1:
                R = 0.0
            else:
                R = (rho + 0.5 * self.gap) / math.sin(math.pi / n) if n > 1 else 0.0
                if ring_r:
                    R = max(R, ring_r[-1])
                for c, rj in placed:
                    D = rho + rj + self.gap
                    for j in range(n):
                        th = off + 2 * math.pi * j / n
                        b = c[0] * math.cos(th) + c[1] * math.sin(th)
                        disc = D * D - (c[0] ** 2 + c[1] ** 2) + b * b
                        if disc > 0:
                            R = max(R, b + math.sqrt(disc))
                R *= 1.0 + 1e-12
            ring_r.append(R)
            for j in range(n):
                th = off + 2 * math.pi * j / n
                placed.append(((R * math.cos(th), R * math.sin(th)), rho))
        return ring_r, placed

    def pixels(self):
        return tuple(Disk(c, r) for c, r in self.ring_radii()[1])

    def outer_radius(self) -> float:
        return max(math.hypot(*c) + r for c, r in self.ring_radii()[1])

    def representatives(self):
        """Index of the first pixel of each ring."""
        return list(np.cumsum((0,) + tuple(self.counts))[:-1])


def make_pixel_basis(d: int, layout: str, p: JtmaParams, spacing_factor: float = 1.0,
                     alpha: float = 1.5) -> PixelBasis:
    """d equal disjoint disks inside radius α·σ_C, gap spacing_factor·σ_P, largest radius that fits."""
    if int(d) != d or d < 1:
        raise ValueError("d must be a positive integer")
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}")
    if spacing_factor < 0 or alpha <= 0:
        raise ValueError("spacing_factor must be >= 0 and alpha > 0")
    R = alpha * p.sigma_c
    s = spacing_factor * p.sigma_p
    if d == 1:
        return PixelBasis((Disk((0.0, 0.0), R),), layout, R, (1,))
    if layout == "hex":
        pts = hex_points(d)
        D = float(np.max(np.hypot(pts[:, 0], pts[:, 1])))
        r = (R - D * s) / (1.0 + 2.0 * D)
        if r <= 0:
            raise PackingError(f"{d} hex pixels with gap {s:.4g} do not fit inside radius {R:.4g}")
        pitch = 2.0 * r + s
        pixels = tuple(Disk((float(x * pitch), float(y * pitch)), r) for x, y in pts)
        return PixelBasis(pixels, layout, R)
    counts = default_ring_counts(d)
    lo, hi = 0.0, R
    if RingLayout(counts, (1e-9 * R,) * len(counts), s).outer_radius() > R:
        raise PackingError(f"{d} ring pixels with gap {s:.4g} do not fit inside radius {R:.4g}")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if RingLayout(counts, (mid,) * len(counts), s).outer_radius() <= R:
            lo = mid
        else:
            hi = mid
    return PixelBasis(RingLayout(counts, (lo,) * len(counts), s).pixels(), layout, R, counts)


# ---------------------------------------------------------------------------
# T_ab

def _erf_diff(a, b):
    """erf(b) - erf(a) without cancellation in the tails."""
    out = erf(b) - erf(a)
    out = np.where(a > 2.0, erfc(a) - erfc(b), out)
    return np.where(b < -2.0, erfc(-b) - erfc(-a), out)


def _chord_rule(c: float, rho: float, n: int, lo: float = -math.inf, hi: float = math.inf,
                panel: float = math.inf):
    """Nodes across a disk's x-extent [c - ρ, c + ρ] ∩ [lo, hi], sine-substituted for the chord.

    The range is split into panels no wider than ``panel`` in x, each with n nodes.
    """
    x0, x1 = max(c - rho, lo), min(c + rho, hi)
    if x1 <= x0:
        return np.zeros(0), np.zeros(0)
    m = min(MAX_PANELS, max(1, int(math.ceil((x1 - x0) / panel)))) if math.isfinite(panel) else 1
    xb = np.linspace(x0, x1, m + 1)
    t, w = composite_rule(np.arcsin(np.clip((xb - c) / rho, -1.0, 1.0)), n)
    return c + rho * np.sin(t), w * rho * np.cos(t)


def gaussian_pair_integral(disk_a: Disk, disk_b: Disk, w_minus: float, w_plus: float, n: int) -> float:
    """∬_{x∈A, y∈B} exp(-|x - y|²/2w₋²) exp(-|x + y|²/2w₊²) d²x d²y.

    The y-integral over A is done with erf; the rest by Gauss-Legendre on
    chords. Each disk is clipped to within PRUNE_GAPS·w₋ of the other, where
    the difference kernel is below e^-40, so a small disk against a large
    one is still resolved.
    """
    al = 0.5 / w_minus**2 + 0.5 / w_plus**2
    be = 0.5 / w_minus**2 - 0.5 / w_plus**2
    ca, ra = disk_a.center, disk_a.radius
    cb, rb = disk_b.center, disk_b.radius
    reach = PRUNE_GAPS * w_minus
    panel = PANEL_WIDTHS * w_minus
    xs, ws = _chord_rule(ca[0], ra, n, cb[0] - rb - reach, cb[0] + rb + reach, panel)
    xp, wp = _chord_rule(cb[0], rb, n, ca[0] - ra - reach, ca[0] + ra + reach, panel)
    if xs.size == 0 or xp.size == 0:
        return 0.0
    hs = np.sqrt(np.clip(ra * ra - (xs - ca[0]) ** 2, 0.0, None))
    hp = np.sqrt(np.clip(rb * rb - (xp - cb[0]) ** 2, 0.0, None))
    # B's chord in y, clipped to A's y-extent widened by the kernel reach
    ylo = np.maximum(cb[1] - hp, ca[1] - ra - reach)
    yhi = np.minimum(cb[1] + hp, ca[1] + ra + reach)
    span = np.clip(yhi - ylo, 0.0, None)
    m = min(MAX_PANELS, max(1, int(math.ceil(float(span.max()) / panel))))
    u, wu = composite_rule(np.linspace(-1.0, 1.0, m + 1), n)
    yp = 0.5 * (ylo + yhi)[:, None] + 0.5 * span[:, None] * u
    wy = 0.5 * span[:, None] * wu
    mu = (be / al) * yp
    sa = math.sqrt(al)
    gy = np.exp((be * be / al - al) * yp * yp) * wy
    Fy = np.empty((xs.size, xp.size))
    step = max(1, CHUNK_POINTS // yp.size)
    for k in range(0, xs.size, step):
        lo = (ca[1] - hs[k:k + step])[:, None, None]
        hi = (ca[1] + hs[k:k + step])[:, None, None]
        F = _erf_diff(sa * (lo - mu), sa * (hi - mu))
        Fy[k:k + step] = 0.5 * math.sqrt(math.pi / al) * np.sum(F * gy, axis=-1)
    fx = np.exp(-al * xs[:, None] ** 2 + 2.0 * be * xs[:, None] * xp[None, :] - al * xp[None, :] ** 2)
    return float(ws @ (fx * Fy) @ wp)


def cl_pair_integral(disk_s: Disk, disk_i: Disk, p: JtmaParams, n: int) -> float:
    """∬ over disk_s × disk_i of the collection-limited JTMA (amp_scale excluded).

    disk_i is in idler coordinates; mirroring it turns the pump factor
    exp(-|q_s + q_i|²/2σ̃²) into a difference kernel.
    """
    mirror = Disk((-disk_i.center[0], -disk_i.center[1]), disk_i.radius)
    return gaussian_pair_integral(disk_s, mirror, p.sigma_pt, p.sigma_c, n)


def polar_pair_integral(disk_s: Disk, disk_i: Disk, p: JtmaParams, model: str, n: int, k=None) -> float:
    """Generic ∬ G over two disks by polar product rules (any model)."""
    G = amplitude_function(model, p, k)
    qs, ws = disk_rule(disk_s.center, disk_s.radius, max(8, n // 2), n)
    qi, wi = disk_rule(disk_i.center, disk_i.radius, max(8, n // 2), n)
    total = 0.0
    step = max(1, (1 << 20) // len(qi))
    for s in range(0, len(qs), step):
        vals = G(qs[s:s + step, None, :], qi[None, :, :])
        total += float(np.sum((vals * wi).sum(axis=-1) * ws[s:s + step]))
    return total


def _pair_gap(a: Disk, b_idler: Disk) -> float:
    """Gap between disk a and the mirror image of idler disk b."""
    return math.hypot(a.center[0] + b_idler.center[0], a.center[1] + b_idler.center[1]) - a.radius - b_idler.radius


def pair_amplitude(disk_s: Disk, disk_i: Disk, p: JtmaParams, model: str = "cl",
                   spec: QuadratureSpec | None = None, k=None) -> QuadResult:
    """T for one pixel pair in the centred frame; refined to the requested tolerance."""
    spec = spec or QuadratureSpec(order=16, max_refinements=3)
    pc = p.centered()
    if model == "cl":
        if _pair_gap(disk_s, disk_i) > PRUNE_GAPS * pc.sigma_pt:
            return QuadResult(0.0, 0.0, True, spec.order)
        res = refine(lambda n: cl_pair_integral(disk_s, disk_i, pc, n), spec)
    else:
        res = refine(lambda n: polar_pair_integral(disk_s, disk_i, pc, model, n, k), spec)
    return QuadResult(pc.amp_scale * res.value, res.error, res.converged, res.order, res.levels)


@dataclass
class ModeMatrix:
    entries: np.ndarray
    basis_norms: np.ndarray
    converged: bool = True
    max_error: float = 0.0

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    def metrics(self) -> "EntanglementMetrics":
        return entanglement_metrics(self.entries)

    def crosstalk(self) -> float:
        """max_{a≠b} |T_ab| / min_a |T_aa|."""
        T = np.abs(self.entries)
        if self.d == 1:
            return 0.0
        off = T[~np.eye(self.d, dtype=bool)]
        return float(off.max() / np.diag(T).min())

    def diagonal_spread(self) -> float:
        """(max - min)/mean of |T_aa|²."""
        d2 = np.abs(np.diag(self.entries)) ** 2
        return float((d2.max() - d2.min()) / d2.mean())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("a", "b", "re", "im"))
        for a in range(self.d):
            for b in range(self.d):
                z = complex(self.entries[a, b])
                w.writerow((a, b, repr(z.real), repr(z.imag)))
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8", newline="\n")


def measurement_mode_norms(basis: PixelBasis, p: JtmaParams, n: int = 32) -> np.ndarray:
    """N^a = (∫_pixel |C(q)|² d²q)^(-1/2) with C the unit-norm Gaussian collection mode."""
    out = []
    for px in basis.pixels:
        q, w = disk_rule(px.center, px.radius, n, 2 * n)
        c2 = collection_mode(q, p.sigma_c) ** 2
        out.append(1.0 / math.sqrt(float(np.sum(w * c2))))
    return np.array(out)


def gram_matrix(basis: PixelBasis, p: JtmaParams, n: int = 32) -> np.ndarray:
    """⟨M^a, M^b⟩ for the normalised measurement modes M^a = N^a Φ^a C."""
    norms = measurement_mode_norms(basis, p, n)
    d = basis.d
    G = np.zeros((d, d))
    for a, px in enumerate(basis.pixels):
        q, w = disk_rule(px.center, px.radius, n, 2 * n)
        c2 = collection_mode(q, p.sigma_c) ** 2
        for b, other in enumerate(basis.pixels):
            G[a, b] = norms[a] * norms[b] * float(np.sum(w * c2 * other(q)))
    return G


def compute_T(basis_s: PixelBasis, basis_i: PixelBasis, p: JtmaParams, model: str = "cl",
              spec: QuadratureSpec | None = None, k=None, threads: int = 1) -> ModeMatrix:
    """T_ab = ∬ Φ^a_s Φ^b_i G over every pixel pair, in the frame centred on the JTMA."""
    if basis_s.d != basis_i.d:
        raise ValueError("signal and idler bases must have the same dimension")
    d = basis_s.d
    pairs = [(a, b) for a in range(d) for b in range(d)]

    def entry(ab):
        return pair_amplitude(basis_s.pixels[ab[0]], basis_i.pixels[ab[1]], p, model, spec, k)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(entry, pairs))
    else:
        results = [entry(ab) for ab in pairs]
    T = np.array([r.value for r in results], dtype=float).reshape(d, d)
    return ModeMatrix(T, measurement_mode_norms(basis_s, p), all(r.converged for r in results),
                      max(r.error for r in results))


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class EntanglementMetrics:
    schmidt_coefficients: np.ndarray
    schmidt_number: float
    fidelity: float
    d_ent_lower_bound: int
    eof: float

    def to_dict(self) -> dict:
        return {"schmidt_number": float(self.schmidt_number), "fidelity_to_maxent": float(self.fidelity),
                "d_ent_lower_bound": int(self.d_ent_lower_bound), "eof_ebits": float(self.eof)}


def fidelity_to_maxent(T) -> float:
    T = np.asarray(T)
    d = T.shape[0]
    return float(abs(np.trace(T)) ** 2 / (d * np.sum(np.abs(T) ** 2)))


def d_ent_from_fidelity(F: float, d: int) -> int:
    """Dimensionality witness: F > k/d certifies Schmidt number above k."""
    x = F * d
    xr = round(x)
    if abs(x - xr) <= 1e-9 * max(1.0, d):
        return int(xr)
    return int(math.floor(x)) + 1


def entanglement_metrics(T) -> EntanglementMetrics:
    """Schmidt number, fidelity to the maximally entangled state, d_ent bound and E_oF (ebits)."""
    T = np.asarray(T)
    norm = np.sqrt(np.sum(np.abs(T) ** 2))
    if not norm > 0:
        raise ValueError("T must be nonzero")
    s = np.linalg.svd(T / norm, compute_uv=False)
    s = np.sort(np.clip(s, 0.0, None))[::-1]
    lam = s**2
    K = 1.0 / float(np.sum(lam**2))
    nz = lam[lam > 0]
    eof = float(-np.sum(nz * np.log2(nz)))
    F = fidelity_to_maxent(T)
    return EntanglementMetrics(s, K, F, d_ent_from_fidelity(F, T.shape[0]), eof if eof > 0 else 0.0)


# ---------------------------------------------------------------------------
# optimisation

@dataclass
class DesignResult:
    basis_s: PixelBasis
    basis_i: PixelBasis
    T: ModeMatrix
    feasible: bool
    layout: RingLayout | None = None
    history: list = field(default_factory=list)

    @property
    def metrics(self) -> EntanglementMetrics:
        return self.T.metrics()


@dataclass(frozen=True)
class DesignConstraints:
    crosstalk_cap: float = 0.01
    spacing_factor: float = 1.0
    alpha: float = 1.5


def _layout_stats(layout: RingLayout, p: JtmaParams, n: int):
    """Diagonal per pixel, worst crosstalk and fidelity from one representative row per ring.

    Every ring is invariant under rotation by 2π/n_k and so is the kernel, so
    the rows of the other pixels in a ring are permutations of the
    representative's row.
    """
    placed = layout.ring_radii()[1]
    disks = [Disk(c, r) for c, r in placed]
    mirrored = [Disk((-dk.center[0], -dk.center[1]), dk.radius) for dk in disks]
    diag = []
    cross = 0.0
    sum_sq = 0.0
    trace = 0.0
    for k, a in enumerate(layout.representatives()):
        row_sq = 0.0
        taa = 0.0
        for b, db in enumerate(mirrored):
            if _pair_gap(disks[a], db) > PRUNE_GAPS * p.sigma_pt:
                continue
            t = cl_pair_integral(disks[a], db, p, n)
            row_sq += t * t
            if b == a:
                taa = t
            else:
                cross = max(cross, abs(t))
        diag.extend([taa] * layout.counts[k])
        sum_sq += row_sq * layout.counts[k]
        trace += taa * layout.counts[k]
    diag = np.array(diag)
    d = diag.size
    return diag, cross / np.min(np.abs(diag)), trace**2 / (d * sum_sq)


def _golden(f, lo, hi, tol):
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d_ = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d_)
    while b - a > tol * max(1.0, abs(a) + abs(b)) * 0.5:
        if fc < fd:
            b, d_, fd = d_, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d_, fd
            d_ = a + g * (b - a)
            fd = f(d_)
    return (c, fc) if fc < fd else (d_, fd)


def optimize_basis(d: int, p: JtmaParams, objective: str = "max_ent",
                   constraints: DesignConstraints | None = None, ring_counts=None,
                   tol: float = 1e-4, max_sweeps: int = 40, screen_sweeps: int = 2, n_quad: int = 16,
                   spec: QuadratureSpec | None = None) -> DesignResult:
    """Equalise the diagonal |T_aa|² of a ring layout under crosstalk and packing constraints.

    Coordinate descent over the log pixel radius of each ring and the log of
    the ring gap (relative to its minimum), each by golden-section search on
    a penalised objective: the coefficient of variation of |T_aa|² plus
    penalties for crosstalk above the cap and pixels leaving the collection
    disk. A step is accepted only when it lowers the objective without
    lowering the fidelity to the maximally entangled state. Without explicit
    ``ring_counts`` every candidate partition gets ``screen_sweeps`` sweeps
    and the best one is then descended to convergence. Uses the
    collection-limited model.
    """
    if objective != "max_ent":
        raise ValueError("only the 'max_ent' objective is supported")
    c = constraints or DesignConstraints()
    if c.crosstalk_cap < 0:
        raise ValueError("crosstalk_cap must be non-negative")
    if c.spacing_factor <= 0:
        raise PackingError("spacing_factor must be positive for disjoint pixels")
    pc = p.centered()
    R = c.alpha * pc.sigma_c
    gap_min = c.spacing_factor * pc.sigma_p
    if ring_counts is not None:
        candidates = [tuple(int(n) for n in ring_counts)]
        if sum(candidates[0]) != d:
            raise ValueError(f"ring counts {candidates[0]} do not add up to d = {d}")
    else:
        candidates = candidate_ring_counts(d)

    runs = []
    for counts in candidates:
        run = _RingDescent(counts, pc, R, gap_min, c.crosstalk_cap, n_quad, tol)
        if run.feasible_start:
            runs.append(run)
    if not runs:
        raise PackingError(f"no ring layout places {d} pixels with gap {gap_min:.4g} inside radius {R:.4g}")
    if len(runs) > 1:
        for run in runs:
            run.descend(screen_sweeps)
        runs.sort(key=lambda r: r.best)
    best = runs[0]
    best.descend(max_sweeps)

    layout = best.layout()
    basis_s = PixelBasis(layout.pixels(), "rings", R, layout.counts)
    basis_i = basis_s.mirrored()
    T = compute_T(basis_s, basis_i, pc, "cl", spec)
    feasible = T.crosstalk() <= c.crosstalk_cap and best.outer <= R * (1 + 1e-9)
    return DesignResult(basis_s, basis_i, T, bool(feasible), layout, best.history)


class _RingDescent:
    """Coordinate-descent state for one ring partition."""

    def __init__(self, counts, p, R, gap_min, cap, n_quad, tol):
        self.counts, self.p, self.R = tuple(counts), p, R
        self.gap_min, self.cap, self.n_quad, self.tol = gap_min, cap, n_quad, tol
        K = len(self.counts)
        lo, hi = 0.0, R
        self.feasible_start = RingLayout(self.counts, (1e-9 * R,) * K, gap_min).outer_radius() <= R
        if not self.feasible_start:
            return
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if RingLayout(self.counts, (mid,) * K, gap_min).outer_radius() <= R:
                lo = mid
            else:
                hi = mid
        self.x = np.array([math.log(lo)] * K + [0.0])
        self.best, self.fid, self.cross, self.outer = self.score(self.x)
        self.history = [(0, self.best, self.fid)]
        self.sweeps = 0
        self.done = False

    def layout(self, x=None) -> RingLayout:
        x = self.x if x is None else x
        K = len(self.counts)
        return RingLayout(self.counts, tuple(float(v) for v in np.exp(x[:K])), self.gap_min * math.exp(x[K]))

    def score(self, x):
        if x[-1] < 0:
            return math.inf, 0.0, math.inf, math.inf
        lay = self.layout(x)
        outer = lay.outer_radius()
        if len(lay.ring_radii()[1]) == 1:
            return 0.0, 1.0, 0.0, outer
        diag, cross, fid = _layout_stats(lay, self.p, self.n_quad)
        d2 = diag**2
        cv = float(d2.std() / d2.mean())
        pen = cv + 100.0 * max(0.0, cross - self.cap) + 100.0 * max(0.0, outer / self.R - 1.0)
        return pen, fid, cross, outer

    def descend(self, sweeps: int) -> None:
        for _ in range(sweeps):
            if self.done:
                return
            improved = False
            for j in range(self.x.size):
                def f(v, j=j):
                    xt = self.x.copy()
                    xt[j] = v
                    return self.score(xt)[0]
                lo = max(self.x[j] - 1.0, 0.0) if j == self.x.size - 1 else self.x[j] - 1.0
                v, fv = _golden(f, lo, self.x[j] + 1.0, self.tol)
                if fv < self.best and self.best - fv > self.tol * max(self.best, 1e-12) * 1e-3:
                    xt = self.x.copy()
                    xt[j] = v
                    pen, fid, cr, out = self.score(xt)
                    if fid >= self.fid - 1e-12:
                        self.x, self.best, self.fid, self.cross, self.outer = xt, pen, fid, cr, out
                        improved = True
            self.sweeps += 1
            self.history.append((self.sweeps, self.best, self.fid))
            if not improved:
                self.done = True


# ---------------------------------------------------------------------------
# holograms, projective statistics and heralding

def superposition_hologram(v, basis: PixelBasis) -> Hologram:
    """Φ^v = A^v Σ v_a Φ^a with A^v = 1/max|v_a| (pixels are disjoint)."""
    v = np.asarray(v, dtype=complex)
    if v.shape != (basis.d,):
        raise ValueError(f"vector length {v.shape} does not match d = {basis.d}")
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise ValueError("zero vector")
    if abs(nrm - 1.0) > 1e-9:
        raise ValueError("superposition vectors must have unit norm")
    gain = 1.0 / float(np.max(np.abs(v)))
    keep = np.abs(v) > 0
    prims = tuple(px for px, k in zip(basis.pixels, keep) if k)
    coeffs = tuple(complex(c) for c in v[keep])
    return Hologram(prims, coeffs, gain, label="superposition")


def hologram_gain(v) -> float:
    v = np.asarray(v, dtype=complex)
    return 1.0 / float(np.max(np.abs(v)))


def collection_mode(q, sigma_c: float):
    """Unit-norm Gaussian collection mode √(2/π)/σ_C · exp(-|q|²/σ_C²)."""
    q = np.asarray(q, dtype=float)
    r2 = q[..., 0] ** 2 + q[..., 1] ** 2
    return math.sqrt(2.0 / math.pi) / sigma_c * np.exp(-r2 / sigma_c**2)


def joint_probability(v_s, v_i, T: ModeMatrix | np.ndarray, p: JtmaParams) -> float:
    """Coincidence probability for superposition holograms v_s, v_i with unit-norm collection modes.

    The amplitude is A^{v_s} A^{v_i} Σ v_a w_b T_ab; the collection modes
    contribute (2/(πσ_C²)) per photon relative to the unnormalised envelope in T.
    """
    return projective_stats(v_s, v_i, T) * (2.0 / (math.pi * p.sigma_c**2)) ** 2


def projective_stats(v_s, v_i, T: ModeMatrix | np.ndarray) -> float:
    """(A^{v_s} A^{v_i})² |Σ_ab v_a w_b T_ab|² in the units of T."""
    T = T.entries if isinstance(T, ModeMatrix) else np.asarray(T)
    v_s = np.asarray(v_s, dtype=complex)
    v_i = np.asarray(v_i, dtype=complex)
    amp = v_s @ T @ v_i
    return float((hologram_gain(v_s) * hologram_gain(v_i)) ** 2 * abs(amp) ** 2)


def generated_amplitude(p: JtmaParams, sinc_factor: bool = True):
    """F(q_s, q_i): the generated JTMA, or its collection-limited stand-in with the sinc set to 1."""
    def F(qs, qi):
        sx, sy = qs[..., 0], qs[..., 1]
        ix, iy = qi[..., 0], qi[..., 1]
        val = pump_factor((sx + ix) ** 2 + (sy + iy) ** 2, p.sigma_p)
        if sinc_factor:
            val = val * sinc(((sx - ix) ** 2 + (sy - iy) ** 2) / p.sigma_s**2)
        return p.amp_scale * val
    return F


def singles_prob(v_s, basis_s: PixelBasis, p: JtmaParams, spec: QuadratureSpec | None = None,
                 sinc_factor: bool = True) -> QuadResult:
    """∫ d²q_i |∫ d²q_s Φ^{v_s}(q_s) C(q_s) F(q_s, q_i)|²; only the signal is collected.

    With the sinc kept, the inner integral uses polar pixel rules and the
    outer one a panelled q_i box around the mirrored pixels, widened by 8σ_P
    where the pump factor is below e^-32. With ``sinc_factor=False`` the q_i
    integral of the two pump Gaussians is done in closed form, leaving a
    disk-pair Gaussian integral per pair of active pixels.
    """
    pc = p.centered()
    holo = superposition_hologram(v_s, basis_s)
    terms = holo.terms()
    if not sinc_factor:
        return _singles_cl(terms, pc, spec or QuadratureSpec(order=16, max_refinements=3))
    spec = spec or QuadratureSpec(order=16, max_refinements=2, target_rel_tol=1e-4)
    F = generated_amplitude(pc, True)
    pad = 8.0 * pc.sigma_p
    xs = [(-d.center[0] - d.radius - pad, -d.center[0] + d.radius + pad) for _, d in terms]
    ys = [(-d.center[1] - d.radius - pad, -d.center[1] + d.radius + pad) for _, d in terms]
    x0, x1 = min(a for a, _ in xs), max(b for _, b in xs)
    y0, y1 = min(a for a, _ in ys), max(b for _, b in ys)
    panel = 3.0 * pc.sigma_p

    def evaluate(n):
        nx = max(1, int(math.ceil((x1 - x0) / panel)))
        ny = max(1, int(math.ceil((y1 - y0) / panel)))
        gx, wx = composite_rule(np.linspace(x0, x1, nx + 1), max(4, n // 4))
        gy, wy = composite_rule(np.linspace(y0, y1, ny + 1), max(4, n // 4))
        qi = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
        wi = (wx[:, None] * wy[None, :]).reshape(-1)
        inner = np.zeros(len(qi), dtype=complex)
        for coeff, disk in terms:
            qs, ws = disk_rule(disk.center, disk.radius, max(8, n // 2), n)
            wc = ws * collection_mode(qs, pc.sigma_c)
            step = max(1, (1 << 20) // len(qs))
            for s in range(0, len(qi), step):
                vals = F(qs[None, :, :], qi[s:s + step, None, :])
                inner[s:s + step] += coeff * (vals @ wc)
        return float(np.sum(wi * np.abs(inner) ** 2))

    return refine(evaluate, spec)


def _singles_cl(terms, p: JtmaParams, spec: QuadratureSpec) -> QuadResult:
    # ∫ d²q_i e^{-|x+q_i|²/2σ_P²} e^{-|y+q_i|²/2σ_P²} = πσ_P² e^{-|x-y|²/4σ_P²}, and
    # C(x)C(y) = (2/πσ_C²) e^{-|x+y|²/2σ_C²} e^{-|x-y|²/2σ_C²}
    w_minus = 1.0 / math.sqrt(1.0 / p.sigma_c**2 + 0.5 / p.sigma_p**2)
    pref = p.amp_scale**2 * (2.0 / (math.pi * p.sigma_c**2)) * math.pi * p.sigma_p**2
    pairs = []
    for (ca, da), (cb, db) in itertools.product(terms, repeat=2):
        gap = math.dist(da.center, db.center) - da.radius - db.radius
        if gap <= PRUNE_GAPS * w_minus:
            pairs.append((ca * np.conj(cb), da, db))

    def evaluate(n):
        total = sum(c * gaussian_pair_integral(da, db, w_minus, p.sigma_c, n) for c, da, db in pairs)
        return float(np.real(total)) * pref

    return refine(evaluate, spec)


def heralding_efficiency(v_s, v_i, basis_s: PixelBasis, basis_i: PixelBasis, p: JtmaParams,
                         spec: QuadratureSpec | None = None, sinc_factor: bool = False) -> float:
    """η^{s→i} = Pr(v_s, v_i) / Pr(v_s) with consistent amplitude models."""
    model = "collected" if sinc_factor else "cl"
    T = compute_T(basis_s, basis_i, p, model, spec)
    joint = joint_probability(v_s, v_i, T, p)
    single = singles_prob(v_s, basis_s, p, sinc_factor=sinc_factor).value
    return joint / single


def heralding_sweep(d1: float, d2_values, p: JtmaParams, spec: QuadratureSpec | None = None,
                    sinc_factor: bool = False) -> list:
    """η^{s→i} for a centred signal pixel of diameter d1 and centred idler pixels of diameters d2."""
    d2_values = [float(v) for v in d2_values]
    if not d1 > 0 or not d2_values or any(v <= 0 for v in d2_values):
        raise ValueError("pixel diameters must be positive")
    if any(b <= a for a, b in zip(d2_values, d2_values[1:])):
        raise ValueError("d2_values must be strictly ascending")
    big = 1e6 * p.sigma_c
    bs = PixelBasis((Disk((0.0, 0.0), 0.5 * d1),), "rings", big)
    single = singles_prob([1.0], bs, p, sinc_factor=sinc_factor).value
    model = "collected" if sinc_factor else "cl"
    out = []
    for d2 in d2_values:
        bi = PixelBasis((Disk((0.0, 0.0), 0.5 * d2),), "rings", big)
        T = compute_T(bs, bi, p, model, spec)
        out.append(joint_probability([1.0], [1.0], T, p) / single)
    return out


def mutually_unbiased_vector(d: int, k: int = 0) -> np.ndarray:
    """The k-th Fourier-basis vector, exp(2πi·k·a/d)/√d."""
    a = np.arange(d)
    return np.exp(2j * math.pi * k * a / d) / math.sqrt(d)


def design_summary(result: DesignResult) -> dict:
    m = result.metrics
    out = {"d": result.basis_s.d, "feasible": result.feasible,
           "ring_counts": list(result.basis_s.ring_counts),
           "crosstalk_ratio": result.T.crosstalk(),
           "diagonal_spread": result.T.diagonal_spread()}
    out.update(m.to_dict())
    return out

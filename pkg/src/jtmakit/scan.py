"""2Dπ phase-step measurement: forward model, synthetic data and closed forms.

The forward model integrates the collected JTMA against a pair of holograms.
For two π steps along x it works in sum/difference coordinates
p = (q_s + q_i)/√2, m = (q_s - q_i)/√2, where the product of the two steps
is +1 on the m-interval between √2a_s - p and p - √2a_i and -1 outside.
That turns the four signed quadrants into smooth nested integrals with a
single kink at p = (a_s + a_i)/√2, which is put on a panel boundary.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf, erfc

from .holograms import Disk, Hologram, PiStep, flat
from .kvfile import read_kv, write_kv
from .model import (SQRT2, JtmaParams, ScaledMomentumConstants, amplitude_function, params_from_mapping,
                    params_to_mapping, sinc)
from .quadrature import (QuadratureSpec, QuadResult, composite_rule, disk_rule, gauss_legendre, refine)

CSV_HEADER = ("a_s_rad_per_mm", "a_i_rad_per_mm", "counts")


class ScanFormatError(ValueError):
    """Malformed scan CSV or sidecar."""


@dataclass(frozen=True)
class ScanGrid:
    a_s_values: tuple
    a_i_values: tuple

    def __post_init__(self):
        for name in ("a_s_values", "a_i_values"):
            vals = np.asarray(getattr(self, name), dtype=float)
            if vals.ndim != 1 or vals.size == 0:
                raise ValueError(f"{name} must be a non-empty 1-D sequence")
            if not np.all(np.isfinite(vals)) or np.any(np.diff(vals) <= 0):
                raise ValueError(f"{name} must be finite and strictly increasing")
            object.__setattr__(self, name, tuple(float(v) for v in vals))

    @property
    def shape(self):
        return len(self.a_s_values), len(self.a_i_values)

    @property
    def a_s(self):
        return np.asarray(self.a_s_values)

    @property
    def a_i(self):
        return np.asarray(self.a_i_values)

    def shifted(self, ds: float, di: float) -> "ScanGrid":
        return ScanGrid(tuple(self.a_s + ds), tuple(self.a_i + di))


def default_grid(p: JtmaParams, n: int = 21, extent: float = 2.0) -> ScanGrid:
    """n×n uniform grid over ±extent·σ_C."""
    a = np.linspace(-extent * p.sigma_c, extent * p.sigma_c, n)
    return ScanGrid(tuple(a), tuple(a))


@dataclass
class ScanData:
    """Coincidence counts on a scan grid; ``counts[i, j]`` belongs to (a_s[i], a_i[j]).

    Counts are integers for noisy data; noiseless simulations store the
    (real) expected counts.
    """

    grid: ScanGrid
    counts: np.ndarray
    dwell_time: float = 1.0
    count_scale: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.shape != self.grid.shape:
            raise ValueError(f"counts shape {self.counts.shape} does not match grid {self.grid.shape}")
        if self.counts.size and (not np.all(np.isfinite(self.counts)) or np.any(self.counts < 0)):
            raise ValueError("counts must be finite and non-negative")

    def scaled(self, k: float) -> "ScanData":
        return ScanData(self.grid, self.counts * k, self.dwell_time, self.count_scale * k, dict(self.metadata))


# ---------------------------------------------------------------------------
# forward model

def _tilde_radius(p: JtmaParams, spec: QuadratureSpec):
    """Truncation half-widths for the sum (p) and difference (m) coordinates."""
    rm = spec.radius_for(p)
    rp = rm * p.sigma_pt / max(p.sigma_c, p.sigma_pt)
    return rp, rm


def _separable_profiles(model: str, p: JtmaParams, order: int, rp: float, rm: float):
    """x-profiles P(p_x), M(m_x) with the y-coordinates already integrated out."""
    yp, wp = gauss_legendre(order, -rp, rp)
    ym, wm = gauss_legendre(order, -rm, rm)
    st2, sc2 = p.sigma_pt**2, p.sigma_c**2
    py_mass = float(np.sum(wp * np.exp(-yp * yp / st2)))

    def P(x):
        return np.exp(-x * x / st2) * py_mass

    if model == "cl":
        my_mass = float(np.sum(wm * np.exp(-ym * ym / sc2)))

        def M(m):
            return np.exp(-m * m / sc2) * my_mass
    else:
        ss2 = p.sigma_s**2

        def M(m):
            r2 = m[..., None] ** 2 + ym**2
            return np.sum(np.exp(-r2 / sc2) * sinc(2.0 * r2 / ss2) * wm, axis=-1)

    return P, M


def _hermite_rule(n: int, scale: float):
    """Nodes and weights for ∫ f(y) dy when f carries a factor exp(-y²/scale²)."""
    x, w = np.polynomial.hermite.hermgauss(n)
    return scale * x, scale * w * np.exp(x * x)


def _general_kernel(p: JtmaParams, k: ScaledMomentumConstants, order: int):
    """K(p_x, m_x) = ∬ G dp_y dm_y for the non-separable type-II model.

    The y-integrands carry Gaussian factors of width σ̃_P (sum) and σ_C
    (difference), so Gauss-Hermite rules of those widths are used.
    """
    G = amplitude_function("general", p.centered(), k)
    yp, wp = _hermite_rule(max(12, order // 4), p.sigma_pt)
    ym, wm = _hermite_rule(max(24, order // 2), p.sigma_c)
    wy = wp[:, None] * wm[None, :]

    def K(px, mx):
        px, mx = np.broadcast_arrays(px, mx)
        out = np.empty(px.shape)
        flat_p, flat_m, flat_o = px.reshape(-1), mx.reshape(-1), out.reshape(-1)
        step = max(1, (1 << 18) // wy.size)
        for s in range(0, flat_p.size, step):
            a = flat_p[s:s + step, None, None]
            b = flat_m[s:s + step, None, None]
            qs = np.stack(np.broadcast_arrays((a + b) / SQRT2, (yp[:, None] + ym[None, :]) / SQRT2), axis=-1)
            qi = np.stack(np.broadcast_arrays((a - b) / SQRT2, (yp[:, None] - ym[None, :]) / SQRT2), axis=-1)
            flat_o[s:s + step] = np.sum(G(qs, qi) * wy, axis=(-2, -1))
        return out

    return K


def _step_pair_value(a_s: float, a_i: float, p: JtmaParams, model: str, order: int,
                     rp: float, rm: float, k) -> float:
    breaks = [-rp, rp]
    if math.isfinite(a_s) and math.isfinite(a_i):
        pstar = (a_s + a_i) / SQRT2
        if -rp < pstar < rp:
            breaks = [-rp, pstar, rp]
    px, wpx = composite_rule(breaks, order)
    m1 = SQRT2 * a_s - px
    m2 = px - SQRT2 * a_i
    lo = np.clip(np.minimum(m1, m2), -rm, rm)
    hi = np.clip(np.maximum(m1, m2), -rm, rm)
    x, w = gauss_legendre(order, -1.0, 1.0)
    half = 0.5 * (hi - lo)
    m_in = 0.5 * (hi + lo)[:, None] + half[:, None] * x
    w_in = half[:, None] * w
    mf, wf = gauss_legendre(order, -rm, rm)
    if model in ("cl", "collected"):
        P, M = _separable_profiles(model, p, order, rp, rm)
        inner = np.sum(M(m_in) * w_in, axis=-1)
        total = float(np.sum(M(mf) * wf))
        body = P(px) * (2.0 * inner - total)
    else:
        K = _general_kernel(p, k or ScaledMomentumConstants(), order)
        inner = np.sum(K(px[:, None], m_in) * w_in, axis=-1)
        total = np.sum(K(px[:, None], mf[None, :]) * wf, axis=-1)
        body = 2.0 * inner - total
    return p.amp_scale * float(np.sum(body * wpx))


def step_pair_amplitude(a_s: float, a_i: float, p: JtmaParams, model: str = "cl",
                        spec: QuadratureSpec | None = None, k: ScaledMomentumConstants | None = None
                        ) -> QuadResult:
    """∬ Φ_s Φ_i G for π steps at a_s, a_i, measured from the JTMA centre."""
    spec = spec or QuadratureSpec()
    rp, rm = _tilde_radius(p, spec)
    return refine(lambda order: _step_pair_value(a_s, a_i, p, model, order, rp, rm, k), spec)


def _pair_kernel_sum(G, qs, ws, qi, wi, swap=False):
    total = 0.0
    step = max(1, (1 << 20) // max(len(qi), 1))
    for s in range(0, len(qs), step):
        a = qs[s:s + step, None, :]
        b = qi[None, :, :]
        vals = G(b, a) if swap else G(a, b)
        total += np.sum((vals * wi).sum(axis=-1) * ws[s:s + step])
    return total


def _disk_nodes(d: Disk, order: int):
    return disk_rule(d.center, d.radius, max(8, order // 2), order)


def _window_step_nodes(step: PiStep, center, half: float, order: int, panel: float):
    """Signed nodes of a π step restricted to a square window; the step's sign is in the weights."""
    xlo, xhi = center[0] - half, center[0] + half
    ylo, yhi = center[1] - half, center[1] + half
    n_panels = max(1, int(math.ceil((2 * half) / panel)))
    xb = list(np.linspace(xlo, xhi, n_panels + 1))
    if xlo < step.edge < xhi:
        xb = sorted(xb + [step.edge])
    x, wx = composite_rule(xb, order)
    y, wy = composite_rule(list(np.linspace(ylo, yhi, n_panels + 1)), order)
    xx, yy = np.meshgrid(x, y, indexing="ij")
    pts = np.stack([xx, yy], axis=-1).reshape(-1, 2)
    sign = np.where(x < step.edge, 1.0, -1.0)
    w = ((wx * sign)[:, None] * wy[None, :]).reshape(-1)
    return pts, w


def _primitive_pair_value(ps, pi, p: JtmaParams, model: str, order: int, k) -> complex:
    """Pairs involving at least one disk; π-step pairs go through the rotated integrator."""
    G = amplitude_function(model, p.centered(), k)
    if isinstance(ps, Disk) and isinstance(pi, Disk):
        qs, ws = _disk_nodes(ps, order)
        qi, wi = _disk_nodes(pi, order)
        return _pair_kernel_sum(G, qs, ws, qi, wi)
    # disk against step: the pump factor confines the step side to the mirrored disk ± 9σ_P
    disk, step = (ps, pi) if isinstance(ps, Disk) else (pi, ps)
    qd, wd = _disk_nodes(disk, order)
    half = disk.radius + 9.0 * p.sigma_p
    center = (-disk.center[0], -disk.center[1])
    qh, wh = _window_step_nodes(step, center, half, max(8, order // 4), panel=2.0 * p.sigma_pt)
    return _pair_kernel_sum(G, qd, wd, qh, wh, swap=not isinstance(ps, Disk))


def coincidence_amplitude(phi_s: Hologram, phi_i: Hologram, p: JtmaParams, model: str = "cl",
                          spec: QuadratureSpec | None = None, k: ScaledMomentumConstants | None = None
                          ) -> QuadResult:
    """∬ Φ_s(q_s) Φ_i(q_i) G(q_s, q_i) d²q_s d²q_i in laboratory coordinates.

    The JTMA is centred at (origin_s, 0) and (origin_i, 0); holograms are
    shifted into that frame and expanded bilinearly over their primitives.
    """
    spec = spec or QuadratureSpec()
    hs = phi_s.shifted(-p.origin_s)
    hi = phi_i.shifted(-p.origin_i)
    rp, rm = _tilde_radius(p, spec)

    def evaluate(order):
        total = 0.0
        for cs, prim_s in hs.terms():
            for ci, prim_i in hi.terms():
                if isinstance(prim_s, PiStep) and isinstance(prim_i, PiStep):
                    val = _step_pair_value(prim_s.edge, prim_i.edge, p, model, order, rp, rm, k)
                else:
                    val = _primitive_pair_value(prim_s, prim_i, p, model, order, k)
                total = total + cs * ci * val
        return total

    res = refine(evaluate, spec)
    value = res.value
    if isinstance(value, complex) and value.imag == 0:
        value = value.real
    return QuadResult(value, res.error, res.converged, res.order, res.levels)


def coincidence_probability(phi_s: Hologram, phi_i: Hologram, p: JtmaParams, model: str = "cl",
                            spec: QuadratureSpec | None = None, k: ScaledMomentumConstants | None = None
                            ) -> QuadResult:
    """|∬ Φ_s Φ_i G|²; the error field is the relative error of the probability."""
    amp = coincidence_amplitude(phi_s, phi_i, p, model, spec, k)
    value = abs(amp.value) ** 2
    err = min(1.0, 2.0 * amp.error + amp.error**2)
    return QuadResult(value, err, amp.converged, amp.order, amp.levels)


def full_mass_probability(p: JtmaParams, model: str = "cl", spec: QuadratureSpec | None = None,
                          k: ScaledMomentumConstants | None = None) -> float:
    """|N|²: the coincidence probability with flat holograms, an upper bound for any scan cell."""
    return float(coincidence_probability(flat(), flat(), p, model, spec, k).value)


def scan_probabilities(grid: ScanGrid, p: JtmaParams, model: str = "cl",
                       spec: QuadratureSpec | None = None, k: ScaledMomentumConstants | None = None,
                       threads: int = 1):
    """Pr(a_s, a_i) over the grid. Returns (probabilities, all_converged)."""
    spec = spec or QuadratureSpec()
    cells = [(a_s, a_i) for a_s in grid.a_s_values for a_i in grid.a_i_values]

    def cell(c):
        amp = step_pair_amplitude(c[0] - p.origin_s, c[1] - p.origin_i, p, model, spec, k)
        return amp.value ** 2, amp.converged

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(cell, cells))
    else:
        results = [cell(c) for c in cells]
    probs = np.array([r[0] for r in results]).reshape(grid.shape)
    return probs, all(r[1] for r in results)


def peak_count_scale(p: JtmaParams, peak_counts: float, model: str = "cl",
                     spec: QuadratureSpec | None = None) -> float:
    """Counts per unit probability such that a fully constructive cell records ``peak_counts``."""
    return peak_counts / full_mass_probability(p, model, spec)


def simulate_scan(grid: ScanGrid, p: JtmaParams, model: str = "cl", spec: QuadratureSpec | None = None,
                  noise: str = "none", seed: int | None = None, count_scale: float = 1.0,
                  dwell_time: float = 1.0, background: float = 0.0,
                  k: ScaledMomentumConstants | None = None, threads: int = 1) -> ScanData:
    """Synthetic 2Dπ scan: expected counts count_scale·Pr + background, optionally Poisson sampled.

    Poisson draws come from one generator seeded with ``seed`` and are taken
    in row-major cell order, so equal seeds give identical matrices.
    """
    if noise not in ("none", "poisson"):
        raise ValueError(f"noise must be 'none' or 'poisson', got {noise!r}")
    if count_scale <= 0 or background < 0:
        raise ValueError("count_scale must be positive and background non-negative")
    probs, converged = scan_probabilities(grid, p, model, spec, k, threads)
    expected = count_scale * probs + background
    if noise == "poisson":
        rng = np.random.default_rng(seed)
        counts = rng.poisson(expected)
    else:
        counts = expected
    meta = {"model": model, "noise": noise, "seed": seed if seed is not None else "none",
            "background_counts": background, "quadrature_converged": bool(converged)}
    meta.update(params_to_mapping(p))
    return ScanData(grid, counts, dwell_time, count_scale, meta)


# ---------------------------------------------------------------------------
# closed forms

def antidiag_scales(p: JtmaParams):
    """(N, N′) of the anti-diagonal closed form for the CL model.

    N is the full amplitude mass π²σ̃_P²σ_C²; N′ = 4πσ̃_P³σ_C comes from the
    bow-tie quadrants, where the ridge integral ∫(-s)exp(-s²/2σ̃²)ds = σ̃²
    multiplies the corner value of the difference Gaussian.
    """
    st, sc = p.sigma_pt, p.sigma_c
    return p.amp_scale * math.pi**2 * st**2 * sc**2, p.amp_scale * 4.0 * math.pi * st**3 * sc


def diag_scale(p: JtmaParams) -> float:
    """Amplitude A of the diagonal closed form for the CL model (2√2π σ̃_P² σ_C)."""
    return p.amp_scale * 2.0 * SQRT2 * math.pi * p.sigma_pt**2 * p.sigma_c


def closed_pr_antidiag(a, N: float, Nprime: float, sigma_c: float):
    """Pr(a, -a) = |N - N′ exp(-2a²/σ_C²)|²."""
    if sigma_c <= 0:
        raise ValueError("sigma_c must be positive")
    a = np.asarray(a, dtype=float)
    return np.abs(N - Nprime * np.exp(-2.0 * a * a / sigma_c**2)) ** 2


def diag_bracket(a, sigma_c: float, sigma_p: float):
    """The bracketed amplitude of Pr(a, a) before the overall scale."""
    a = np.abs(np.asarray(a, dtype=float))
    st = 1.0 / math.sqrt(1.0 / sigma_c**2 + 1.0 / sigma_p**2)
    t1 = SQRT2 * sigma_p * np.exp(-2.0 * a * a * (1.0 / st**2 + 1.0 / sigma_c**2))
    t2 = 2.0 * math.sqrt(math.pi) * a * np.exp(-2.0 * a * a / sigma_c**2) * erfc(SQRT2 * a / st)
    t3 = math.pi * sigma_c / (2.0 * SQRT2) * (1.0 - 2.0 * erf(SQRT2 * a / sigma_c))
    return t1 - t2 - t3


def closed_pr_diag(a, A: float, p: JtmaParams):
    """Pr(a, a) = A²·[√2σ_P e^(...) - 2√π|a| e^(...) erfc(...) - (πσ_C/2√2)(1 - 2erf(...))]²."""
    return A**2 * diag_bracket(a, p.sigma_c, p.sigma_p) ** 2


def visibility(N: float, Nprime: float) -> float:
    """Anti-diagonal visibility (|N|² - |N-N′|²)/(|N|² + |N-N′|²)."""
    if not N > 0 or not 0 <= Nprime <= 2 * N:
        raise ValueError("visibility needs N > 0 and 0 <= N' <= 2N")
    d2 = (N - Nprime) ** 2
    return (N**2 - d2) / (N**2 + d2)


def visibility_sigma_form(sigma_c: float, sigma_p: float) -> float:
    """Small-σ_P form (σ_C² - (σ_C-σ_P)²)/(σ_C² + (σ_C-σ_P)²)."""
    d2 = (sigma_c - sigma_p) ** 2
    return (sigma_c**2 - d2) / (sigma_c**2 + d2)


def visibility_from_params(p: JtmaParams) -> float:
    N, Np = antidiag_scales(p)
    return visibility(N, Np)


def sigma_p_from_visibility(v: float, sigma_c: float) -> float:
    """Invert the ratio-form visibility with N′/N = 4σ̃_P/(πσ_C)."""
    if not 0 < v < 1:
        raise ValueError("visibility must lie in (0, 1)")
    ratio = 1.0 - math.sqrt((1.0 - v) / (1.0 + v))
    return sigma_p_from_ratio(ratio, sigma_c)


def sigma_p_from_ratio(ratio: float, sigma_c: float) -> float:
    st = ratio * math.pi * sigma_c / 4.0
    if not 0 < st < sigma_c:
        raise ValueError(f"N'/N = {ratio:.4g} does not correspond to a finite pump width")
    return 1.0 / math.sqrt(1.0 / st**2 - 1.0 / sigma_c**2)


def marginal_scan(a, side: str, p: JtmaParams, width: float | None = None):
    """Pr(a, -∞) or Pr(-∞, a) up to scale: erf²(√2(a - origin)/σ_C)."""
    if side not in ("signal", "idler"):
        raise ValueError("side must be 'signal' or 'idler'")
    origin = p.origin_s if side == "signal" else p.origin_i
    w = p.sigma_c if width is None else width
    a = np.asarray(a, dtype=float)
    return erf(SQRT2 * (a - origin) / w) ** 2


# ---------------------------------------------------------------------------
# files

def write_scan(data: ScanData, path: str | Path, extra_meta: dict | None = None) -> Path:
    """Write the scan CSV and its ``.meta`` sidecar; returns the sidecar path."""
    path = Path(path)
    integral = np.issubdtype(data.counts.dtype, np.integer)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for i, a_s in enumerate(data.grid.a_s_values):
        for j, a_i in enumerate(data.grid.a_i_values):
            c = data.counts[i, j]
            writer.writerow((repr(a_s), repr(a_i), str(int(c)) if integral else repr(float(c))))
    path.write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    meta = {"dwell_time_s": data.dwell_time, "count_scale": data.count_scale,
            "n_a_s": data.grid.shape[0], "n_a_i": data.grid.shape[1]}
    meta.update(data.metadata)
    if extra_meta:
        meta.update(extra_meta)
    side = sidecar_path(path)
    write_kv(side, meta, header="2Dpi scan metadata")
    return side


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def read_scan(path: str | Path) -> ScanData:
    """Parse a scan CSV (and its sidecar when present). Errors name the offending line."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != CSV_HEADER:
        raise ScanFormatError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
    entries = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ScanFormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        try:
            a_s, a_i, c = float(row[0]), float(row[1]), float(row[2])
        except ValueError:
            raise ScanFormatError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
        if not (math.isfinite(a_s) and math.isfinite(a_i) and math.isfinite(c)) or c < 0:
            raise ScanFormatError(f"{path}:{lineno}: values must be finite with counts >= 0")
        if (a_s, a_i) in entries:
            raise ScanFormatError(f"{path}:{lineno}: duplicate cell ({a_s}, {a_i})")
        entries[(a_s, a_i)] = c
    if not entries:
        raise ScanFormatError(f"{path}: no data rows")
    a_s_vals = sorted({k[0] for k in entries})
    a_i_vals = sorted({k[1] for k in entries})
    if len(entries) != len(a_s_vals) * len(a_i_vals):
        raise ScanFormatError(f"{path}: cells do not form a complete rectangular grid")
    counts = np.array([[entries[(s, i)] for i in a_i_vals] for s in a_s_vals])
    if np.all(counts == np.round(counts)):
        counts = counts.astype(np.int64)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = read_kv(side)
    dwell = float(meta.pop("dwell_time_s", 1.0))
    scale = float(meta.pop("count_scale", 1.0))
    return ScanData(ScanGrid(tuple(a_s_vals), tuple(a_i_vals)), counts, dwell, scale, meta)


def params_from_scan_meta(data: ScanData) -> JtmaParams | None:
    try:
        return params_from_mapping(data.metadata)
    except (ValueError, KeyError):
        return None


def dense_probability_grid(p: JtmaParams, n: int = 81, extent: float = 2.0, model: str = "cl",
                           spec: QuadratureSpec | None = None, threads: int = 1):
    """Noise-free Pr(a_s, a_i) on an n×n grid, for plotting."""
    grid = default_grid(p, n, extent).shifted(p.origin_s, p.origin_i)
    probs, _ = scan_probabilities(grid, p, model, spec, threads=threads)
    return grid, probs


def write_probability_grid(grid: ScanGrid, probs, path: str | Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("a_s_rad_per_mm", "a_i_rad_per_mm", "probability"))
    for i, a_s in enumerate(grid.a_s_values):
        for j, a_i in enumerate(grid.a_i_values):
            writer.writerow((repr(a_s), repr(a_i), repr(float(probs[i, j]))))
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")

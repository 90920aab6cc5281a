"""Staged least-squares recovery of origins, σ_C and σ_P from a 2Dπ scan.

Stages:

1. origins from the scan edges, where one step sits far into its wing and
   the other photon sees a knife edge, Pr ∝ erf²(√2(a - a₀)/w);
2. σ_C from the anti-diagonal slice together with those edge curves;
3. σ_P from the diagonal slice together with the anti-diagonal, whose
   N′/N ratio depends only on σ̃_P/σ_C.

Every stage minimises Σ w (model - counts)² with w = 1/max(counts, 1) by a
damped Gauss-Newton (Levenberg-Marquardt) iteration on log-parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erf

from .kvfile import dump_kv, write_kv
from .model import SQRT2, JtmaParams
from .scan import ScanData, diag_bracket, sigma_p_from_ratio, visibility

MAX_ITER = 200
STEP_TOL = 1e-8
CHI2_TOL = 1e-10
MIN_DIAG_POINTS = 8


class FitError(ValueError):
    """Invalid input to a fit stage."""


class BoundaryHitError(FitError):
    """The scan grid does not bracket an origin."""


class FitConvergenceError(RuntimeError):
    """A stage cannot produce a meaningful estimate."""


@dataclass
class LMResult:
    x: np.ndarray
    cov: np.ndarray
    chi2: float
    dof: int
    converged: bool
    iterations: int

    @property
    def std(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def _jacobian(fun, x, r0):
    J = np.empty((r0.size, x.size))
    for k in range(x.size):
        h = 1e-6 * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        J[:, k] = (fun(xp) - fun(xm)) / (2.0 * h)
    return J


def levenberg_marquardt(fun: Callable[[np.ndarray], np.ndarray], x0, max_iter: int = MAX_ITER,
                        step_tol: float = STEP_TOL, chi2_tol: float = CHI2_TOL) -> LMResult:
    """Minimise ||fun(x)||² where ``fun`` returns weighted residuals.

    Jacobians are central differences. Converges when an accepted step is
    relatively smaller than ``step_tol`` or changes χ² by less than
    ``chi2_tol`` relative. The covariance is (JᵀJ)⁻¹ scaled by χ²/dof.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = fun(x)
    chi2 = float(r @ r)
    lam = 1e-3
    converged = False
    it = 0
    J = _jacobian(fun, x, r)
    while it < max_iter:
        it += 1
        H = J.T @ J
        g = J.T @ r
        accepted = False
        while lam < 1e16:
            A = H + lam * np.diag(np.maximum(np.diag(H), 1e-300))
            try:
                delta = -np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = x + delta
            r_new = fun(x_new)
            chi2_new = float(r_new @ r_new)
            if np.isfinite(chi2_new) and chi2_new <= chi2:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent direction left: x is a stationary point of χ²
            converged = bool(np.isfinite(chi2))
            break
        rel_step = np.max(np.abs(delta) / np.maximum(np.abs(x), 1e-12))
        rel_chi2 = (chi2 - chi2_new) / max(chi2, 1e-300)
        x, r, chi2 = x_new, r_new, chi2_new
        lam = max(lam / 10.0, 1e-12)
        if rel_step < step_tol or rel_chi2 < chi2_tol:
            converged = True
            break
        J = _jacobian(fun, x, r)
    J = _jacobian(fun, x, r)
    dof = r.size - x.size
    try:
        cov = np.linalg.inv(J.T @ J) * (chi2 / dof if dof > 0 else np.nan)
    except np.linalg.LinAlgError:
        cov = np.full((x.size, x.size), np.nan)
    return LMResult(x, cov, chi2, dof, converged, it)


def _weights(counts):
    return 1.0 / np.maximum(np.asarray(counts, dtype=float), 1.0)


def _check_data(data: ScanData):
    if data.counts.size == 0:
        raise FitError("scan contains no cells")
    if min(data.grid.shape) < 3:
        raise FitError("scan grid needs at least 3 values per axis")
    if not np.any(data.counts > 0):
        raise FitConvergenceError("scan contains no counts")


# ---------------------------------------------------------------------------
# slices

def edge_curves(data: ScanData):
    """(a_s, counts at the lowest a_i) and (a_i, counts at the lowest a_s)."""
    c = np.asarray(data.counts, dtype=float)
    return (data.grid.a_s, c[:, 0]), (data.grid.a_i, c[0, :])


def _nearest_slice(data: ScanData, origins, sign: float):
    """Nearest cells to a_i - o_i = sign·(a_s - o_s); returns (u, counts, n_in_range)."""
    o_s, o_i = origins
    a_i = data.grid.a_i
    u = data.grid.a_s - o_s
    target = o_i + sign * u
    idx = np.abs(a_i[None, :] - target[:, None]).argmin(axis=1)
    half_step = 0.5 * np.min(np.diff(a_i)) if a_i.size > 1 else 0.0
    in_range = (target >= a_i[0] - half_step) & (target <= a_i[-1] + half_step)
    counts = np.asarray(data.counts, dtype=float)[np.arange(u.size), idx]
    return u[in_range], counts[in_range], int(in_range.sum())


def antidiagonal_slice(data: ScanData, origins):
    u, c, _ = _nearest_slice(data, origins, -1.0)
    return u, c


def diagonal_slice(data: ScanData, origins):
    u, c, _ = _nearest_slice(data, origins, 1.0)
    return u, c


# ---------------------------------------------------------------------------
# stage 1: origins

@dataclass
class OriginFit:
    origin_s: float
    origin_i: float
    std_s: float
    std_i: float
    width_s: float
    width_i: float
    converged: bool

    def __iter__(self):
        return iter((self.origin_s, self.origin_i))


def _knife_edge(a, o, w, B):
    return B * erf(SQRT2 * (a - o) / w) ** 2


def _fit_knife_edge(a, counts, label):
    k = int(np.argmin(counts))
    if k == 0 or k == len(a) - 1:
        raise BoundaryHitError(f"{label} minimum lies on the grid boundary; the scan does not bracket it")
    span = a[-1] - a[0]
    w0 = span / 4.0
    B0 = max(float(np.max(counts)), 1.0)
    sw = np.sqrt(_weights(counts))

    def res(x):
        return sw * (_knife_edge(a, x[0], math.exp(x[1]), math.exp(x[2])) - counts)

    fit = levenberg_marquardt(res, [a[k], math.log(w0), math.log(B0)])
    o = fit.x[0]
    if not a[0] < o < a[-1]:
        raise BoundaryHitError(f"{label} origin estimate {o:.4g} lies outside the scanned range")
    return fit


def estimate_origins(data: ScanData) -> OriginFit:
    """Knife-edge fits to the edge column (vs a_s) and edge row (vs a_i)."""
    _check_data(data)
    (a_s, c_s), (a_i, c_i) = edge_curves(data)
    fs = _fit_knife_edge(a_s, c_s, "signal")
    fi = _fit_knife_edge(a_i, c_i, "idler")
    return OriginFit(float(fs.x[0]), float(fi.x[0]), float(fs.std[0]), float(fi.std[0]),
                     math.exp(fs.x[1]), math.exp(fi.x[1]), fs.converged and fi.converged)


# ---------------------------------------------------------------------------
# stage 2: σ_C

@dataclass
class SigmaCFit:
    sigma_c: float
    sigma_c_std: float
    scale_N: float
    scale_Nprime: float
    covariance: np.ndarray
    chi2: float
    dof: int
    converged: bool

    def __iter__(self):
        return iter((self.sigma_c, self.scale_N, self.scale_Nprime, self.covariance))


def _sigma_tilde(sigma_c, sigma_p):
    if sigma_p is None or sigma_p <= 0:
        return 0.0
    return 1.0 / math.sqrt(1.0 / sigma_c**2 + 1.0 / sigma_p**2)


def fit_sigma_c(data: ScanData, origins, sigma_p: float | None = None,
                sigma_c0: float | None = None) -> SigmaCFit:
    """Fit |N - N′e^(-2u²/σ_C²)|² to the anti-diagonal jointly with the knife-edge curves.

    Scales are in √counts, so ``scale_N²`` is the constructive-plateau count.
    The knife-edge width is √(σ_C² + σ̃_P²); pass the current ``sigma_p``
    estimate to remove that small bias (None treats σ̃_P as zero).
    """
    _check_data(data)
    o_s, o_i = tuple(origins)
    u, cu = antidiagonal_slice(data, (o_s, o_i))
    if u.size < 3:
        raise FitError("anti-diagonal slice has fewer than 3 cells")
    (a_s, c_s), (a_i, c_i) = edge_curves(data)
    y = np.concatenate([cu, c_s, c_i])
    sw = np.sqrt(_weights(y))
    n_u, n_s = u.size, a_s.size

    if sigma_c0 is None:
        sigma_c0 = 0.25 * (data.grid.a_s[-1] - data.grid.a_s[0])
    plateau = max(float(np.max(cu)), 1.0)
    dip = max(float(np.min(cu)), 0.0)
    N0 = math.sqrt(plateau)
    Np0 = max(N0 - math.sqrt(dip), 1e-3 * N0)
    x0 = [math.log(sigma_c0), math.log(N0), math.log(Np0),
          math.log(max(float(np.max(c_s)), 1.0)), math.log(max(float(np.max(c_i)), 1.0))]

    def model(x):
        sc = math.exp(x[0])
        N, Np, Bs, Bi = np.exp(x[1:5])
        w = math.sqrt(sc**2 + _sigma_tilde(sc, sigma_p) ** 2)
        anti = (N - Np * np.exp(-2.0 * u * u / sc**2)) ** 2
        return np.concatenate([anti, _knife_edge(a_s, o_s, w, Bs), _knife_edge(a_i, o_i, w, Bi)])

    fit = levenberg_marquardt(lambda x: sw * (model(x) - y), x0)
    sc = math.exp(fit.x[0])
    return SigmaCFit(sc, sc * float(fit.std[0]), math.exp(fit.x[1]), math.exp(fit.x[2]),
                     fit.cov, fit.chi2, fit.dof, fit.converged)


# ---------------------------------------------------------------------------
# stage 3: σ_P

@dataclass
class SigmaPFit:
    sigma_p: float
    sigma_p_std: float
    scale_A: float
    covariance: np.ndarray
    chi2: float
    dof: int
    converged: bool
    method: str = "diagonal"

    def __iter__(self):
        return iter((self.sigma_p, self.scale_A, self.covariance))


def antidiag_ratio(sigma_c: float, sigma_p: float) -> float:
    """N′/N = 4σ̃_P/(πσ_C) for the collection-limited amplitude."""
    return 4.0 * _sigma_tilde(sigma_c, sigma_p) / (math.pi * sigma_c)


def fit_sigma_p(data: ScanData, origins, sigma_c: float, sigma_p0: float | None = None,
                ratio_fallback: float | None = None) -> SigmaPFit:
    """Fit the diagonal closed form jointly with the ratio-tied anti-diagonal.

    σ_C is held fixed. With fewer than eight diagonal cells the visibility
    relation is inverted instead, using ``ratio_fallback`` = N′/N from the
    σ_C stage.
    """
    _check_data(data)
    if not sigma_c > 0:
        raise FitError("sigma_c must be positive")
    o_s, o_i = tuple(origins)
    v, cv, n_diag = _nearest_slice(data, (o_s, o_i), 1.0)
    u, cu = antidiagonal_slice(data, (o_s, o_i))
    if n_diag < MIN_DIAG_POINTS:
        if ratio_fallback is None:
            raise FitError("diagonal slice too short and no N'/N ratio supplied for the visibility fallback")
        sp = sigma_p_from_ratio(ratio_fallback, sigma_c)
        return SigmaPFit(sp, math.nan, math.nan, np.full((1, 1), np.nan), math.nan, 0, True, "visibility")

    y = np.concatenate([cv, cu])
    sw = np.sqrt(_weights(y))
    if sigma_p0 is None:
        sigma_p0 = 0.1 * sigma_c
    plateau = max(float(np.max(cu)), 1.0)
    N0 = math.sqrt(plateau)
    A0 = N0 / (math.pi * sigma_c / (2.0 * SQRT2))
    x0 = [math.log(sigma_p0), math.log(A0), math.log(N0)]

    def model(x):
        sp = math.exp(x[0])
        A, N = math.exp(x[1]), math.exp(x[2])
        diag = A * A * diag_bracket(v, sigma_c, sp) ** 2
        r = antidiag_ratio(sigma_c, sp)
        anti = N * N * (1.0 - r * np.exp(-2.0 * u * u / sigma_c**2)) ** 2
        return np.concatenate([diag, anti])

    fit = levenberg_marquardt(lambda x: sw * (model(x) - y), x0)
    sp = math.exp(fit.x[0])
    return SigmaPFit(sp, sp * float(fit.std[0]), math.exp(fit.x[1]), fit.cov, fit.chi2, fit.dof,
                     fit.converged)


# ---------------------------------------------------------------------------
# full pipeline

REPORT_UNITS = {
    "sigma_c": "rad/mm", "sigma_c_std": "rad/mm", "sigma_p": "rad/mm", "sigma_p_std": "rad/mm",
    "origin_s": "rad/mm", "origin_s_std": "rad/mm", "origin_i": "rad/mm", "origin_i_std": "rad/mm",
    "scale": "counts", "visibility": "1", "residual_chi2": "1", "dof": "1", "converged": "bool",
}


@dataclass
class FitReport:
    sigma_c: float = math.nan
    sigma_c_std: float = math.nan
    sigma_p: float = math.nan
    sigma_p_std: float = math.nan
    origin_s: float = math.nan
    origin_s_std: float = math.nan
    origin_i: float = math.nan
    origin_i_std: float = math.nan
    scale: float = math.nan
    visibility: float = math.nan
    residual_chi2: float = math.nan
    dof: int = 0
    converged: bool = False
    sigma_p_method: str = "diagonal"
    messages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {}
        for key, unit in REPORT_UNITS.items():
            val = getattr(self, key)
            out[f"{key}_{unit.replace('/', '_per_')}" if unit not in ("1", "bool") else key] = val
        out["sigma_p_method"] = self.sigma_p_method
        if self.messages:
            out["messages"] = list(self.messages)
        return out

    def dumps(self) -> str:
        return dump_kv(self.to_dict(), header="2Dpi fit report", sig=6)

    def write(self, path) -> None:
        write_kv(path, self.to_dict(), header="2Dpi fit report", sig=6)

    def table(self) -> str:
        """Human-readable summary with ± errors."""
        rows = [("sigma_C", self.sigma_c, self.sigma_c_std, "rad/mm"),
                ("sigma_P", self.sigma_p, self.sigma_p_std, "rad/mm"),
                ("origin_s", self.origin_s, self.origin_s_std, "rad/mm"),
                ("origin_i", self.origin_i, self.origin_i_std, "rad/mm")]
        lines = [f"{name:<10} {val:10.4g} ± {err:<9.3g} {unit}" for name, val, err, unit in rows]
        lines.append(f"{'scale':<10} {self.scale:10.4g} counts")
        lines.append(f"{'V':<10} {self.visibility:10.4g}")
        lines.append(f"{'chi2/dof':<10} {self.residual_chi2:10.4g} / {self.dof}")
        lines.append(f"{'converged':<10} {self.converged}")
        return "\n".join(lines)

    def params(self, sigma_s: float = math.inf) -> JtmaParams:
        s = sigma_s if math.isfinite(sigma_s) else 1e6 * self.sigma_c
        return JtmaParams(self.sigma_p, s, self.sigma_c, self.origin_s, self.origin_i)


def fit_full(data: ScanData, passes: int = 2) -> FitReport:
    """Origins, then alternating σ_C and σ_P stages (σ̃_P enters the knife-edge width).

    Stage failures yield a partial report with ``converged = False``.
    """
    if data.counts.size == 0:
        raise FitError("scan contains no cells")
    rep = FitReport()
    try:
        org = estimate_origins(data)
        rep.origin_s, rep.origin_i = org.origin_s, org.origin_i
        rep.origin_s_std, rep.origin_i_std = org.std_s, org.std_i
        ok = org.converged
        sigma_p = None
        fc = fp = None
        for _ in range(max(1, passes)):
            fc = fit_sigma_c(data, org, sigma_p, sigma_c0=fc.sigma_c if fc else None)
            fp = fit_sigma_p(data, org, fc.sigma_c, sigma_p0=sigma_p,
                             ratio_fallback=fc.scale_Nprime / fc.scale_N)
            sigma_p = fp.sigma_p
        ok = ok and fc.converged and fp.converged
        rep.sigma_c, rep.sigma_c_std = fc.sigma_c, fc.sigma_c_std
        rep.sigma_p, rep.sigma_p_std = fp.sigma_p, fp.sigma_p_std
        rep.sigma_p_method = fp.method
        rep.scale = fc.scale_N**2
        try:
            rep.visibility = visibility(fc.scale_N, fc.scale_Nprime)
        except ValueError as exc:
            rep.messages.append(f"visibility: {exc}")
        chi2 = fc.chi2 + (fp.chi2 if math.isfinite(fp.chi2) else 0.0)
        rep.residual_chi2 = chi2
        rep.dof = fc.dof + fp.dof
        rep.converged = bool(ok)
    except (FitError, FitConvergenceError, ValueError) as exc:
        if isinstance(exc, FitError) and "no cells" in str(exc):
            raise
        rep.messages.append(f"{type(exc).__name__}: {exc}")
        rep.converged = False
    return rep

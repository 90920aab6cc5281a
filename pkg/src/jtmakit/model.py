"""Joint transverse momentum amplitudes of SPDC photon pairs.

All momenta are in rad/mm at the crystal plane. Amplitude functions take
``q_s`` and ``q_i`` as array-likes whose trailing axis holds the (x, y)
components and broadcast over leading axes.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .kvfile import read_kv

NM_TO_MM = 1e-6
SQRT2 = math.sqrt(2.0)


class ParameterError(ValueError):
    """Raised when a physical or model parameter is outside its domain."""


def sinc(x):
    """Unnormalised sinc, sin(x)/x, with the removable singularity at 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, x)
    x2 = x * x
    return np.where(small, 1.0 - x2 / 6.0 + x2 * x2 / 120.0, np.sin(safe) / safe)


def _xy(q):
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 2:
        raise ValueError(f"momentum arrays need a trailing axis of length 2, got shape {q.shape}")
    return q[..., 0], q[..., 1]


def _sq(qx, qy):
    return qx * qx + qy * qy


@dataclass(frozen=True)
class JtmaParams:
    """Width triplet, origin offsets and overall scale of the collected JTMA.

    Widths are in rad/mm. ``amp_scale`` absorbs every normalisation constant
    and the detection efficiency; only ratios of probabilities are physical.
    """

    sigma_p: float
    sigma_s: float
    sigma_c: float
    origin_s: float = 0.0
    origin_i: float = 0.0
    amp_scale: float = 1.0

    def __post_init__(self):
        for name in ("sigma_p", "sigma_s", "sigma_c"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ParameterError(f"{name} must be positive and finite, got {value!r}")
        for name in ("origin_s", "origin_i", "amp_scale"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")

    @property
    def sigma_pt(self) -> float:
        """Pump width combined with the collection width, (1/σ_C² + 1/σ_P²)^(-1/2)."""
        return 1.0 / math.sqrt(1.0 / self.sigma_c**2 + 1.0 / self.sigma_p**2)

    @property
    def cl_valid(self) -> bool:
        return self.sigma_s >= SQRT2 * self.sigma_c

    @property
    def cl_valid_singles(self) -> bool:
        return self.sigma_s >= 2.0 * self.sigma_c

    def centered(self) -> "JtmaParams":
        return replace(self, origin_s=0.0, origin_i=0.0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ScaledMomentumConstants:
    """Non-degeneracy scalings c_s, c_i of the type-II phase-matching function."""

    c_s: float = 1.0
    c_i: float = 1.0

    def __post_init__(self):
        if not (self.c_s > 0 and self.c_i > 0):
            raise ParameterError("c_s and c_i must be positive")

    @property
    def epsilon(self) -> float:
        return 1.0 - 1.0 / (self.c_s * self.c_i)

    @classmethod
    def from_wavenumbers(cls, k_pump: float, k_signal: float, k_idler: float) -> "ScaledMomentumConstants":
        """c_n = sqrt(k_p / k_n - 1) for the central wavenumbers inside the crystal."""
        if min(k_pump, k_signal, k_idler) <= 0:
            raise ParameterError("wavenumbers must be positive")
        ratios = (k_pump / k_signal - 1.0, k_pump / k_idler - 1.0)
        if min(ratios) <= 0:
            raise ParameterError("pump wavenumber must exceed signal and idler wavenumbers")
        return cls(math.sqrt(ratios[0]), math.sqrt(ratios[1]))


@dataclass(frozen=True)
class OpticalSystem:
    """Source and collection optics. Wavelengths in nm, lengths in mm.

    ``collection_calibration`` multiplies the ideal Fourier-lens mapping of the
    back-propagated fibre mode radius; it stays 1 unless the collection
    telescope is known to deviate from a single 2f system.
    """

    lambda_pump: float
    lambda_signal: float
    lambda_idler: float
    pump_waist: float
    crystal_length: float
    refractive_index_pump: float
    focal_length: float
    collection_waist_at_slm: float
    collection_calibration: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (value > 0 and math.isfinite(value)):
                raise ParameterError(f"{f.name} must be positive and finite, got {value!r}")

    @property
    def degenerate(self) -> bool:
        return (math.isclose(self.lambda_signal, self.lambda_idler, rel_tol=1e-9)
                and math.isclose(self.lambda_signal, 2.0 * self.lambda_pump, rel_tol=1e-9))

    @property
    def k_pump(self) -> float:
        """Pump wavenumber inside the crystal, rad/mm."""
        return self.refractive_index_pump * 2.0 * math.pi / (self.lambda_pump * NM_TO_MM)


# config keys carry their unit suffix
OPTICS_KEYS = {
    "lambda_pump": "lambda_pump_nm",
    "lambda_signal": "lambda_signal_nm",
    "lambda_idler": "lambda_idler_nm",
    "pump_waist": "pump_waist_mm",
    "crystal_length": "crystal_length_mm",
    "refractive_index_pump": "refractive_index_pump",
    "focal_length": "focal_length_mm",
    "collection_waist_at_slm": "collection_waist_at_slm_mm",
    "collection_calibration": "collection_calibration",
}

PARAM_KEYS = {
    "sigma_p": "sigma_p_rad_per_mm",
    "sigma_s": "sigma_s_rad_per_mm",
    "sigma_c": "sigma_c_rad_per_mm",
    "origin_s": "origin_s_rad_per_mm",
    "origin_i": "origin_i_rad_per_mm",
    "amp_scale": "amp_scale",
}


def optics_from_mapping(cfg: dict) -> OpticalSystem:
    missing = [key for name, key in OPTICS_KEYS.items()
               if key not in cfg and name != "collection_calibration"]
    if missing:
        raise ParameterError(f"optical config is missing keys: {', '.join(missing)}")
    kwargs = {name: float(cfg[key]) for name, key in OPTICS_KEYS.items() if key in cfg}
    return OpticalSystem(**kwargs)


def optics_to_mapping(sys: OpticalSystem) -> dict:
    return {key: getattr(sys, name) for name, key in OPTICS_KEYS.items()}


def params_from_mapping(cfg: dict) -> JtmaParams:
    missing = [key for name, key in PARAM_KEYS.items()
               if key not in cfg and name in ("sigma_p", "sigma_s", "sigma_c")]
    if missing:
        raise ParameterError(f"parameter config is missing keys: {', '.join(missing)}")
    kwargs = {name: float(cfg[key]) for name, key in PARAM_KEYS.items() if key in cfg}
    return JtmaParams(**kwargs)


def params_to_mapping(p: JtmaParams) -> dict:
    return {key: getattr(p, name) for name, key in PARAM_KEYS.items()}


def load_optical_system(path: str | Path) -> OpticalSystem:
    return optics_from_mapping(read_kv(path))


def params_from_optics(sys: OpticalSystem) -> JtmaParams:
    """Map source and collection optics onto the JTMA width parameters.

    σ_P = √2/w_p, σ_S = √(4 k_p / L_z) and σ_C is the crystal-plane momentum
    width of the Gaussian collection field of radius w_C at the SLM, using
    q = 2πx/(fλ_s).
    """
    sigma_p = SQRT2 / sys.pump_waist
    sigma_s = math.sqrt(4.0 * sys.k_pump / sys.crystal_length)
    per_mm = slm_scale(sys.lambda_signal, sys.focal_length)
    sigma_c = sys.collection_calibration * per_mm * sys.collection_waist_at_slm
    return JtmaParams(sigma_p=sigma_p, sigma_s=sigma_s, sigma_c=sigma_c)


def refractive_index_for_sigma_s(sigma_s: float, lambda_pump_nm: float, crystal_length_mm: float) -> float:
    """Pump index that makes ``params_from_optics`` return the given σ_S."""
    return sigma_s**2 * crystal_length_mm * lambda_pump_nm * NM_TO_MM / (8.0 * math.pi)


def collection_waist_for_sigma_c(sigma_c: float, lambda_nm: float, focal_length_mm: float) -> float:
    """SLM-plane collection radius (mm) that maps to the given σ_C."""
    return sigma_c / slm_scale(lambda_nm, focal_length_mm)


def slm_scale(lambda_nm: float, focal_length_mm: float) -> float:
    """rad/mm of crystal-plane momentum per mm of SLM-plane position."""
    if focal_length_mm <= 0 or lambda_nm <= 0:
        raise ParameterError("focal length and wavelength must be positive")
    return 2.0 * math.pi / (focal_length_mm * lambda_nm * NM_TO_MM)


def slm_to_momentum(x, lambda_nm: float, focal_length_mm: float):
    """SLM-plane position (mm) to crystal-plane transverse momentum (rad/mm)."""
    return np.asarray(x, dtype=float) * slm_scale(lambda_nm, focal_length_mm)


def momentum_to_slm(q, lambda_nm: float, focal_length_mm: float):
    return np.asarray(q, dtype=float) / slm_scale(lambda_nm, focal_length_mm)


def pump_factor(sum_sq, sigma_p):
    return np.exp(-sum_sq / (2.0 * sigma_p**2))


def jtma_ideal(q_s, q_i, p: JtmaParams):
    """Generated JTMA: Gaussian pump envelope times the phase-matching sinc."""
    sx, sy = _xy(q_s)
    ix, iy = _xy(q_i)
    plus = _sq(sx + ix, sy + iy)
    minus = _sq(sx - ix, sy - iy)
    return p.amp_scale * pump_factor(plus, p.sigma_p) * sinc(minus / p.sigma_s**2)


def jtma_general(q_s, q_i, p: JtmaParams, k: ScaledMomentumConstants):
    """Generated JTMA keeping the type-II scalings c_s, c_i and ε."""
    sx, sy = _xy(q_s)
    ix, iy = _xy(q_i)
    eps = k.epsilon
    tp = _sq(k.c_s * sx + k.c_i * ix, k.c_s * sy + k.c_i * iy) / 2.0
    tm = _sq(k.c_s * sx - k.c_i * ix, k.c_s * sy - k.c_i * iy) / 2.0
    arg = ((2.0 + eps) * tm + eps * tp) / p.sigma_s**2
    return p.amp_scale * sinc(arg) * pump_factor(_sq(sx + ix, sy + iy), p.sigma_p)


def collection_envelope(q, sigma_c):
    qx, qy = _xy(q)
    return np.exp(-_sq(qx, qy) / sigma_c**2)


def jtma_collected(q_s, q_i, p: JtmaParams):
    """Generated JTMA filtered by both Gaussian collection modes.

    The 1/(√π σ_C) mode prefactor lives in ``amp_scale``, so the value at the
    origin is ``amp_scale``.
    """
    return (jtma_ideal(q_s, q_i, p)
            * collection_envelope(q_s, p.sigma_c) * collection_envelope(q_i, p.sigma_c))


def jtma_cl(q_s, q_i, p: JtmaParams):
    """Collection-limited double-Gaussian JTMA (the sinc replaced by the collection envelope).

    Only meaningful when ``p.cl_valid``; callers can check that flag.
    """
    sx, sy = _xy(q_s)
    ix, iy = _xy(q_i)
    plus = _sq(sx + ix, sy + iy)
    minus = _sq(sx - ix, sy - iy)
    return (p.amp_scale * np.exp(-plus / (2.0 * p.sigma_pt**2))
            * np.exp(-minus / (2.0 * p.sigma_c**2)))


def jtma_fourier_plane(x_s, x_i, p: JtmaParams, lambda_s_nm: float, lambda_i_nm: float,
                       focal_length_mm: float):
    """Generated JTMA expressed in SLM-plane coordinates (mm) behind a 2f lens."""
    return jtma_ideal(slm_to_momentum(x_s, lambda_s_nm, focal_length_mm),
                      slm_to_momentum(x_i, lambda_i_nm, focal_length_mm), p)


MODELS = ("collected", "cl", "general")


def amplitude_function(model: str, p: JtmaParams, k: ScaledMomentumConstants | None = None):
    """Return G(q_s, q_i) for the named collected-amplitude model."""
    if model == "collected":
        return lambda qs, qi: jtma_collected(qs, qi, p)
    if model == "cl":
        return lambda qs, qi: jtma_cl(qs, qi, p)
    if model == "general":
        k = k or ScaledMomentumConstants()
        return lambda qs, qi: (jtma_general(qs, qi, p, k)
                               * collection_envelope(qs, p.sigma_c) * collection_envelope(qi, p.sigma_c))
    raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")

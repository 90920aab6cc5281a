import math

import numpy as np
import pytest

from jtmakit.model import (JtmaParams, OpticalSystem, ParameterError, ScaledMomentumConstants, amplitude_function,
                           collection_waist_for_sigma_c, jtma_cl, jtma_collected, jtma_general, jtma_ideal,
                           momentum_to_slm, params_from_mapping, params_from_optics, params_to_mapping,
                           refractive_index_for_sigma_s, sinc, slm_to_momentum)


def optics(**kw):
    base = dict(lambda_pump=405.0, lambda_signal=810.0, lambda_idler=810.0, pump_waist=0.188,
                crystal_length=5.0, refractive_index_pump=1.84, focal_length=400.0,
                collection_waist_at_slm=5.5)
    base.update(kw)
    return OpticalSystem(**base)


def test_sinc_series_branch_matches_direct_evaluation():
    x = np.array([0.0, 5e-5, -9.9e-5, 1e-4, 0.3, math.pi])
    direct = np.where(x == 0, 1.0, np.sin(x) / np.where(x == 0, 1, x))
    assert np.allclose(sinc(x), direct, rtol=1e-12, atol=1e-15)
    assert sinc(math.pi) == pytest.approx(0.0, abs=1e-16)


@pytest.mark.parametrize("field", ["sigma_p", "sigma_s", "sigma_c"])
def test_widths_must_be_positive(field):
    kw = dict(sigma_p=1.0, sigma_s=1.0, sigma_c=1.0)
    kw[field] = 0.0
    with pytest.raises(ParameterError):
        JtmaParams(**kw)


def test_cl_validity_flags():
    assert JtmaParams(1, 1.5, 1).cl_valid and not JtmaParams(1, 1.5, 1).cl_valid_singles
    assert JtmaParams(1, 2.0, 1).cl_valid_singles
    assert not JtmaParams(1, 1.4, 1).cl_valid


@pytest.mark.parametrize("sp, sc, expected", [(7.45, 103.2, 7.43), (1.0, 1.0, 1 / math.sqrt(2))])
def test_harmonic_width(sp, sc, expected):
    assert JtmaParams(sp, 100.0, sc).sigma_pt == pytest.approx(expected, abs=5e-3)


def test_harmonic_width_small_ratio_limit():
    p = JtmaParams(0.1, 10.0, 1.0)
    assert abs(p.sigma_pt - p.sigma_p) / p.sigma_p < 5e-3


@pytest.mark.parametrize("waist, sigma_p", [(0.188, 7.52), (0.450, 3.14)])
def test_pump_width_from_waist(waist, sigma_p):
    assert params_from_optics(optics(pump_waist=waist)).sigma_p == pytest.approx(sigma_p, rel=2e-3)


def test_generation_width_from_back_solved_index():
    n = refractive_index_for_sigma_s(151.1, 405.0, 5.0)
    assert n == pytest.approx(1.84, abs=1e-3)
    assert params_from_optics(optics(refractive_index_pump=n)).sigma_s == pytest.approx(151.1, rel=1e-12)


def test_collection_width_round_trip():
    w = collection_waist_for_sigma_c(106.5, 810.0, 400.0)
    assert params_from_optics(optics(collection_waist_at_slm=w)).sigma_c == pytest.approx(106.5, rel=1e-12)


def test_wide_pump_gives_narrow_width():
    assert params_from_optics(optics(pump_waist=1e6)).sigma_p < 1e-5


@pytest.mark.parametrize("kw", [{"pump_waist": 0.0}, {"focal_length": -1.0}, {"crystal_length": math.nan}])
def test_optics_reject_bad_lengths(kw):
    with pytest.raises(ParameterError):
        optics(**kw)


def test_degeneracy_flag():
    assert optics().degenerate
    assert not optics(lambda_signal=800.0).degenerate


def test_slm_mapping():
    assert slm_to_momentum([1.0, 0.0], 810.0, 250.0)[0] == pytest.approx(31.03, abs=5e-3)
    q = slm_to_momentum([0.3, -0.2], 810.0, 250.0)
    assert np.allclose(momentum_to_slm(q, 810.0, 250.0), [0.3, -0.2])
    assert np.allclose(slm_to_momentum([1.0, 1.0], 810.0, 500.0), slm_to_momentum([0.5, 0.5], 810.0, 250.0))
    assert np.all(slm_to_momentum([0.0, 0.0], 810.0, 250.0) == 0.0)


@pytest.mark.parametrize("c_s, c_i, eps", [(0.9677, 1.0139, -0.0193), (0.9979, 1.047, 0.043)])
def test_epsilon_from_scalings(c_s, c_i, eps):
    k = ScaledMomentumConstants(c_s, c_i)
    assert k.epsilon == 1.0 - 1.0 / (c_s * c_i)
    assert k.epsilon == pytest.approx(eps, abs=6e-4)


def test_ideal_values():
    p = JtmaParams(5.0, 20.0, 30.0, amp_scale=2.0)
    assert jtma_ideal([0, 0], [0, 0], p) == pytest.approx(2.0)
    q = np.array([3.0, 4.0])
    assert jtma_ideal(q, -q, p) == pytest.approx(2.0 * math.sin(100 / 400) / (100 / 400))
    # first null of the sinc: |q_s - q_i|^2 = pi sigma_s^2
    qs = np.array([math.sqrt(math.pi) * 20.0 / 2, 0.0])
    assert jtma_ideal(qs, -qs, p) == pytest.approx(0.0, abs=1e-15)


def test_collected_ridge_value():
    p = JtmaParams(5.0, 20.0, 30.0)
    q = np.array([30.0, 0.0])
    expected = math.exp(-2.0) * float(sinc(4 * 900 / 400))
    assert jtma_collected(q, -q, p) == pytest.approx(expected, rel=1e-12)


def test_collected_without_filtering_tends_to_ideal():
    p = JtmaParams(5.0, 20.0, 1e9)
    rng = np.random.default_rng(0)
    qs, qi = rng.normal(0, 10, (2, 50, 2))
    assert np.allclose(jtma_collected(qs, qi, p), jtma_ideal(qs, qi, p), rtol=1e-12, atol=1e-300)


def test_cl_double_gaussian_value():
    p = JtmaParams(7.45, 151.1, 103.2)
    qs, qi = np.array([10.0, -5.0]), np.array([-3.0, 2.0])
    plus = (7.0**2 + 3.0**2)
    minus = (13.0**2 + 7.0**2)
    expected = math.exp(-plus / (2 * p.sigma_pt**2) - minus / (2 * 103.2**2))
    assert jtma_cl(qs, qi, p) == pytest.approx(expected, rel=1e-13)


def test_general_model_reduces_to_ideal():
    p = JtmaParams(5.0, 20.0, 30.0)
    rng = np.random.default_rng(1)
    qs, qi = rng.normal(0, 15, (2, 40, 2))
    assert np.array_equal(jtma_general(qs, qi, p, ScaledMomentumConstants()), jtma_ideal(qs, qi, p))


def test_amplitude_function_rejects_unknown_model():
    with pytest.raises(ValueError, match="unknown model"):
        amplitude_function("sinc", JtmaParams(1, 1, 1))


def test_momentum_arrays_need_two_components():
    with pytest.raises(ValueError, match="trailing axis"):
        jtma_ideal([1.0, 2.0, 3.0], [0.0, 0.0], JtmaParams(1, 1, 1))


def test_mapping_round_trip():
    p = JtmaParams(7.45, 151.1, 103.2, origin_s=3.0, origin_i=-1.0, amp_scale=2.0)
    assert params_from_mapping(params_to_mapping(p)) == p
    with pytest.raises(ParameterError, match="sigma_c"):
        params_from_mapping({"sigma_p_rad_per_mm": 1, "sigma_s_rad_per_mm": 1})

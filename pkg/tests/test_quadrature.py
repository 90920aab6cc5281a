import math

import numpy as np
import pytest
from scipy.special import erf

from jtmakit.model import JtmaParams, jtma_cl
from jtmakit.quadrature import (QuadratureSpec, choose_truncation, composite_rule, disk_rule, gauss_legendre,
                                integrate_nd, refine, tensor_sum)


def test_two_dimensional_gaussian():
    res = integrate_nd(lambda x, y: np.exp(-x * x - y * y), [(-8, 8), (-8, 8)], QuadratureSpec(order=32))
    assert res.converged
    assert float(res) == pytest.approx(math.pi, rel=1e-10)


def test_even_integrand_halves():
    f = lambda x: np.sin(x * x) / np.where(x == 0, 1.0, x * x)
    full = integrate_nd(f, [(-3, 3)]).value
    half = integrate_nd(f, [(0, 3)]).value
    assert full == pytest.approx(2 * half, rel=1e-10)


def test_four_dimensional_cl_mass():
    p = JtmaParams(sigma_p=50.0, sigma_s=200.0, sigma_c=60.0)
    R = choose_truncation(p)

    def f(sx, sy, ix, iy):
        return jtma_cl(np.stack(np.broadcast_arrays(sx, sy), -1), np.stack(np.broadcast_arrays(ix, iy), -1), p)

    res = integrate_nd(f, [(-R, R)] * 4, QuadratureSpec(order=24, max_refinements=2))
    exact = math.pi**2 * p.sigma_pt**2 * p.sigma_c**2
    assert res.converged
    assert res.value == pytest.approx(exact, rel=1e-6)


def test_truncation_rule():
    assert choose_truncation(JtmaParams(7.45, 151.1, 103.2)) == pytest.approx(825.6)
    assert 1.0 - erf(8 / math.sqrt(2)) ** 2 < 1e-12


def test_composite_rule_integrates_kink_exactly():
    x, w = composite_rule([-1.0, 0.3, 2.0], 8)
    assert np.sum(w * np.abs(x - 0.3)) == pytest.approx((1.3**2 + 1.7**2) / 2, rel=1e-14)


def test_degenerate_panels_are_skipped():
    x, w = composite_rule([0.0, 0.0, 1.0], 8)
    assert x.size == 8 and np.sum(w) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        composite_rule([1.0, 0.0], 8)


def test_disk_rule_area_and_moment():
    pts, w = disk_rule((2.0, -1.0), 3.0, 16, 32)
    assert np.sum(w) == pytest.approx(9 * math.pi, rel=1e-13)
    assert np.sum(w * pts[:, 0]) == pytest.approx(2.0 * 9 * math.pi, rel=1e-13)


def test_refine_flags_non_convergence():
    res = refine(lambda n: 1.0 / n, QuadratureSpec(order=8, max_refinements=2))
    assert not res.converged and res.order == 32 and len(res.levels) == 2


def test_tensor_sum_independent_of_workers():
    rules = [gauss_legendre(40, -1, 1)] * 3
    f = lambda x, y, z: np.cos(x + 2 * y) * np.exp(z)
    assert tensor_sum(f, rules, 1) == tensor_sum(f, rules, 4)


@pytest.mark.parametrize("kw", [{"order": 4}, {"target_rel_tol": 0.5}, {"truncation_radius": 0.0},
                                {"max_refinements": -1}])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        QuadratureSpec(**kw)


def test_dimension_limits():
    with pytest.raises(ValueError):
        integrate_nd(lambda *a: 1.0, [(0, 1)] * 5)
    with pytest.raises(ValueError):
        integrate_nd(lambda x: x, [(0, math.inf)])

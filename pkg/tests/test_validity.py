import math

import numpy as np
import pytest
from scipy.integrate import quad

from jtmakit.validity import RangeError, cl_overlap, overlap_result, overlap_table, threshold_ratio


def overlap_by_adaptive_quadrature(ratio, c):
    g = lambda r: math.exp(-r * r / c)
    f = lambda r: g(r) * (math.sin(2 * r * r / ratio**2) / (2 * r * r / ratio**2) if r > 0 else 1.0)
    top = 8 * math.sqrt(c)
    kw = dict(limit=400, epsabs=1e-13, epsrel=1e-12)
    fg = quad(lambda r: r * f(r) * g(r), 0, top, **kw)[0]
    ff = quad(lambda r: r * f(r) ** 2, 0, top, **kw)[0]
    gg = quad(lambda r: r * g(r) ** 2, 0, top, **kw)[0]
    return fg / math.sqrt(ff * gg)


@pytest.mark.parametrize("ratio", [0.6, 1.0, 1.4161, 2.0, 5.0])
@pytest.mark.parametrize("path, c", [("coincidence", 1.0), ("singles", 2.0)])
def test_overlap_matches_adaptive_quadrature(ratio, path, c):
    assert cl_overlap(ratio, path) == pytest.approx(overlap_by_adaptive_quadrature(ratio, c), abs=1e-9)


def test_anchor_values():
    assert cl_overlap(1.4161) == pytest.approx(0.99, abs=5e-4)
    assert cl_overlap(3 / (2 * math.sqrt(2))) == pytest.approx(0.95, abs=5e-3)
    assert cl_overlap(1e3) == pytest.approx(1.0, abs=1e-9)


def test_thresholds():
    tc = threshold_ratio(0.99, "coincidence")
    ts = threshold_ratio(0.99, "singles")
    assert tc == pytest.approx(1.4161, abs=5e-3)
    assert ts == pytest.approx(2.0, abs=1e-2)
    assert threshold_ratio(0.95) == pytest.approx(1.06, abs=1e-2)
    assert cl_overlap(tc) >= 0.99 > cl_overlap(tc - 2e-4)


def test_overlap_increases_with_ratio():
    ratios = np.linspace(0.5, 10.0, 60)
    for path in ("coincidence", "singles"):
        vals = [cl_overlap(r, path) for r in ratios]
        assert np.all(np.diff(vals) > 0)


def test_bad_inputs():
    with pytest.raises(ValueError):
        cl_overlap(0.0)
    with pytest.raises(ValueError):
        cl_overlap(1.0, "heralded")
    with pytest.raises(ValueError):
        threshold_ratio(0.4)


def test_unreachable_target_raises_range_error(monkeypatch):
    # the real overlap saturates at 1 in double precision, so cap it artificially
    import jtmakit.validity as validity

    monkeypatch.setattr(validity, "cl_overlap", lambda ratio, path="coincidence": 0.9 * ratio / (1 + ratio))
    with pytest.raises(RangeError):
        validity.threshold_ratio(0.95)


def test_table_rows():
    rows = overlap_table([1.0, 2.0])
    assert [(r.ratio, r.path) for r in rows] == [(1.0, "coincidence"), (1.0, "singles"),
                                                (2.0, "coincidence"), (2.0, "singles")]
    assert overlap_result(2.0).overlap == rows[2].overlap

import math

import numpy as np
import pytest

from jtmakit.holograms import Disk, GainError, Hologram, PiStep, flat, pi_step, pixel


def test_pi_step_values():
    h = pi_step(2.0)
    q = np.array([[1.999, 5.0], [2.001, -5.0]])
    assert list(h(q)) == [1.0, -1.0]
    assert np.all(flat()(q) == 1.0)


def test_disk_indicator_and_shift():
    d = Disk((1.0, 1.0), 2.0)
    assert list(d(np.array([[1.0, 3.0], [1.0, 3.01]]))) == [1.0, 0.0]
    assert d.shifted(-1.0, -1.0).center == (0.0, 0.0)
    assert d.overlaps(Disk((4.9, 1.0), 2.0)) and not d.overlaps(Disk((5.0, 1.0), 2.0))
    with pytest.raises(ValueError):
        Disk((0, 0), 0.0)


def test_gain_bound_enforced_for_overlapping_disks():
    with pytest.raises(GainError):
        Hologram((Disk((0, 0), 1), Disk((0.5, 0), 1)), (0.8, 0.8))
    h = Hologram((Disk((0, 0), 1), Disk((0.5, 0), 1)), (0.5, 0.5))
    assert h.max_modulus() == pytest.approx(1.0)


def test_gain_bound_for_step_sums():
    h = Hologram((PiStep(0.0), PiStep(1.0)), (0.5, 0.5))
    assert h.max_modulus() == pytest.approx(1.0)
    with pytest.raises(GainError):
        Hologram((PiStep(0.0), PiStep(1.0)), (0.6, 0.6))


def test_complex_coefficients_evaluate_complex():
    h = Hologram((Disk((0, 0), 1), Disk((3, 0), 1)), (1.0, 1j), global_gain=1.0)
    v = h(np.array([[0.0, 0.0], [3.0, 0.0], [10.0, 0.0]]))
    assert np.allclose(v, [1.0, 1j, 0.0])


def test_shift_and_terms():
    h = pixel((1.0, 0.0), 0.5).shifted(-1.0)
    assert h.primitives[0].center == (0.0, 0.0)
    assert h.terms() == [(1.0, h.primitives[0])]
    assert pi_step(2.0).shifted(-2.0).steps[0].edge == 0.0
    assert math.isinf(flat().steps[0].edge)

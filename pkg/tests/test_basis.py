import math

import numpy as np
import pytest

from jtmakit.basis import (DesignConstraints, ModeMatrix, PackingError, PixelBasis, RingLayout,
                           candidate_ring_counts, cl_pair_integral, compute_T, d_ent_from_fidelity,
                           entanglement_metrics, gaussian_pair_integral, gram_matrix, heralding_sweep, hex_points,
                           joint_probability, make_pixel_basis, mutually_unbiased_vector, optimize_basis,
                           pair_amplitude, polar_pair_integral, projective_stats, singles_prob,
                           superposition_hologram)
from jtmakit.holograms import Disk
from jtmakit.model import JtmaParams
from jtmakit.scan import coincidence_amplitude

P = JtmaParams(sigma_p=7.45, sigma_s=151.1, sigma_c=103.2)


def three_pixels():
    return PixelBasis((Disk((40.0, 0.0), 18.0), Disk((-20.0, 34.6), 18.0), Disk((-20.0, -34.6), 18.0)),
                      "rings", 1.5 * P.sigma_c, (3,))


# --- bases -----------------------------------------------------------------

def test_hex_points_are_ordered_by_distance():
    pts = hex_points(7)
    assert np.allclose(pts[0], 0.0)
    assert np.allclose(np.hypot(pts[1:, 0], pts[1:, 1]), 1.0)


def test_hex_basis_for_31_pixels():
    b = make_pixel_basis(31, "hex", P)
    assert b.d == 31
    assert b.min_gap() >= P.sigma_p * (1 - 1e-12)
    assert max(math.hypot(*px.center) + px.radius for px in b.pixels) <= 1.5 * P.sigma_c * (1 + 1e-12)


def test_ring_basis_fills_collection_disk():
    b = make_pixel_basis(31, "rings", P)
    assert b.ring_counts == candidate_ring_counts(31)[0]
    outer = max(math.hypot(*px.center) + px.radius for px in b.pixels)
    assert outer == pytest.approx(1.5 * P.sigma_c, rel=1e-9)


def test_single_pixel_is_centred_and_fills_the_disk():
    b = make_pixel_basis(1, "hex", P)
    assert b.pixels[0].center == (0.0, 0.0) and b.pixels[0].radius == pytest.approx(1.5 * P.sigma_c)


def test_touching_pixels_are_rejected():
    with pytest.raises(PackingError, match="disjoint"):
        make_pixel_basis(7, "hex", P, spacing_factor=0.0)


@pytest.mark.parametrize("layout", ["hex", "rings"])
def test_impossible_packing(layout):
    with pytest.raises(PackingError):
        make_pixel_basis(5000, layout, P)


def test_candidate_partitions():
    assert candidate_ring_counts(5) == [(5,)]
    assert all(sum(c) == 31 and c[:2] == (1, 6) for c in candidate_ring_counts(31))


def test_ring_layout_respects_gap():
    lay = RingLayout((1, 6, 12), (10.0, 10.0, 10.0), 7.45)
    b = PixelBasis(lay.pixels(), "rings", 1e4)
    assert b.min_gap() >= 7.45 - 1e-9


def test_basis_serialisation_includes_slm_coordinates():
    text = three_pixels().dumps(810.0, 400.0)
    assert "center_x_slm_mm" in text and "radius_rad_per_mm" in text


# --- T matrix --------------------------------------------------------------

def test_pair_integral_two_routes_agree():
    a, b = Disk((30.0, 10.0), 25.0), Disk((-25.0, -5.0), 20.0)
    semi = cl_pair_integral(a, b, P, 48)
    polar = polar_pair_integral(a, b, P, "cl", 256)
    assert semi == pytest.approx(polar, rel=1e-6)


def test_pair_integral_of_large_disks_is_full_mass():
    big = Disk((0.0, 0.0), 400.0)
    val = gaussian_pair_integral(big, big, 30.0, 50.0, 32)
    assert val == pytest.approx(math.pi**2 * 30.0**2 * 50.0**2, rel=1e-10)


def test_single_centred_pixel_gives_positive_entry():
    b = PixelBasis((Disk((0.0, 0.0), 30.0),), "rings", 1e3)
    T = compute_T(b, b, P)
    assert T.entries.shape == (1, 1) and T.entries[0, 0] > 0


def test_distant_pairs_are_pruned_to_zero():
    res = pair_amplitude(Disk((100.0, 0.0), 10.0), Disk((100.0, 0.0), 10.0), P)
    assert res.value == 0.0 and res.converged


def test_uniform_mask_rolls_off_with_radius():
    b = make_pixel_basis(31, "hex", P)
    T = compute_T(b, b.mirrored(), P)
    diag = np.abs(np.diag(T.entries))
    radius = np.round([math.hypot(*px.center) for px in b.pixels], 6)
    # pixels are equal, so the diagonal follows the collection envelope
    shells = [diag[radius == r].mean() for r in np.unique(radius)]
    assert np.all(np.diff(shells) < 0)
    assert T.crosstalk() > 0.01


def test_plane_wave_limit_diagonalises_T():
    # σ_P ≈ 0.02 σ_C with a 40 σ_P gap: every off-diagonal pair is beyond the kernel reach
    p = JtmaParams(sigma_p=2.0, sigma_s=151.1, sigma_c=103.2)
    b = make_pixel_basis(7, "hex", p, spacing_factor=40.0)
    T = compute_T(b, b.mirrored(), p)
    assert T.converged
    assert T.crosstalk() < 1e-10


def test_gram_matrix_is_identity_for_disjoint_pixels():
    G = gram_matrix(three_pixels(), P)
    assert np.allclose(G, np.eye(3), atol=1e-12)


def test_mode_matrix_csv():
    T = ModeMatrix(np.array([[1.0, 0.5j], [0.0, 2.0]]), np.ones(2))
    lines = T.to_csv().splitlines()
    assert lines[0] == "a,b,re,im" and lines[2] == "0,1,0.0,0.5"


# --- metrics ---------------------------------------------------------------

@pytest.mark.parametrize("d", [1, 2, 5, 31])
def test_maximally_entangled_metrics(d):
    m = entanglement_metrics(np.eye(d) / math.sqrt(d))
    assert m.schmidt_number == pytest.approx(d)
    assert m.fidelity == pytest.approx(1.0)
    assert m.d_ent_lower_bound == d
    assert m.eof == pytest.approx(math.log2(d), abs=1e-12)


def test_product_state_metrics():
    T = np.zeros((4, 4))
    T[0, 0] = 3.0
    m = entanglement_metrics(T)
    assert m.schmidt_number == pytest.approx(1.0) and m.eof == 0.0 and m.d_ent_lower_bound == 1


@pytest.mark.parametrize("F, d, expected", [(0.5, 4, 2), (0.51, 4, 3), (0.99, 31, 31), (0.0, 5, 0)])
def test_d_ent_rule(F, d, expected):
    assert d_ent_from_fidelity(F, d) == expected


def test_zero_matrix_rejected():
    with pytest.raises(ValueError):
        entanglement_metrics(np.zeros((2, 2)))


def test_schmidt_decay_of_sampled_double_gaussian():
    # amplitude Schmidt ratio of exp(-(x+y)²/2a² - (x-y)²/2b²) is (b-a)/(b+a)
    a, b = 20.0, 60.0
    x = np.linspace(-480.0, 480.0, 601)
    K = np.exp(-(x[:, None] + x[None, :]) ** 2 / (2 * a * a) - (x[:, None] - x[None, :]) ** 2 / (2 * b * b))
    s = entanglement_metrics(K).schmidt_coefficients
    dense = np.linalg.svd(K, compute_uv=False)
    assert np.allclose(s[1:6] / s[:5], dense[1:6] / dense[:5], rtol=1e-9)
    assert np.allclose(s[1:6] / s[:5], (b - a) / (b + a), rtol=1e-2)


# --- holograms and projective statistics ----------------------------------

def test_superposition_gains():
    b = make_pixel_basis(31, "hex", P)
    assert superposition_hologram(np.eye(31)[4], b).global_gain == 1.0
    assert superposition_hologram(np.ones(31) / math.sqrt(31), b).global_gain == pytest.approx(math.sqrt(31))
    two = PixelBasis((Disk((30, 0), 10), Disk((-30, 0), 10)), "rings", 200)
    assert superposition_hologram(np.ones(2) / math.sqrt(2), two).global_gain == pytest.approx(math.sqrt(2))
    with pytest.raises(ValueError):
        superposition_hologram(np.zeros(2), two)
    with pytest.raises(ValueError):
        superposition_hologram(np.ones(2), two)


def test_basis_projectors_pick_matrix_elements():
    T = np.arange(9.0).reshape(3, 3) + 1j
    assert projective_stats(np.eye(3)[1], np.eye(3)[2], T) == pytest.approx(abs(T[1, 2]) ** 2)


def test_unbiased_vectors_on_flat_diagonal():
    d, t = 5, 0.7
    T = t * np.eye(d)
    v = mutually_unbiased_vector(d, 2)
    w = mutually_unbiased_vector(d, d - 2)
    assert projective_stats(v, w, T) == pytest.approx(d * d * t * t)
    assert projective_stats(v, v, T) == pytest.approx(0.0, abs=1e-24)


def test_projective_stats_match_direct_hologram_integral():
    b = three_pixels()
    bi = b.mirrored()
    T = compute_T(b, bi, P)
    v = np.array([1.0, 1j, -1.0]) / math.sqrt(3)
    w = np.array([0.6, 0.0, 0.8])
    amp = coincidence_amplitude(superposition_hologram(v, b), superposition_hologram(w, bi), P).value
    assert projective_stats(v, w, T) == pytest.approx(abs(amp) ** 2, rel=1e-6)


# --- singles and heralding -------------------------------------------------

def test_singles_dominate_joint():
    b = three_pixels()
    T = compute_T(b, b.mirrored(), P)
    v = mutually_unbiased_vector(3, 1)
    single = singles_prob(v, b, P, sinc_factor=False).value
    for k in range(3):
        assert joint_probability(v, mutually_unbiased_vector(3, k), T, P) <= single
        assert joint_probability(v, np.eye(3)[k], T, P) <= single


def test_collection_limited_singles_track_the_sinc():
    p = JtmaParams(sigma_p=7.45, sigma_s=2.0 * 103.2, sigma_c=103.2)
    b = PixelBasis((Disk((0.0, 0.0), 15.0),), "rings", 1e6)
    full = singles_prob([1.0], b, p).value
    cl = singles_prob([1.0], b, p, sinc_factor=False).value
    assert cl == pytest.approx(full, rel=1e-2)


def test_heralding_grows_with_idler_pixel():
    eta = heralding_sweep(20.0, [10.0, 20.0, 40.0, 80.0, 160.0, 400.0], P)
    # the plateau is flat to roundoff once the idler pixel swallows the pump footprint
    assert all(b >= a * (1 - 1e-12) for a, b in zip(eta, eta[1:]))
    assert all(0 < e <= 1 for e in eta)
    assert eta[2] > eta[1]


@pytest.mark.parametrize("bad", [[], [20.0, 10.0], [0.0]])
def test_heralding_rejects_bad_diameters(bad):
    with pytest.raises(ValueError):
        heralding_sweep(20.0, bad, P)


# --- optimiser -------------------------------------------------------------

def test_two_pixels_are_already_optimal():
    r = optimize_basis(2, P)
    assert r.feasible
    assert r.history[-1][1] == r.history[0][1] == 0.0
    assert r.metrics.d_ent_lower_bound == 2


def test_zero_crosstalk_cap_is_infeasible():
    r = optimize_basis(7, P, constraints=DesignConstraints(crosstalk_cap=0.0))
    assert not r.feasible


def test_seven_pixel_design():
    r = optimize_basis(7, P)
    assert r.feasible and r.metrics.d_ent_lower_bound == 7
    fids = [h[2] for h in r.history]
    assert all(b >= a - 1e-12 for a, b in zip(fids, fids[1:]))


def test_optimiser_rejects_unknown_objective():
    with pytest.raises(ValueError):
        optimize_basis(7, P, objective="min_ent")

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_scene
from risloc.codebook import children
from risloc.errors import InvalidArgument
from risloc.geometry import (
    cascade,
    derive_channel_params,
    hop_channels,
    matched_combiner,
    optimal_phase_profile,
    reflection_gain,
    steering_vector,
)
from risloc.training import (
    Link,
    NoiseModel,
    observe_pair,
    random_phase_profile,
    run_adaptive,
    run_exhaustive,
    run_random_phase,
    select_and_feedback,
    slot_count,
    sum_power,
    trace_lines,
)

NOISELESS = NoiseModel(0.0)


def _bs_beam(geom, p):
    return steering_vector(geom.n_bs, p.theta_br) / math.sqrt(geom.n_bs)


def _direct_response(geom, w, phi, tx_power=1.0):
    """w^H sqrt(P) H[n] f from explicit per-subcarrier cascaded matrices."""
    p = derive_channel_params(geom)
    h_br, h_rm = hop_channels(geom, p)
    h = cascade(h_rm, phi, h_br)
    return math.sqrt(tx_power) * np.array([w.conj() @ hn @ _bs_beam(geom, p) for hn in h])


# --- observe_pair ---------------------------------------------------------------------------

def test_matched_pair_amplitude(ref_geom, ref_link):
    p = ref_link.params
    w = matched_combiner(ref_geom, p)
    phi = optimal_phase_profile(p.theta_rm, p.phi_br, ref_geom)
    y = observe_pair(ref_link, w, phi, 2.5, NOISELESS)
    expected = math.sqrt(2.5) * math.sqrt(64 * 16 * 16) * p.rho_br * p.rho_rm
    np.testing.assert_allclose(np.abs(y), expected, rtol=1e-12)


def test_response_matches_explicit_cascade(ref_geom, ref_link):
    rng = np.random.default_rng(0)
    w = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    phi = random_phase_profile(16, rng)
    np.testing.assert_allclose(observe_pair(ref_link, w, phi, 3.0, NOISELESS),
                               _direct_response(ref_geom, w, phi, 3.0), rtol=1e-12)


def test_combiner_in_channel_nullspace(ref_geom, ref_link):
    rng = np.random.default_rng(1)
    a = steering_vector(16, ref_link.params.phi_rm)
    v = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    w = v - a * (np.vdot(a, v) / np.vdot(a, a))
    phi = random_phase_profile(16, rng)
    y = observe_pair(ref_link, w / np.linalg.norm(w), phi, 1.0, NOISELESS)
    assert np.max(np.abs(y)) < 1e-12 * ref_link.params.rho_br * ref_link.params.rho_rm * 64


def test_zero_power_gives_noise_with_combiner_variance(ref_link):
    rng = np.random.default_rng(2)
    w = np.exp(2j * np.pi * rng.random(16)) * 0.5  # ||w||^2 = 4
    phi = random_phase_profile(16, rng)
    samples = np.concatenate([observe_pair(ref_link, w, phi, 0.0, NoiseModel(3.0), rng) for _ in range(4000)])
    assert np.mean(np.abs(samples) ** 2) == pytest.approx(3.0 * 4.0, rel=0.03)
    assert abs(np.mean(samples)) < 0.1


def test_negative_noise_power_rejected():
    with pytest.raises(InvalidArgument):
        NoiseModel(-1.0)


# --- sum power and selection ----------------------------------------------------------------

def test_sum_power_zero():
    np.testing.assert_array_equal(sum_power(np.zeros((2, 2, 31), complex)), np.zeros((2, 2)))


@given(st.floats(0, 100), st.floats(-np.pi, np.pi))
def test_sum_power_constant_magnitude(a, ph):
    y = np.full((1, 1, 31), a * np.exp(1j * ph))
    assert sum_power(y)[0, 0] == pytest.approx(31 * a * a, rel=1e-12)


def test_sum_power_noise_mean():
    rng = np.random.default_rng(3)
    z = (rng.standard_normal((10_000, 31)) + 1j * rng.standard_normal((10_000, 31))) / math.sqrt(2)
    assert sum_power(z).mean() == pytest.approx(31.0, rel=0.03)


@pytest.mark.parametrize("p,expected", [
    ([[1, 2], [3, 0]], (2, 1)),
    ([[7, 7], [7, 7]], (1, 1)),
    ([[5, 5], [1, 1]], (1, 1)),
    ([[0, 9], [0, 9]], (1, 2)),
])
def test_select_examples(p, expected):
    assert select_and_feedback(np.array(p, float)) == expected


@settings(max_examples=300)
@given(arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.integers(0, 3).map(float)))
def test_select_matches_column_major_first_max(p):
    # oracle: scan columns first, then rows
    best, where = -1.0, None
    for c in range(p.shape[1]):
        for r in range(p.shape[0]):
            if p[r, c] > best:
                best, where = p[r, c], (r + 1, c + 1)
    assert select_and_feedback(p) == where


@pytest.mark.parametrize("idx,k,expected", [(1, 2, [1, 2]), (3, 2, [5, 6]), (2, 4, [5, 6, 7, 8])])
def test_children(idx, k, expected):
    assert children(idx, k) == expected


def test_children_rejects_zero():
    with pytest.raises(InvalidArgument):
        children(0, 2)


@pytest.mark.parametrize("scheme,expected", [("proposed", 12), ("exhaustive", 2048), ("random_phase", 32),
                                             ("optimal", 0)])
def test_slot_count(scheme, expected):
    assert slot_count(scheme, 6, 2, 2) == expected


def test_slot_count_non_divisible():
    with pytest.raises(InvalidArgument):
        slot_count("proposed", 6, 2, 3)
    with pytest.raises(InvalidArgument):
        slot_count("random_phase", 6, 2, 3)
    with pytest.raises(InvalidArgument):
        slot_count("teleport", 6, 2, 2)


# --- adaptive protocol ----------------------------------------------------------------------

def test_adaptive_uses_twelve_slots(ref_link, ris_cb, ms_cb):
    out = run_adaptive(ref_link, ris_cb, ms_cb, 1.0, NoiseModel(1e-12, 7))
    assert out.slots_used == 12
    assert sum(st.received.shape[0] * st.received.shape[1] for st in out.per_stage) == 6 * 4


def test_adaptive_noise_free_picks_best_ris_codeword(ref_link, ris_cb, ms_cb):
    out = run_adaptive(ref_link, ris_cb, ms_cb, 1.0, NOISELESS)
    for st_ in out.per_stage:
        top = np.sort(st_.sum_power.ravel())[::-1]
        assert top[0] - top[1] > 1e-9 * top[0]
    gains = [abs(reflection_gain(c, ref_link.params, ref_link.geom)) for c in ris_cb.level(6).T]
    assert out.final_ris_index == int(np.argmax(gains)) + 1


def test_stage_one_sum_power_closed_form(ref_geom, ref_link, ris_cb, ms_cb):
    p = ref_link.params
    tx = 4.0
    out = run_adaptive(ref_link, ris_cb, ms_cb, tx, NOISELESS)
    a_r = steering_vector(16, p.phi_rm)
    expected = np.empty((2, 2))
    for m in range(2):
        for k in range(2):
            beta = reflection_gain(ris_cb.level(1)[:, k], p, ref_geom)
            amp = math.sqrt(tx) * p.rho_br * p.rho_rm * beta * np.vdot(ms_cb.level(1)[:, m], a_r) * math.sqrt(64)
            expected[m, k] = 31 * abs(amp) ** 2
    np.testing.assert_allclose(out.per_stage[0].sum_power, expected, rtol=1e-10)


def test_adaptive_follows_children(ref_link, ris_cb, ms_cb):
    out = run_adaptive(ref_link, ris_cb, ms_cb, 1.0, NoiseModel(1e-14, 3))
    for prev, nxt in zip(out.per_stage, out.per_stage[1:]):
        assert nxt.ris_candidates == children(prev.ris_candidates[prev.selected_ris - 1], 2)
        assert nxt.ms_candidates == children(prev.ms_candidates[prev.selected_ms - 1], 2)


def test_adaptive_monotone_refinement_reference_scene(ref_link, ris_cb, ms_cb):
    out = run_adaptive(ref_link, ris_cb, ms_cb, 1.0, NOISELESS)
    winners = [st_.sum_power[st_.selected_ms - 1, st_.selected_ris - 1] for st_ in out.per_stage]
    assert np.all(np.diff(winners) >= 0)


@pytest.mark.xfail(strict=True, reason="refinement is non-monotone for about a third of random placements; see notes")
def test_adaptive_monotone_refinement_random_placements(ris_cb, ms_cb):
    rng = np.random.default_rng(99)
    for _ in range(100):
        link = Link.from_geometry(random_scene(rng))
        out = run_adaptive(link, ris_cb, ms_cb, 1.0, NOISELESS)
        winners = [st_.sum_power[st_.selected_ms - 1, st_.selected_ris - 1] for st_ in out.per_stage]
        assert np.all(np.diff(winners) >= 0)


def test_adaptive_noise_free_deterministic(ref_link, ris_cb, ms_cb):
    a = run_adaptive(ref_link, ris_cb, ms_cb, 1.0, NOISELESS)
    b = run_adaptive(ref_link, ris_cb, ms_cb, 1.0, NOISELESS)
    assert a.final_ris_index == b.final_ris_index and a.final_ms_index == b.final_ms_index
    assert np.array_equal(a.stacked_final, b.stacked_final)
    for sa, sb in zip(a.per_stage, b.per_stage):
        assert np.array_equal(sa.received, sb.received)


def test_adaptive_seeded_noise_reproducible(ref_link, ris_cb, ms_cb):
    a = run_adaptive(ref_link, ris_cb, ms_cb, 1.0, NoiseModel(1e-12), np.random.default_rng(5))
    b = run_adaptive(ref_link, ris_cb, ms_cb, 1.0, NoiseModel(1e-12), np.random.default_rng(5))
    assert np.array_equal(a.stacked_final, b.stacked_final)


def test_feedback_minimality(ref_link, ris_cb, ms_cb):
    out = run_adaptive(ref_link, ris_cb, ms_cb, 1.0, NoiseModel(1e-12, 4), record_trace=True)
    lines = trace_lines(0, out)
    fb = [ln.split(",") for ln in lines if ln.split(",")[2] == "fb"]
    assert [int(f[1]) for f in fb] == [1, 2, 3, 4, 5, 6]
    assert all(f[3] == "" and f[5] == "" and 1 <= int(f[4]) <= 2 for f in fb)
    slot_rows = [ln for ln in lines if ln.split(",")[2] != "fb"]
    assert [int(ln.split(",")[2]) for ln in slot_rows] == list(range(1, 13))
    for row in slot_rows:
        assert len(row.split(",")[3].split(";")) == 2


@pytest.mark.parametrize("sigma_sq", [0.0, 1e-12])
def test_final_codewords_satisfy_constraints(ref_link, ris_cb, ms_cb, sigma_sq):
    for run in (run_adaptive, run_exhaustive):
        out = run(ref_link, ris_cb, ms_cb, 1.0, NoiseModel(sigma_sq, 1))
        assert any(np.array_equal(out.final_ris_codeword, c) for c in ris_cb.level(6).T)
        assert any(np.array_equal(out.final_ms_codeword, c) for c in ms_cb.level(6).T)
        np.testing.assert_allclose(np.abs(out.final_ris_codeword), 0.25, atol=1e-10)
    out = run_random_phase(ref_link, ms_cb, 1.0, NoiseModel(sigma_sq, 1))
    np.testing.assert_allclose(np.abs(out.final_ris_codeword), 0.25, atol=1e-12)


# --- baselines ------------------------------------------------------------------------------

def test_exhaustive_slots_and_oracle(ref_geom, ref_link, ris_cb, ms_cb):
    out = run_exhaustive(ref_link, ris_cb, ms_cb, 1.0, NOISELESS)
    assert out.slots_used == 2048
    # brute force over explicit cascaded matrices
    p = ref_link.params
    h_br, h_rm = hop_channels(ref_geom, p)
    f = _bs_beam(ref_geom, p)
    power = np.empty((64, 64))
    for k, phi in enumerate(ris_cb.level(6).T):
        g = cascade(h_rm, phi, h_br) @ f  # (N, N_M)
        power[:, k] = np.sum(np.abs(g @ ms_cb.level(6).conj()) ** 2, axis=0)
    m, k = np.unravel_index(np.argmax(power), power.shape)
    assert (out.final_ms_index, out.final_ris_index) == (m + 1, k + 1)


def test_exhaustive_huge_noise_still_valid(ref_link, ris_cb, ms_cb):
    out = run_exhaustive(ref_link, ris_cb, ms_cb, 1.0, NoiseModel(1e6, 8))
    assert 1 <= out.final_ms_index <= 64 and 1 <= out.final_ris_index <= 64


def test_random_phase_slots(ref_link, ms_cb):
    assert run_random_phase(ref_link, ms_cb, 1.0, NoiseModel(1e-12, 2)).slots_used == 32


def test_random_phase_profile_held_fixed(ref_geom, ref_link, ms_cb):
    out = run_random_phase(ref_link, ms_cb, 1.0, NOISELESS, np.random.default_rng(6))
    phi = out.final_ris_codeword
    y = out.per_stage[0].received[:, 0, :]
    for j, w in enumerate(ms_cb.level(6).T):
        np.testing.assert_allclose(y[j], _direct_response(ref_geom, w, phi), rtol=1e-10, atol=1e-30)


def test_random_profile_mean_square_gain(ref_geom):
    p = derive_channel_params(ref_geom)
    rng = np.random.default_rng(7)
    phases = np.exp(2j * np.pi * rng.random((100_000, 16))) / 4
    a = steering_vector(16, p.theta_rm) * steering_vector(16, p.phi_br).conj()
    beta = phases @ a.conj()
    assert np.mean(np.abs(beta) ** 2) == pytest.approx(1.0, rel=0.02)


def test_random_phase_profile_modulus():
    phi = random_phase_profile(16, np.random.default_rng(0))
    np.testing.assert_allclose(np.abs(phi), 0.25, atol=1e-15)


def test_mismatched_codebooks_rejected(ref_geom, ref_link, ms_cb):
    from risloc.codebook import build_ris_codebook
    with pytest.raises(InvalidArgument):
        run_adaptive(ref_link, build_ris_codebook(ref_geom, levels=5), ms_cb, 1.0, NOISELESS)


def test_pairs_in_one_slot_share_antenna_noise(ref_link):
    from risloc.training import measure_grid
    rng = np.random.default_rng(9)
    w = np.exp(2j * np.pi * rng.random(16)) / 4
    phi = random_phase_profile(16, rng)
    # two identical combiners land in the same slot, so they must see the same sample
    y, slots = measure_grid(ref_link, np.stack([w, w], axis=1), phi[:, None], 0.0, 1.0, rng, 2)
    assert slots == 1
    np.testing.assert_array_equal(y[0, 0], y[1, 0])
    y, slots = measure_grid(ref_link, np.stack([w, w], axis=1), phi[:, None], 0.0, 1.0, rng, 1)
    assert slots == 2
    assert not np.allclose(y[0, 0], y[1, 0])

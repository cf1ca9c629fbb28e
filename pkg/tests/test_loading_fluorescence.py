import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from nanotrap.errors import DegenerateObservation
from nanotrap.loading_fluorescence import (FluorescenceProfile, LineDensity, LoadingModel,
                                           blockade_regime_check, clipped_shape, compare_models,
                                           equivalent_length, estimate_atom_number,
                                           fluorescence_profile, line_density, plateau_half_width,
                                           read_profile_csv, simulate_site_occupancy,
                                           synthetic_observation)

MODEL = LoadingModel()


def test_pair_loss_rate_constants():
    assert MODEL.beta_over_v == pytest.approx(1e-10 / 2.7e-16, rel=1e-12)
    assert MODEL.beta_over_v == pytest.approx(3.7e5, rel=0.01)
    rep = blockade_regime_check(MODEL)
    assert rep.upper == pytest.approx(MODEL.beta_over_v / 4)
    assert rep.lower == 0.5 and rep.in_blockade
    assert "in_blockade_at_peak = true" in rep.report()


def test_regime_outside_window():
    low = LoadingModel(r_max=0.2)
    rep = blockade_regime_check(low)
    assert not rep.in_blockade and rep.z_range is None
    with pytest.raises(ValueError):
        LoadingModel(r_max=-1)
    with pytest.raises(ValueError):
        LoadingModel(sigma_mot=0)


def test_zero_rate_leaves_sites_empty():
    res = simulate_site_occupancy(0.0, 1.0, 3.7e5, 0.05, n_sites=200, seed=1)
    assert np.all(res.counts == 0)


def test_blockade_occupancy_statistics():
    res = simulate_site_occupancy(MODEL.r_max, MODEL.gamma, MODEL.beta_over_v, MODEL.duration,
                                  n_sites=10_000, seed=3)
    assert res.mean == pytest.approx(0.5, abs=0.05)
    assert res.p_multiple < 0.02
    assert res.histogram.sum() == 10_000


def test_pure_loading_is_poissonian():
    res = simulate_site_occupancy(100.0, 0.0, 0.0, 0.05, n_sites=20_000, seed=5)
    # Poisson with mean R t = 5: standard error of the mean is sqrt(5 / N)
    assert abs(res.mean - 5.0) < 4 * np.sqrt(5 / 20_000)
    assert res.counts.var() == pytest.approx(5.0, rel=0.05)


def test_pair_loss_only_preserves_parity():
    even = simulate_site_occupancy(0.0, 0.0, 1e4, 0.05, n_sites=500, seed=2, n0=6)
    odd = simulate_site_occupancy(0.0, 0.0, 1e4, 0.05, n_sites=500, seed=2, n0=5)
    assert np.all(even.counts == 0)
    assert np.all(odd.counts == 1)


def test_steady_state_forgets_initial_state():
    args = (MODEL.r_max, MODEL.gamma, MODEL.beta_over_v, 0.05)
    a = simulate_site_occupancy(*args, n_sites=5000, seed=7, n0=0)
    b = simulate_site_occupancy(*args, n_sites=5000, seed=8, n0=1)
    assert abs(a.mean - b.mean) < 0.05


def test_occupancy_is_reproducible():
    args = (MODEL.r_max, MODEL.gamma, MODEL.beta_over_v, 0.05)
    a = simulate_site_occupancy(*args, n_sites=300, seed=11)
    b = simulate_site_occupancy(*args, n_sites=300, seed=11)
    assert np.array_equal(a.counts, b.counts)


def test_plateau_width_and_clip_identity():
    assert plateau_half_width(1.0, 0.23) == pytest.approx(np.sqrt(2 * np.log(1 / 0.23)))
    z = MODEL.grid(801)
    assert np.array_equal(clipped_shape(MODEL, z, 1.0), MODEL.rate(z) / MODEL.r_max)
    flat = clipped_shape(MODEL, z, 0.23)
    w = plateau_half_width(MODEL.sigma_mot)
    assert np.all(flat[np.abs(z) < 0.99 * w] == 0.23)


def test_equivalent_length_matches_quadrature():
    z = np.linspace(-8 * MODEL.sigma_mot, 8 * MODEL.sigma_mot, 200_001)
    num = integrate.trapezoid(clipped_shape(MODEL, z, 0.23), z) / 0.23
    assert equivalent_length(MODEL, 0.23) == pytest.approx(num, rel=1e-6)


def test_atom_number_estimate():
    assert estimate_atom_number(MODEL) == pytest.approx(2000, rel=0.15)


def test_od_one_transmission():
    dens = line_density(MODEL, od_target=1.0, cross_section=2e-13, area=5e-13)
    prof = fluorescence_profile(dens, 2e-13, 5e-13)
    assert prof.transmission == pytest.approx(np.exp(-1), abs=1e-6)


def test_scattered_power_balances_absorption():
    dens = line_density(MODEL, od_target=1.7)
    prof = fluorescence_profile(dens)
    scattered = integrate.trapezoid(prof.intensity, prof.z)
    assert scattered == pytest.approx(1 - prof.transmission, rel=1e-4)


def test_thin_medium_tracks_density():
    dens = line_density(MODEL, od_target=1e-6)
    prof = fluorescence_profile(dens)
    assert np.allclose(prof.intensity / prof.intensity.max(), dens.rho / dens.rho.max(), atol=2e-6)


def test_depletion_makes_profile_asymmetric():
    prof = fluorescence_profile(line_density(MODEL, od_target=1.0))
    z, i = prof.z, prof.intensity
    front = i[z < 0].sum()
    back = i[z > 0].sum()
    assert front > 1.2 * back


def test_shape_depends_only_on_optical_depth():
    a = fluorescence_profile(line_density(MODEL, od_target=0.8, cross_section=1e-13, area=3e-13),
                             1e-13, 3e-13)
    b = fluorescence_profile(line_density(MODEL, od_target=0.8, cross_section=4e-13, area=2e-13),
                             4e-13, 2e-13)
    assert np.allclose(a.intensity / a.intensity.max(), b.intensity / b.intensity.max(), rtol=1e-12)


def test_clipped_observation_prefers_blockade():
    z, obs, _ = synthetic_observation(MODEL, clip=0.23, seed=4)
    cmp = compare_models(z, obs, MODEL)
    assert cmp.preferred == "blockade"
    assert cmp.chi2_ratio > 2
    assert cmp.blockade.clip == pytest.approx(0.23, abs=0.03)


def test_gaussian_observation_does_not_need_clipping():
    z, obs, _ = synthetic_observation(MODEL, clip=None, seed=4)
    cmp = compare_models(z, obs, MODEL)
    # the clipped family contains the Gaussian (clip = 1), so at best a tie
    assert cmp.chi2_ratio < 1.05


def test_flat_observation_is_rejected():
    z = MODEL.grid(64)
    with pytest.raises(DegenerateObservation):
        compare_models(z, np.full(64, 0.3), MODEL)


def test_profile_csv_round_trip(tmp_path):
    prof = fluorescence_profile(line_density(MODEL, z=MODEL.grid(100)))
    path = tmp_path / "p.csv"
    prof.to_csv(path)
    assert path.read_text().splitlines()[0] == "z_mm,I_F"
    z, i = read_profile_csv(path)
    assert np.allclose(z, prof.z, rtol=1e-8) and np.allclose(i, prof.intensity, rtol=1e-11)
    assert isinstance(prof, FluorescenceProfile)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.05, 1.0))
def test_density_scales_with_optical_depth(od, clip):
    z = MODEL.grid(300)
    d1 = line_density(MODEL, od_target=1.0, clip=clip, z=z)
    d2 = line_density(MODEL, od_target=od, clip=clip, z=z)
    assert np.allclose(d2.rho, od * d1.rho, rtol=1e-12)
    assert d2.optical_depth(1.0, 1.0) == pytest.approx(od, rel=1e-12)
    assert isinstance(d1.scaled(2.0), LineDensity)

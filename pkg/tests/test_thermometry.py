import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nanotrap.constants import H, HBAR, KB, M_CS, UK
from nanotrap.dynamics_mc import EscapePolynomial
from nanotrap.errors import DegenerateData, EnergyOutOfRange
from nanotrap.thermometry import (DensityOfStates, SurvivalDataset, compute_dos, fit_temperature,
                                  harmonic_cumulative, harmonic_dos, localization, mean_occupation,
                                  occupation_report, survival_model, synthesize_survival)
from nanotrap.trap_potential import HarmonicPotential

FREQS = (100e3, 140e3, 200e3)
HARM = HarmonicPotential(FREQS, depth=400 * UK)
POLY = EscapePolynomial(1.37, 0.43, 0.2, 1.2)


@pytest.fixture(scope="module")
def harmonic_table():
    depth = HARM.depth
    return DensityOfStates.from_function(lambda e: harmonic_dos(e, FREQS), depth)


def test_dos_matches_harmonic_oracle():
    e = HARM.depth * np.array([0.05, 0.2, 0.5, 0.9])
    dos = compute_dos(HARM, HARM.site(), e, seed=1)
    assert np.allclose(dos.g, harmonic_dos(e, FREQS), rtol=0.02)
    assert np.all(dos.g_err < 0.01 * dos.g)


def test_fiber_dos_near_bottom_is_harmonic(ref_field, ref_site):
    e = np.array([0.01, 0.02]) * ref_site.depth
    dos = compute_dos(ref_field, ref_site, e, seed=2)
    freqs = [ref_site.frequencies[k] for k in ("r", "phi", "z")]
    ratio = dos.g / harmonic_dos(e, freqs)
    assert np.all((ratio > 0.97) & (ratio < 1.1))


def test_dos_rejects_energy_above_depth():
    with pytest.raises(EnergyOutOfRange):
        compute_dos(HARM, HARM.site(), [2 * HARM.depth])


def test_cumulative_matches_closed_form():
    # depth far above k_B T so truncation is negligible
    depth = 30 * KB * 20e-6
    dos = DensityOfStates.from_function(lambda e: harmonic_dos(e, FREQS), depth, n=2000)
    x = np.array([0.5, 1.0, 3.0, 6.0])
    p = dos.cumulative(x * KB * 20e-6, 20e-6)
    assert np.allclose(p, harmonic_cumulative(x), atol=1e-4)


def test_temperature_derivative_matches_finite_difference(harmonic_table):
    e0 = np.array([0.1, 0.3, 0.6]) * HARM.depth
    t, h = 30e-6, 1e-9
    _, dp = harmonic_table.cumulative(e0, t, derivative=True)
    fd = (harmonic_table.cumulative(e0, t + h) - harmonic_table.cumulative(e0, t - h)) / (2 * h)
    assert np.allclose(dp, fd, rtol=1e-5)


def test_round_trip_on_harmonic_table(harmonic_table):
    u = np.geomspace(1e-4, 1, 25)
    for t in (15e-6, 30e-6):
        data = synthesize_survival(u, t, 0.9, POLY, harmonic_table, noise=0.0)
        fit = fit_temperature(data, POLY, harmonic_table)
        assert fit.temperature == pytest.approx(t, rel=1e-6)
        assert fit.p_max == pytest.approx(0.9, abs=1e-6)


def test_noisy_round_trip_with_fixed_pmax(harmonic_table):
    u = np.geomspace(1e-4, 1, 30)
    data = synthesize_survival(u, 25e-6, 0.92, POLY, harmonic_table, noise=0.02, seed=4)
    fit = fit_temperature(data, POLY, harmonic_table, p_max=0.92)
    assert abs(fit.temperature - 25e-6) < 4 * fit.temperature_err
    assert fit.p_max == 0.92


def test_full_depth_survival_equals_pmax(harmonic_table):
    # the polynomial maps U_low = U0 above the depth: every atom survives
    poly = EscapePolynomial(1.0, 0.5, 0.0, 1.0)
    assert survival_model(1.0, 30e-6, 0.92, poly, harmonic_table) == pytest.approx(0.92)


def test_degenerate_data():
    with pytest.raises(DegenerateData):
        fit_temperature(SurvivalDataset([0.1, 0.2, 0.3], [0.5, 0.6, 0.7], [0.01] * 3), POLY,
                        DensityOfStates.from_function(lambda e: e**2, 1e-27))
    flat = SurvivalDataset(np.linspace(0.1, 1, 8), np.full(8, 0.5), np.full(8, 0.01))
    with pytest.raises(DegenerateData):
        fit_temperature(flat, POLY, DensityOfStates.from_function(lambda e: e**2, 1e-27))


def test_survival_csv_round_trip(tmp_path, harmonic_table):
    data = synthesize_survival(np.geomspace(1e-3, 1, 10), 30e-6, 0.9, POLY, harmonic_table, 0.02, 1)
    path = tmp_path / "s.csv"
    data.to_csv(path)
    assert path.read_text().splitlines()[0] == "U_low_over_U0,fraction,stderr"
    back = SurvivalDataset.from_csv(path)
    assert np.allclose(back.fraction, data.fraction, rtol=1e-5)


def test_occupation_closed_forms():
    nu, t = 200e3, 30e-6
    n = mean_occupation(nu, t)
    assert n == pytest.approx(1 / (np.exp(H * nu / (KB * t)) - 1))
    assert mean_occupation(nu, 0.0) == 0.0
    rep = occupation_report(0.0, {"r": 2e5, "phi": 1.4e5, "z": 3.15e5})
    s0 = np.sqrt(HBAR / (2 * M_CS * 2 * np.pi * 3.15e5))
    assert rep.widths["z"] == pytest.approx(2 * s0)
    # high-temperature limit: k_B T / (h nu)
    assert mean_occupation(1e3, 1e-3) == pytest.approx(KB * 1e-3 / (H * 1e3), rel=1e-3)


def test_localization_uses_given_occupations():
    f = {"r": 2e5, "phi": 1.4e5, "z": 3.15e5}
    a = occupation_report(30e-6, f)
    b = localization(a.occupation, f)
    assert b.volume == pytest.approx(a.volume, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(5e-6, 80e-6), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_cumulative_monotone_in_energy_and_temperature(t, f1, f2):
    table = DensityOfStates.from_function(lambda e: harmonic_dos(e, FREQS), HARM.depth, n=200)
    lo, hi = sorted((f1, f2))
    e_lo, e_hi = lo * HARM.depth, hi * HARM.depth
    assert table.cumulative(e_lo, t) <= table.cumulative(e_hi, t) + 1e-15
    assert table.cumulative(e_hi, t) >= table.cumulative(e_hi, 1.2 * t) - 1e-15

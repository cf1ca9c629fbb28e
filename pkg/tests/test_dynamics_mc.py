import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nanotrap.constants import UK
from nanotrap.dynamics_mc import (EscapeMapPoint, EscapePolynomial, TrajectoryState, build_ramp,
                                  escape_map, fit_escape_polynomial, fit_escape_threshold,
                                  integrate_trajectory, ramp_time_grid, read_escape_map_csv,
                                  sample_initial_conditions, write_escape_map_csv)
from nanotrap.errors import EnergyOutOfRange, FitNonconvergence, NonFiniteState, StepTooLarge
from nanotrap.trap_potential import HarmonicPotential

HARM = HarmonicPotential((100e3, 140e3, 200e3), depth=400 * UK)


# ------------------------------------------------------------------ ramp
def test_ramp_shape_and_adiabaticity():
    ramp = build_ramp(0.04, epsilon=0.1, nu0=1e5)
    t = np.linspace(0, ramp.t_down, 200)
    nu = ramp.frequency(t)
    dnu = np.gradient(nu, t)
    assert np.allclose((np.abs(dnu) / nu**2)[1:-1], 0.1, rtol=1e-3)
    assert ramp.depth(ramp.t_down + 0.5 * ramp.t_hold) == pytest.approx(0.04)
    assert ramp.depth(ramp.t_end) == pytest.approx(1.0)
    assert ramp.depth(0.3 * ramp.t_end) == pytest.approx(ramp.depth(0.7 * ramp.t_end))


def test_ramp_edge_cases():
    assert build_ramp(1.0).t_end == 0.0
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            build_ramp(bad)


def test_time_grid_follows_frequency():
    ramp = build_ramp(0.01, 0.1, 1e5)
    grid = ramp_time_grid(ramp, lambda s: 1e5 * np.sqrt(s), ramp.t_end, 100)
    dt = np.diff(grid)
    nu = 1e5 * np.sqrt(ramp.depth(grid[:-1]))
    assert np.all(dt * nu <= 0.0102)
    assert dt.max() > 5 * dt.min()


# -------------------------------------------------------------- integrator
def test_harmonic_verlet_matches_analytic_orbit():
    h = HarmonicPotential((1e5,))
    w = 2 * np.pi * 1e5
    st0 = TrajectoryState([[1e-7]], [[0.0]])
    out = integrate_trajectory(st0, h, None, dt=1 / (1e5 * 400), t_end=20 / 1e5)
    assert out.position[0, 0] == pytest.approx(1e-7 * np.cos(w * out.time), abs=2e-10)


def test_step_too_large_rejected():
    st0 = TrajectoryState([[1e-7, 0, 0]], [[0.0, 0, 0]])
    with pytest.raises(StepTooLarge):
        integrate_trajectory(st0, HARM, None, dt=1 / (200e3 * 20), t_end=1e-4)


def test_non_finite_state_rejected():
    with pytest.raises(NonFiniteState):
        TrajectoryState([[np.nan, 0, 0]], [[0, 0, 0]])


def test_symplectic_energy_drift_fiber(ref_field, ref_site):
    st0 = sample_initial_conditions(ref_field, ref_site, 0.3 * ref_site.depth, 4, seed=2)
    t_end = 1000 / ref_site.min_frequency
    out, hist = integrate_trajectory(st0, ref_field, None, t_end=t_end, record_energy=True)
    assert out.alive.all()
    e = np.array(hist)
    w = len(e) // 100
    drift = np.max(np.abs(e[:w].mean(axis=0) - e[-w:].mean(axis=0))) / ref_site.depth
    assert drift < 1e-4


def test_adiabatic_invariant_harmonic():
    h = HarmonicPotential((1e5,))
    rng = np.random.default_rng(0)
    phase = rng.uniform(0, 2 * np.pi, 32)
    w = 2 * np.pi * 1e5
    amp = 1e-7
    st0 = TrajectoryState(amp * np.cos(phase)[:, None], (-amp * w * np.sin(phase))[:, None])
    e0 = st0.energy(h)
    ramp = build_ramp(0.25, epsilon=0.01, nu0=1e5)
    out = integrate_trajectory(st0, h, ramp, t_end=ramp.t_down + ramp.t_hold)
    e1 = out.energy(h, 0.25)
    # action E / nu is conserved: E1 / E0 = nu_low / nu0 = 0.5
    assert np.max(np.abs(e1 / e0 / 0.5 - 1)) < 0.01


def test_compiled_and_generic_paths_agree(ref_field, ref_site, calibration):
    st0 = sample_initial_conditions(ref_field, ref_site, 0.5 * ref_site.depth, 12, seed=4)
    ramp = build_ramp(0.2, 0.2, ref_site.min_frequency)
    fast = integrate_trajectory(st0, ref_field, ramp, calibration=calibration)
    slow, _ = integrate_trajectory(st0, ref_field, ramp, calibration=calibration, record_energy=True)
    assert np.array_equal(fast.alive, slow.alive)
    assert np.allclose(fast.position[fast.alive], slow.position[slow.alive], rtol=1e-7, atol=1e-15)


# ---------------------------------------------------------------- sampler
def test_sampler_energy_exact_and_deterministic(ref_field, ref_site):
    e = 0.4 * ref_site.depth
    a = sample_initial_conditions(ref_field, ref_site, e, 20, seed=9)
    b = sample_initial_conditions(ref_field, ref_site, e, 20, seed=9)
    assert np.array_equal(a.position, b.position)
    assert np.allclose(a.energy(ref_field) - ref_site.u_min, e, rtol=1e-9)


def test_sampler_virial_harmonic():
    site = HARM.site()
    e = 0.3 * HARM.depth
    st0 = sample_initial_conditions(HARM, site, e, 3000, seed=1)
    u = HARM.potential_xyz(st0.position) / e
    # microcanonical 3-D oscillator: <U> = E/2, std of U/E = 1/sqrt(28)
    assert abs(u.mean() - 0.5) < 4 / np.sqrt(28 * 3000)
    # each axis carries a third of the potential energy on average
    ax = 0.5 * HARM.spring * st0.position**2 / e
    assert np.allclose(ax.mean(axis=0), 1 / 6, atol=0.015)


def test_sampler_rejects_bad_energy():
    with pytest.raises(EnergyOutOfRange):
        sample_initial_conditions(HARM, HARM.site(), 2 * HARM.depth, 5, seed=0)


# -------------------------------------------------------------- escape map
def test_harmonic_escape_threshold_is_square_law():
    pts = escape_map(HARM, HARM.site(), [0.2, 0.5], 8, 200, 0.1, seed=0)
    for p in pts:
        assert p.fit_ok
        assert p.u_esc == pytest.approx(p.e0**2, rel=0.03)


def test_escape_width_shrinks_with_epsilon_harmonic():
    widths = []
    for eps, span in ((0.4, 0.1), (0.1, 0.03), (0.025, 0.008)):
        grid = 0.09 * np.exp(np.linspace(-span, span, 9))
        p = escape_map(HARM, HARM.site(), [0.3], grid, 300, eps, seed=1)[0]
        assert p.u_esc == pytest.approx(0.09, rel=0.01)
        widths.append(p.width)
    assert widths[0] > widths[1] > widths[2]


def test_escape_map_seed_determinism_and_csv(tmp_path):
    a = escape_map(HARM, HARM.site(), [0.3], [0.05, 0.08, 0.1, 0.2], 100, 0.2, seed=3)
    b = escape_map(HARM, HARM.site(), [0.3], [0.05, 0.08, 0.1, 0.2], 100, 0.2, seed=3)
    assert np.array_equal(a[0].survived, b[0].survived)
    path = tmp_path / "map.csv"
    write_escape_map_csv(a, path)
    assert path.read_text().splitlines()[0] == "E0_over_U0,U_low_over_U0,p,stderr"
    rows = read_escape_map_csv(path)
    assert np.allclose([r[1] for r in rows[0.3]], a[0].p)


def test_fiber_escape_below_harmonic_estimate(ref_field, ref_site, calibration):
    p = escape_map(ref_field, ref_site, [0.3], 6, 100, 0.2, seed=5, calibration=calibration,
                   n_pilot=48)[0]
    assert p.fit_ok
    assert 0 < p.u_esc < 0.3**2


def test_threshold_fit_recovers_erf(rng):
    levels = np.geomspace(0.01, 0.1, 10)
    mu, w, n = np.log(0.03), 0.3, 2000
    from scipy.special import erfc

    p = 0.5 * erfc((mu - np.log(levels)) / (np.sqrt(2) * w))
    k = rng.binomial(n, p)
    u, err, width = fit_escape_threshold(levels, k, n)
    assert abs(np.log(u) - mu) < 4 * err / u
    assert width == pytest.approx(w, rel=0.1)
    with pytest.raises(FitNonconvergence):
        fit_escape_threshold(levels, np.zeros(10, int), n)


# -------------------------------------------------------------- polynomial
def test_polynomial_exact_recovery():
    x = np.geomspace(1e-4, 0.5, 12)
    true = EscapePolynomial(1.2, 0.45, 0.3, 1.5)
    fit = fit_escape_polynomial(x, true(x))
    assert np.allclose(fit(x), true(x), rtol=1e-8)


def test_polynomial_fit_within_two_sigma(rng):
    x = np.geomspace(5e-4, 0.3, 24)
    true = EscapePolynomial(1.37, 0.43, 0.2, 1.2)
    sigma = 0.01 * true(x)
    y = true(x) + sigma * rng.standard_normal(len(x))
    fit = fit_escape_polynomial(x, y, sigma)
    assert np.mean(np.abs(fit(x) - y) < 2 * sigma) >= 0.9


def test_polynomial_from_map_points():
    pts = []
    for e0 in (0.05, 0.1, 0.2, 0.35, 0.5, 0.7):
        pt = EscapeMapPoint(e0, np.array([0.1]), np.array([1]), 1000)
        pt.u_esc, pt.u_esc_err, pt.fit_ok = e0**2.2, 0.01 * e0**2.2, True
        pts.append(pt)
    fit = fit_escape_polynomial(pts)
    assert np.allclose(fit([p.u_esc for p in pts]), [p.e0 for p in pts], rtol=1e-3)


def test_polynomial_needs_six_points():
    with pytest.raises(FitNonconvergence):
        fit_escape_polynomial([0.1, 0.2, 0.3], [0.3, 0.4, 0.5])


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 3), st.floats(0.2, 1.0), st.floats(0, 2), st.floats(1.0, 3.0),
       st.floats(1e-4, 0.9))
def test_polynomial_inverse_round_trip(a, b, c, d, x):
    poly = EscapePolynomial(a, b, c, d)
    y = poly(x)
    assert poly.inverse(y, x_max=1.0) == pytest.approx(x, rel=1e-9)

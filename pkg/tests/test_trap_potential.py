import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nanotrap.constants import UK
from nanotrap.errors import LevelAboveDepth, NoMinimumFound
from nanotrap.fiber_modes import field_cartesian
from nanotrap.trap_potential import (HarmonicPotential, LightField, TrapConfiguration,
                                     build_potential, cs_polarizability, equipotential_slice,
                                     export_potential_csv, find_trap_sites, polygon_area)

AU_POL = 1.64877727436e-41  # atomic unit of polarizability, C m^2 / V


def _direct_potential(field, pts):
    """U = -alpha |E|^2 / 4 summed over colors, fields taken from the mode solver."""
    cfg = field.config
    total = np.zeros(len(pts))
    for mode, light in ((field.blue_mode, cfg.blue), (field.red_mode, cfg.red)):
        e = np.array(field_cartesian(mode, pts[:, 0], pts[:, 1], pts[:, 2], 1))
        if light.standing:
            e = e + np.array(field_cartesian(mode, pts[:, 0], pts[:, 1], pts[:, 2], -1))
        total -= cs_polarizability(light.wavelength) / 4 * np.sum(np.abs(e) ** 2, axis=0)
    return total


def _outside_points(rng, n, a=250e-9):
    pts = np.column_stack([rng.uniform(-8e-7, 8e-7, (4 * n, 2)), rng.uniform(0, 1e-6, 4 * n)])
    return pts[np.hypot(pts[:, 0], pts[:, 1]) > a * 1.02][:n]


def test_polarizability_signs_and_static_limit():
    assert cs_polarizability(1064e-9) > 0 > cs_polarizability(780e-9)
    # two-line model vs the measured static value of about 401 a.u.
    assert cs_polarizability(1e-3) / AU_POL == pytest.approx(401, rel=0.06)


def test_potential_matches_direct_field_sum(ref_field, rng):
    pts = _outside_points(rng, 40)
    direct = _direct_potential(ref_field, pts)
    assert np.allclose(ref_field.potential_xyz(pts), direct, rtol=1e-10, atol=0)


def test_gradient_matches_finite_differences(ref_field, rng):
    pts = _outside_points(rng, 20)
    _, grad = ref_field.potential_and_gradient(pts)
    h = 1e-12
    for k in range(3):
        d = np.zeros(3)
        d[k] = h
        fd = (ref_field.potential_xyz(pts + d) - ref_field.potential_xyz(pts - d)) / (2 * h)
        scale = np.max(np.abs(grad))
        assert np.max(np.abs(fd - grad[:, k])) < 1e-6 * scale


def test_inside_fiber_is_nan(ref_field):
    assert np.isnan(ref_field.potential_xyz([[100e-9, 0.0, 0.0]])[0])


def test_zero_power_gives_zero_potential_and_no_site():
    cfg = TrapConfiguration(blue=LightField(780e-9, 0.0, 0.0), red=LightField(1064e-9, 0.0, np.pi / 2, True))
    field = build_potential(cfg)
    assert np.all(field.potential_xyz([[400e-9, 0, 0], [0, 500e-9, 1e-7]]) == 0)
    with pytest.raises(NoMinimumFound):
        find_trap_sites(field)


def test_site_geometry(ref_field, ref_sites):
    assert len(ref_sites) == 2
    s0, s1 = ref_sites
    # diametrically opposed, along the red polarization plane
    assert np.mod(s1.position[1] - s0.position[1], 2 * np.pi) == pytest.approx(np.pi, abs=1e-6)
    sep = np.linalg.norm(s0.xyz[:2] - s1.xyz[:2])
    assert sep == pytest.approx(1e-6, rel=0.3)
    assert ref_field.lattice_period == pytest.approx(500e-9, rel=0.05)


def test_neighbouring_sites_one_period_apart(ref_field, ref_site):
    shifted = find_trap_sites(ref_field, z_offset=ref_site.position[2] + 1e-9)
    z = sorted(s.position[2] for s in shifted if abs(np.cos(s.position[1] - ref_site.position[1])) > 0.9
               and np.cos(s.position[1] - ref_site.position[1]) > 0)
    assert z[0] - ref_site.position[2] == pytest.approx(ref_field.lattice_period, rel=1e-6)


def test_swapping_polarizations_rotates_sites(ref_site):
    field = build_potential(TrapConfiguration().swapped_polarizations())
    site = find_trap_sites(field)[0]
    assert np.cos(site.position[1] - ref_site.position[1]) == pytest.approx(0.0, abs=1e-6)
    assert site.depth == pytest.approx(ref_site.depth, rel=1e-6)


def test_equipotential_small_level_is_hessian_ellipse(ref_field, ref_site):
    level = 2 * UK
    poly = equipotential_slice(ref_field, ref_site, level, "xy", half_width=40e-9, n=401)[0]
    k_r = ref_site.hessian[0, 0]
    k_p = ref_site.hessian[1, 1]
    ellipse = np.pi * 2 * level / np.sqrt(k_r * k_p)
    assert polygon_area(poly) == pytest.approx(ellipse, rel=0.03)


def test_equipotential_degenerate_and_too_high(ref_field, ref_site):
    pt = equipotential_slice(ref_field, ref_site, 0.0)
    assert len(pt) == 1 and pt[0].shape == (1, 2)
    with pytest.raises(LevelAboveDepth):
        equipotential_slice(ref_field, ref_site, 1.01 * ref_site.depth)


def test_equipotentials_nest(ref_field, ref_site):
    inner = equipotential_slice(ref_field, ref_site, 40 * UK, "xz")[0]
    outer = equipotential_slice(ref_field, ref_site, 125 * UK, "xz")[0]
    assert polygon_area(outer) > polygon_area(inner) > 0


def test_calibration_is_monotone(calibration):
    f = np.geomspace(1e-3, 1, 30)
    s = calibration.red_scale(f)
    assert np.all(np.diff(s) > 0)
    assert calibration.red_scale(1.0) == 1.0
    nu = calibration.max_frequency(f)
    assert np.all(np.diff(nu) > 0)


def test_potential_csv_export(ref_field, tmp_path):
    path = tmp_path / "u.csv"
    export_potential_csv(ref_field, path, [400e-9, 500e-9], [0.0], [0.0, 1e-7])
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,z,U_uK" and len(lines) == 5


def test_harmonic_oracle_site():
    h = HarmonicPotential((1e3, 2e3, 3e3), depth=1e-27)
    s = h.site()
    assert s.frequencies == {"r": 1e3, "phi": 2e3, "z": 3e3}
    u, g = h.potential_and_gradient([[1e-6, 0, 0]])
    assert u[0] == pytest.approx(0.5 * h.spring[0] * 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 20.0))
def test_power_scaling_is_pointwise_linear(s):
    base = build_potential()
    scaled = base.scaled(s)
    pts = _outside_points(np.random.default_rng(3), 10)
    assert np.allclose(scaled.potential_xyz(pts), s * base.potential_xyz(pts), rtol=1e-12, atol=0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 1.0))
def test_red_scale_argument_equals_red_power_change(f):
    base = build_potential()
    cfg = base.config
    from dataclasses import replace

    reduced = build_potential(replace(cfg, red=replace(cfg.red, power=cfg.red.power * f)))
    pts = _outside_points(np.random.default_rng(4), 8)
    assert np.allclose(base.potential_xyz(pts, f), reduced.potential_xyz(pts), rtol=1e-12, atol=1e-40)

"""Command-line interface.

Each verb loads a scenario, runs one experiment and writes data files plus
a ``key = value`` report into ``<out>/<verb>/``. A ``manifest.json`` with
the scenario hash and per-file SHA-256 checksums is written last. Only the
manifest carries wall-clock timings; every other output is a pure
function of scenario and seed.

Errors end the process with exit status 2 and a single line
``error <CODE>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .constants import CONST, UK
from .errors import NanotrapError
from .scenario import Scenario, load_scenario

# reference values used only for the deviation columns of the trap report
TABLE_REFERENCE = {"surface_distance_nm": 230.0, "depth_uK": 400.0,
                   "nu_r_kHz": 200.0, "nu_phi_kHz": 140.0, "nu_z_kHz": 315.0}


class Run:
    """Output bookkeeping for one command."""

    def __init__(self, verb: str, scenario: Scenario, out: Path):
        self.verb = verb
        self.scenario = scenario
        self.dir = Path(out) / verb
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.timings: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.dir / name

    def write_text(self, name: str, text: str) -> None:
        self.path(name).write_text(text, encoding="utf-8")

    def write_csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    def tick(self, label: str) -> None:
        now = time.perf_counter()
        self.timings[label] = round(now - self._t0, 3)
        self._t0 = now

    def finish(self) -> Path:
        sums = {}
        for name in sorted(set(self.files)):
            sums[name] = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()
        manifest = {
            "command": self.verb,
            "artifact_version": __version__,
            "scenario_sha256": self.scenario.digest(),
            "seed": self.scenario.seed,
            "outputs": sums,
            "timings_s": self.timings,
        }
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _fmt(x, digits=10):
    return f"{x:.{digits}e}"


def _kv(pairs) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs)


# ------------------------------------------------------------------ modes
def cmd_modes(sc: Scenario, run: Run) -> None:
    from .fiber_modes import FiberSpec, effective_area, field_cartesian, solve_he11

    a = sc.fiber.radius_nm * 1e-9
    lines = [("radius_nm", f"{sc.fiber.radius_nm:.3f}")]
    rows = []
    modes = {}
    for lam_nm in sc.fiber.wavelengths_nm:
        spec = FiberSpec.silica(a, lam_nm * 1e-9, sc.fiber.n_clad)
        mode = solve_he11(spec, 0.0, 1.0)
        modes[lam_nm] = mode
        n_eff = mode.beta / spec.k0
        rows.append([f"{lam_nm:.3f}", f"{spec.n_core:.8f}", f"{n_eff:.8f}",
                     _fmt(effective_area(mode)), f"{lam_nm / (2 * n_eff):.4f}"])
    run.write_csv("modes_table.csv", ["wavelength_nm", "n_core", "n_eff", "A_eff_m2",
                                      "half_period_nm"], rows)
    red = sc.trap.red_wavelength_nm
    mode = modes.get(red) or solve_he11(FiberSpec.silica(a, red * 1e-9, sc.fiber.n_clad), 0.0, 1.0)
    spacing = red / (2 * mode.beta / mode.spec.k0)
    for r in rows:
        lines.append((f"n_eff_{float(r[0]):.0f}nm", r[2]))
    lines.append(("lattice_spacing_nm", f"{spacing:.4f}"))
    run.write_text("modes_report.txt", _kv(lines))

    # transverse field map of the red mode (quasi-linear along x, unit power)
    half = sc.fiber.map_half_width_nm * 1e-9
    xs = np.linspace(-half, half, sc.fiber.map_points)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    ex, ey, ez = field_cartesian(mode, X.ravel(), Y.ravel())
    e2 = np.abs(ex) ** 2 + np.abs(ey) ** 2 + np.abs(ez) ** 2
    run.write_csv("field_map.csv", ["x_nm", "y_nm", "Re_Ez", "Im_Ez", "abs_E2"],
                  ([f"{x * 1e9:.4f}", f"{y * 1e9:.4f}", _fmt(z.real), _fmt(z.imag), _fmt(p)]
                   for x, y, z, p in zip(X.ravel(), Y.ravel(), ez, e2)))
    run.tick("modes")


# ------------------------------------------------------------------- trap
def _site(sc: Scenario):
    from .trap_potential import build_potential, find_trap_sites

    field = build_potential(sc.trap_configuration())
    sites = find_trap_sites(field)
    return field, sites


def cmd_trap(sc: Scenario, run: Run) -> None:
    from .trap_potential import equipotential_slice

    field, sites = _site(sc)
    site = sites[0]
    run.tick("sites")
    values = {
        "surface_distance_nm": site.surface_distance * 1e9,
        "depth_uK": site.depth / UK,
        "nu_r_kHz": site.frequencies["r"] / 1e3,
        "nu_phi_kHz": site.frequencies["phi"] / 1e3,
        "nu_z_kHz": site.frequencies["z"] / 1e3,
    }
    lines = [("n_sites_per_period", len(sites)),
             ("lattice_period_nm", f"{field.lattice_period * 1e9:.4f}")]
    for k, v in values.items():
        ref = TABLE_REFERENCE[k]
        lines += [(k, f"{v:.4f}"), (f"{k}_reference", f"{ref:g}"),
                  (f"{k}_deviation", f"{(v - ref) / ref:+.4f}")]
    f = site.frequencies
    lines.append(("ordering_z_gt_r_gt_phi", str(f["z"] > f["r"] > f["phi"]).lower()))
    run.write_text("trap_report.txt", _kv(lines))
    run.write_csv("sites.csv", ["r_nm", "phi_deg", "z_nm", "depth_uK", "nu_r_Hz", "nu_phi_Hz", "nu_z_Hz"],
                  ([f"{s.position[0] * 1e9:.4f}", f"{np.rad2deg(s.position[1]):.4f}",
                    f"{s.position[2] * 1e9:.4f}", f"{s.depth / UK:.4f}",
                    f"{s.frequencies['r']:.2f}", f"{s.frequencies['phi']:.2f}",
                    f"{s.frequencies['z']:.2f}"] for s in sites))
    rows = []
    for level in sc.trap.contour_levels_uk:
        for plane in ("xy", "xz"):
            lines_ = equipotential_slice(field, site, level * UK, plane)
            for idx, poly in enumerate(lines_):
                rows += [[f"{level:g}", plane, idx, f"{u * 1e9:.4f}", f"{v * 1e9:.4f}"] for u, v in poly]
    run.write_csv("equipotentials.csv", ["level_uK", "plane", "contour", "u_nm", "v_nm"], rows)
    run.tick("contours")


# ------------------------------------------------------------ thermometry
def cmd_thermometry(sc: Scenario, run: Run) -> None:
    from .dynamics_mc import escape_map, fit_escape_polynomial, write_escape_map_csv
    from .thermometry import (compute_dos, fit_temperature, occupation_report,
                              synthesize_survival)
    from .trap_potential import DepthCalibration

    th = sc.thermometry
    field, sites = _site(sc)
    site = sites[0]
    calib = DepthCalibration(field, site)
    run.tick("setup")
    seeds = np.random.SeedSequence(sc.seed).spawn(3)
    points = escape_map(field, site, th.e0_grid, th.levels, th.n_traj, th.epsilon,
                        seed=seeds[0], calibration=calib)
    write_escape_map_csv(points, run.path("escape_map.csv"))
    run.tick("escape_map")
    poly = fit_escape_polynomial(points)
    run.write_csv("escape_thresholds.csv", ["E0_over_U0", "U_esc_over_U0", "stderr", "width", "E0_poly"],
                  ([f"{p.e0:.6g}", _fmt(p.u_esc), _fmt(p.u_esc_err), f"{p.width:.6f}",
                    _fmt(poly(p.u_esc))] for p in points))
    energies = site.depth * np.linspace(0.02, 1.0, th.dos_points)
    dos = compute_dos(field, site, energies, seed=seeds[1])
    run.write_csv("dos.csv", ["E_over_U0", "g_per_J", "g_err"],
                  ([f"{e / site.depth:.6f}", _fmt(g), _fmt(ge)]
                   for e, g, ge in zip(dos.energies, dos.g, dos.g_err)))
    run.tick("dos")
    u_low = np.geomspace(th.u_low_min, 1.0, th.n_points)
    T = th.temperature_uk * 1e-6
    data = synthesize_survival(u_low, T, th.p_max, poly, dos, th.noise, seeds[2])
    data.to_csv(run.path("survival.csv"))
    fit = fit_temperature(data, poly, dos)
    occ = occupation_report(fit.temperature, site)
    a, b, c, d = poly.coefficients
    report = [
        ("U0_uK", f"{site.depth / UK:.4f}"),
        ("poly_a", _fmt(a, 6)), ("poly_b", _fmt(b, 6)), ("poly_c", _fmt(c, 6)), ("poly_d", _fmt(d, 6)),
        ("poly_residual_norm", _fmt(poly.residual_norm, 4)),
        ("T_true_uK", f"{th.temperature_uk:.4f}"),
    ]
    text = _kv(report) + fit.report() + _kv([("kT_over_U0", f"{fit.ratio_to_depth(site.depth):.4f}")])
    text += occ.report()
    run.write_text("thermometry_report.txt", text)
    run.tick("fit")


# ----------------------------------------------------------- polarization
def cmd_polarization(sc: Scenario, run: Run) -> None:
    from .fiber_modes import FiberSpec, solve_he11
    from .polarization import (CameraModel, JonesStack, ScatterModel, ScattererEnsemble,
                               angular_pattern, compensator_objective, linear_jones,
                               optimize_compensator, random_unitary, scan_polarization)

    po = sc.polarization
    a = sc.fiber.radius_nm * 1e-9
    lam = po.wavelength_nm * 1e-9
    mode = solve_he11(FiberSpec.silica(a, lam, sc.fiber.n_clad), 0.0, 1.0)
    ss = np.random.SeedSequence(sc.seed).spawn(3)
    ens = ScattererEnsemble.random(po.n_scatterers, a, po.segment_um * 1e-6, po.surface_fraction,
                                   seed=ss[0])
    model = ScatterModel(mode, ens)
    ap = np.deg2rad(po.aperture_deg)
    phi = np.linspace(0.0, 2 * np.pi, po.n_phi)
    run.tick("setup")

    lines = [("n_scatterers", len(ens))]
    for filt in ("transverse", "z", "none"):
        cams = (CameraModel("x", ap, filt), CameraModel("y", ap, filt))
        for label, bg in (("ideal", 0.0), ("background", po.background)):
            scan = scan_polarization(model, phi, cams, background=bg)
            scan.to_csv(run.path(f"scan_{filt}_{label}.csv"))
            lines += [(f"{filt}_{label}_contrast_cam1", f"{scan.fit1.contrast:.5f}"),
                      (f"{filt}_{label}_contrast_cam2", f"{scan.fit2.contrast:.5f}")]
            if filt == "transverse":
                lines.append((f"{filt}_{label}_phase_offset_deg",
                              f"{np.rad2deg(scan.phase_offset):.3f}"))
                if label == "background":
                    run.write_text("fit_transverse.txt",
                                   scan.fit1.report("cam1") + scan.fit2.report("cam2"))
    lines.append(("background_fraction", f"{po.background:.4f}"))
    run.tick("scans")

    angles = np.linspace(0, 2 * np.pi, 360, endpoint=False)
    pat = angular_pattern(model, linear_jones(0.0), angles)
    run.write_csv("pattern.csv", ["phi_obs_deg", "intensity"],
                  ([f"{np.rad2deg(t):.2f}", _fmt(p)] for t, p in zip(angles, pat / pat.max())))

    rng = np.random.default_rng(ss[1])
    fiber = random_unitary(rng) if po.birefringence == "random" else np.eye(2, dtype=complex)
    stack = JonesStack(fiber, reference_wavelength=lam)
    cams = (CameraModel("x", ap), CameraModel("y", ap))
    before = compensator_objective(model, stack, cams)(stack.settings)
    res = optimize_compensator(model, stack, po.restarts, seed=ss[2], cameras=cams)
    lines += [("uncompensated_contrast", f"{before:.6f}")]
    text = _kv(lines) + res.report()
    stack.settings = res.settings
    for wl in po.check_wavelengths_nm:
        m_wl = ScatterModel(solve_he11(FiberSpec.silica(a, wl * 1e-9, sc.fiber.n_clad), 0.0, 1.0), ens)
        c = compensator_objective(m_wl, stack, cams, wavelength=wl * 1e-9)(res.settings)
        text += _kv([(f"contrast_at_{wl:.0f}nm", f"{c:.6f}")])
    run.write_text("polarization_report.txt", text)
    run.tick("compensator")


# ----------------------------------------------------- loading / probing
def _probe_parameters(sc: Scenario):
    from .fiber_modes import FiberSpec, effective_area, solve_he11

    lo = sc.loading
    lam = CONST.lambda_d2
    sigma = lo.cross_section_m2 or 3 * lam**2 / (2 * np.pi)
    a = sc.fiber.radius_nm * 1e-9
    mode = solve_he11(FiberSpec.silica(a, lam, sc.fiber.n_clad), 0.0, 1.0)
    area = effective_area(mode, a + lo.probe_distance_nm * 1e-9)
    return sigma, area


def cmd_fluorescence(sc: Scenario, run: Run) -> None:
    from .loading_fluorescence import (compare_models, estimate_atom_number, fluorescence_profile,
                                       line_density, plateau_half_width, synthetic_observation)

    lo = sc.loading
    model = sc.loading_model()
    sigma, area = _probe_parameters(sc)
    z = model.grid(lo.grid_points)
    lines = [("cross_section_m2", _fmt(sigma, 6)), ("A_eff_m2", _fmt(area, 6)),
             ("od_target", f"{lo.od:.4f}")]
    for label, blockade in (("gaussian", False), ("blockade", True)):
        dens = line_density(model, blockade, lo.od, sigma, area, lo.clip, z=z)
        prof = fluorescence_profile(dens, sigma, area)
        prof.to_csv(run.path(f"profile_{label}.csv"))
        run.write_csv(f"density_{label}.csv", ["z_mm", "rho_per_m"],
                      ([f"{zz * 1e3:.9g}", _fmt(r)] for zz, r in zip(z, dens.rho)))
        lines += [(f"{label}_transmission", f"{prof.transmission:.8f}"),
                  (f"{label}_atoms_for_od", f"{dens.total:.3f}")]
    zo, yo, _ = synthetic_observation(model, lo.clip, lo.od, lo.noise, lo.offset, seed=sc.seed)
    run.write_csv("observation.csv", ["z_mm", "I_F"],
                  ([f"{zz * 1e3:.9g}", _fmt(y)] for zz, y in zip(zo, yo)))
    cmp_ = compare_models(zo, yo, model, lo.od)
    lines += [("plateau_half_width_mm", f"{plateau_half_width(model.sigma_mot, lo.clip) * 1e3:.5f}"),
              ("atom_number_estimate", f"{estimate_atom_number(model, lo.filling, lo.clip):.1f}")]
    run.write_text("fluorescence_report.txt", _kv(lines) + cmp_.report())
    run.tick("fluorescence")


def cmd_occupancy(sc: Scenario, run: Run) -> None:
    from .loading_fluorescence import blockade_regime_check, simulate_site_occupancy

    lo = sc.loading
    model = sc.loading_model()
    check = blockade_regime_check(model)
    res = simulate_site_occupancy(model.r_max, model.gamma, model.beta_over_v, model.duration,
                                  lo.n_sites, seed=sc.seed)
    hist = res.histogram
    run.write_csv("occupancy_histogram.csv", ["n", "count", "fraction"],
                  ([k, int(c), f"{c / lo.n_sites:.6f}"] for k, c in enumerate(hist)))
    extra = _kv([("beta_over_V_per_s", f"{model.beta_over_v:.6g}")])
    run.write_text("occupancy_report.txt", check.report() + extra + res.report())
    run.tick("occupancy")


COMMANDS = {
    "modes": cmd_modes,
    "trap": cmd_trap,
    "polarization": cmd_polarization,
    "thermometry": cmd_thermometry,
    "fluorescence": cmd_fluorescence,
    "occupancy": cmd_occupancy,
}

# which scenario field --samples overrides for each verb
SAMPLES_KEY = {
    "modes": ("fiber", "map_points"),
    "trap": None,
    "polarization": ("polarization", "n_scatterers"),
    "thermometry": ("thermometry", "n_traj"),
    "fluorescence": ("loading", "grid_points"),
    "occupancy": ("loading", "n_sites"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nanotrap", description="Nanofiber two-color trap toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in COMMANDS:
        s = sub.add_parser(verb)
        s.add_argument("--scenario", default=None,
                       help="scenario file or bundled name (default: nanofiber_default)")
        s.add_argument("--seed", type=int, default=None, help="override the scenario seed (u64)")
        s.add_argument("--out", default=None, help="output directory")
        s.add_argument("--samples", type=int, default=None,
                       help="override the main sample count of this command")
    return p


def run_command(verb: str, scenario: Scenario, out) -> Path:
    run = Run(verb, scenario, Path(out))
    COMMANDS[verb](scenario, run)
    return run.finish()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = load_scenario(args.scenario)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ValueError("seed must be an unsigned 64-bit integer")
            sc.run.seed = args.seed
        if args.samples is not None:
            key = SAMPLES_KEY[args.verb]
            if key is not None:
                setattr(getattr(sc, key[0]), key[1], args.samples)
        sc.validate()
        manifest = run_command(args.verb, sc, args.out or sc.run.output)
    except NanotrapError as exc:
        print(f"error {exc.code}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error INVALID_INPUT: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    print(manifest)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

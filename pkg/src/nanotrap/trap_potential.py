"""Two-color evanescent-field dipole potential and trapping-site analysis."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import optimize
from scipy.interpolate import PchipInterpolator

from . import _kernels
from .constants import C_LIGHT, CONST, EPS0, M_CS, UK
from .errors import LevelAboveDepth, NoMinimumFound
from .fiber_modes import FiberSpec, GuidedMode, solve_he11


def cs_polarizability(wavelength):
    """Scalar ground-state polarizability of Cs (C m^2 / V).

    Two-line (D1 + D2) oscillator model without the rotating-wave
    approximation; the lines carry 1/3 and 2/3 of the oscillator strength.
    """
    omega = 2 * np.pi * C_LIGHT / np.asarray(wavelength, dtype=float)
    alpha = 0.0
    for lam, gamma, weight in (
        (CONST.lambda_d1, CONST.gamma_d1, 1.0 / 3.0),
        (CONST.lambda_d2, CONST.gamma_d2, 2.0 / 3.0),
    ):
        w0 = 2 * np.pi * C_LIGHT / lam
        alpha = alpha + weight * 6 * np.pi * EPS0 * C_LIGHT**3 * gamma / w0**2 / (w0**2 - omega**2)
    return alpha


@dataclass(frozen=True)
class LightField:
    wavelength: float
    power: float  # W, per propagation direction
    pol_angle: float = 0.0
    standing: bool = False

    def __post_init__(self):
        if self.power < 0:
            raise ValueError("power must be non-negative")


@dataclass(frozen=True)
class TrapConfiguration:
    radius: float = 250e-9
    blue: LightField = LightField(780e-9, 25e-3, -np.pi / 2)
    red: LightField | None = None
    c3: float = 0.0  # J m^3; surface term -c3/(r-a)^3, off by default
    n_clad: float = 1.0
    mass: float = M_CS

    def __post_init__(self):
        if self.red is None:
            # crossed polarization planes unless given explicitly
            red = LightField(1064e-9, 2.2e-3, self.blue.pol_angle + np.pi / 2, True)
            object.__setattr__(self, "red", red)
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def scaled(self, factor: float) -> "TrapConfiguration":
        """Both powers multiplied by ``factor``."""
        return replace(
            self,
            blue=replace(self.blue, power=self.blue.power * factor),
            red=replace(self.red, power=self.red.power * factor),
        )

    def swapped_polarizations(self) -> "TrapConfiguration":
        return replace(
            self,
            blue=replace(self.blue, pol_angle=self.red.pol_angle),
            red=replace(self.red, pol_angle=self.blue.pol_angle),
        )


def _color_row(mode: GuidedMode, light: LightField, scalable: bool) -> np.ndarray:
    """Kernel parameter row for one color (see ``_kernels.COLOR_FIELDS``)."""
    pref = -cs_polarizability(light.wavelength) / 4.0 * light.power
    amp2 = mode.amplitude**2
    ratio = mode.outer_ratio
    c_out = mode.beta / (2 * mode.q) * ratio
    return np.array([
        mode.q, 1 - mode.s, 1 + mode.s,
        pref * amp2 * c_out**2, pref * amp2 * ratio**2,
        light.pol_angle, mode.beta, float(light.standing), float(scalable),
    ])


class PotentialField:
    """Two-color optical potential U(r, phi, z) outside the fiber (J).

    The red-detuned color is the ramped ("scalable") part: the optional
    ``scale`` argument multiplies its power. Points with ``r <= a`` are
    inside the dielectric and evaluate to NaN.
    """

    def __init__(self, config: TrapConfiguration):
        self.config = config
        a = config.radius
        self.blue_mode = solve_he11(FiberSpec.silica(a, config.blue.wavelength, config.n_clad),
                                    config.blue.pol_angle, config.blue.power)
        self.red_mode = solve_he11(FiberSpec.silica(a, config.red.wavelength, config.n_clad),
                                   config.red.pol_angle, config.red.power)
        self.colors = np.vstack([
            _color_row(self.blue_mode, config.blue, False),
            _color_row(self.red_mode, config.red, True),
        ])
        self.radius = a
        self.c3 = config.c3
        self.mass = config.mass

    def escape_energy(self, scale=1.0) -> float:
        """Energy of a free atom far from the fiber (J)."""
        return 0.0

    @property
    def lattice_period(self) -> float:
        return self.config.red.wavelength / (2 * self.red_mode.n_eff)

    def potential_and_gradient(self, xyz, scale=1.0):
        xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
        r = np.hypot(xyz[:, 0], xyz[:, 1])
        inside = r <= self.radius
        if inside.any():
            u = np.full(len(xyz), np.nan)
            g = np.full(xyz.shape, np.nan)
            if (~inside).any():
                u[~inside], g[~inside] = _kernels.fiber_potential(
                    self.colors, self.radius, self.c3, xyz[~inside], scale)
            return u, g
        return _kernels.fiber_potential(self.colors, self.radius, self.c3, xyz, scale)

    def potential_xyz(self, xyz, scale=1.0):
        return self.potential_and_gradient(xyz, scale)[0]

    def gradient_xyz(self, xyz, scale=1.0):
        return self.potential_and_gradient(xyz, scale)[1]

    def potential(self, r, phi, z, scale=1.0):
        """U at cylindrical coordinates (broadcast)."""
        r, phi, z = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (r, phi, z)))
        xyz = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1).reshape(-1, 3)
        return self.potential_xyz(xyz, scale).reshape(r.shape)

    def kernel_args(self):
        return self.colors, self.radius, self.c3

    def scaled(self, factor: float) -> "PotentialField":
        return PotentialField(self.config.scaled(factor))


def build_potential(config: TrapConfiguration | None = None) -> PotentialField:
    return PotentialField(config or TrapConfiguration())


@dataclass
class HarmonicPotential:
    """Anisotropic harmonic well ``U = scale * sum M w_i^2 x_i^2 / 2``.

    Analytic oracle used in tests of the dynamics and thermometry code.
    ``depth`` bounds the trapped energy range.
    """

    frequencies: tuple  # Hz, one per dimension
    mass: float = M_CS
    depth: float = np.inf

    def escape_energy(self, scale=1.0) -> float:
        """Truncation energy; the depth follows the potential scale."""
        return self.depth * scale

    @property
    def dim(self) -> int:
        return len(self.frequencies)

    @property
    def spring(self) -> np.ndarray:
        return self.mass * (2 * np.pi * np.asarray(self.frequencies, dtype=float)) ** 2

    def potential_and_gradient(self, xyz, scale=1.0):
        xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
        k = self.spring * scale
        return 0.5 * np.sum(k * xyz**2, axis=1), k * xyz

    def potential_xyz(self, xyz, scale=1.0):
        return self.potential_and_gradient(xyz, scale)[0]

    def site(self) -> "TrapSite":
        nu = tuple(self.frequencies) + (np.nan,) * (3 - self.dim)
        return TrapSite(
            position=(0.0, 0.0, 0.0), xyz=np.zeros(self.dim), u_min=0.0,
            depth=self.depth, frequencies={"r": nu[0], "phi": nu[1], "z": nu[2]},
            axes=np.eye(self.dim), surface_distance=np.nan,
        )


@dataclass
class TrapSite:
    position: tuple  # (r, phi, z)
    xyz: np.ndarray
    u_min: float  # J
    depth: float  # J, escape barrier height
    frequencies: dict  # Hz, keys "r", "phi", "z"
    axes: np.ndarray  # rows: local unit vectors (r, phi, z)
    surface_distance: float  # m
    saddle_radius: float = np.inf
    hessian: np.ndarray | None = field(default=None, repr=False)

    @property
    def max_frequency(self) -> float:
        return float(np.nanmax(list(self.frequencies.values())))

    @property
    def min_frequency(self) -> float:
        return float(np.nanmin(list(self.frequencies.values())))

    def report(self) -> dict:
        return {
            "r_min_m": self.position[0],
            "phi_min_rad": self.position[1],
            "z_min_m": self.position[2],
            "surface_distance_m": self.surface_distance,
            "depth_J": self.depth,
            "depth_uK": self.depth / UK,
            "nu_r_Hz": self.frequencies["r"],
            "nu_z_Hz": self.frequencies["z"],
            "nu_phi_Hz": self.frequencies["phi"],
        }


def _local_axes(phi):
    return np.array([
        [np.cos(phi), np.sin(phi), 0.0],
        [-np.sin(phi), np.cos(phi), 0.0],
        [0.0, 0.0, 1.0],
    ])


def local_hessian(field, xyz, axes, steps=(1e-9, None, 1e-9), scale=1.0):
    """Hessian in the local (r, r*phi, z) frame by central differences of the
    analytic gradient. The azimuthal step defaults to 1 mrad times r."""
    xyz = np.asarray(xyz, dtype=float)
    r = np.hypot(xyz[0], xyz[1])
    steps = [steps[0], steps[1] if steps[1] is not None else 1e-3 * r, steps[2]]
    hess = np.empty((3, 3))
    for j in range(3):
        d = axes[j] * steps[j]
        gp = field.gradient_xyz(xyz + d, scale)[0] @ axes.T
        gm = field.gradient_xyz(xyz - d, scale)[0] @ axes.T
        hess[:, j] = (gp - gm) / (2 * steps[j])
    return 0.5 * (hess + hess.T)


def _radial_barrier(field, r0, phi, z, scale, r_span=20e-6):
    """Maximum of U along the outward ray; returns (U_max, r_max)."""
    rs = r0 + np.geomspace(1e-12, r_span, 4000)
    u = field.potential(rs, phi, z, scale)
    i = int(np.nanargmax(u))
    if i == len(rs) - 1:
        return 0.0, np.inf  # monotone: barrier is the asymptote U(inf) = 0
    lo, hi = rs[max(i - 1, 0)], rs[min(i + 1, len(rs) - 1)]
    res = optimize.minimize_scalar(lambda rr: -field.potential(rr, phi, z, scale),
                                   bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-13})
    return -res.fun, res.x


def _refine_minimum(field, xyz, scale, iters=30):
    """Newton iterations with the differenced Hessian, L-BFGS start."""
    res = optimize.minimize(
        lambda p: field.potential_xyz(p * 1e-9, scale)[0] / UK,
        xyz * 1e9,
        jac=lambda p: field.gradient_xyz(p * 1e-9, scale)[0] * 1e-9 / UK,
        method="L-BFGS-B", options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 500},
    )
    x = res.x * 1e-9
    for _ in range(iters):
        g = field.gradient_xyz(x, scale)[0]
        hess = np.empty((3, 3))
        h = 1e-10
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            hess[:, j] = (field.gradient_xyz(x + e, scale)[0] - field.gradient_xyz(x - e, scale)[0]) / (2 * h)
        step = np.linalg.solve(0.5 * (hess + hess.T), g)
        x = x - step
        if np.linalg.norm(step) < 1e-16:
            break
    return x


def characterize_site(field, xyz, scale=1.0) -> TrapSite:
    x, y, z = xyz
    r, phi = np.hypot(x, y), np.arctan2(y, x)
    u_min = float(field.potential_xyz(xyz, scale)[0])
    axes = _local_axes(phi)
    hess = local_hessian(field, xyz, axes, scale=scale)
    evals, evecs = np.linalg.eigh(hess)
    if np.any(evals <= 0):
        raise NoMinimumFound(f"Hessian not positive definite at {xyz}")
    nus = np.sqrt(evals / field.mass) / (2 * np.pi)
    labels = ("r", "phi", "z")
    freqs = {}
    for k in range(3):
        freqs[labels[int(np.argmax(np.abs(evecs[:, k])))]] = float(nus[k])
    if len(freqs) != 3:
        freqs = {labels[j]: float(np.sqrt(hess[j, j] / field.mass) / (2 * np.pi)) for j in range(3)}
    barrier, r_saddle = _radial_barrier(field, r, phi, z, scale)
    return TrapSite(
        position=(float(r), float(phi), float(z)), xyz=np.asarray(xyz, dtype=float),
        u_min=u_min, depth=float(barrier - u_min), frequencies=freqs, axes=axes,
        surface_distance=float(r - field.radius), saddle_radius=float(r_saddle),
        hessian=hess,
    )


def find_trap_sites(field: PotentialField, scale: float = 1.0, z_offset: float = 0.0) -> list:
    """Locate the local potential minima in one lattice period.

    Coarse grid search over ``r in (a, a + 3 um)``, all ``phi`` and one
    period in ``z`` starting at ``z_offset``, followed by Newton refinement.
    Sites are sorted by azimuth.
    """
    a = field.radius
    period = field.lattice_period
    rs = a + np.geomspace(5e-9, 3e-6, 160)
    phis = np.linspace(0, 2 * np.pi, 96, endpoint=False)
    zs = z_offset + np.linspace(0, period, 24, endpoint=False)
    R, P, Z = np.meshgrid(rs, phis, zs, indexing="ij")
    U = field.potential(R, P, Z, scale)
    # discrete local minima; periodic in phi and z, open in r
    is_min = np.ones(U.shape, dtype=bool)
    for axis, periodic in ((0, False), (1, True), (2, True)):
        for shift in (1, -1):
            nb = np.roll(U, shift, axis=axis)
            if not periodic:
                edge = [slice(None)] * 3
                edge[axis] = 0 if shift == 1 else -1
                nb[tuple(edge)] = np.inf
            is_min &= U < nb
    is_min &= U < 0
    cands = np.argwhere(is_min)
    sites = []
    for i, j, k in cands:
        start = np.array([R[i, j, k] * np.cos(P[i, j, k]), R[i, j, k] * np.sin(P[i, j, k]), Z[i, j, k]])
        xyz = _refine_minimum(field, start, scale)
        # wrap z into the search period
        xyz[2] = z_offset + (xyz[2] - z_offset) % period
        if np.hypot(xyz[0], xyz[1]) <= a:
            continue
        if any(np.linalg.norm(xyz - s.xyz) < 1e-9 or
               np.linalg.norm(xyz - s.xyz - [0, 0, period]) < 1e-9 or
               np.linalg.norm(xyz - s.xyz + [0, 0, period]) < 1e-9 for s in sites):
            continue
        try:
            sites.append(characterize_site(field, xyz, scale))
        except NoMinimumFound:
            continue
    if not sites:
        raise NoMinimumFound("no bound trapping site; red-detuned light too weak?")
    sites.sort(key=lambda s: s.position[1] % (2 * np.pi))
    return sites


class DepthCalibration:
    """Map a requested depth fraction ``U_low/U0`` to a red-power factor.

    Lowering only the red-detuned power changes the depth nonlinearly
    and moves the site outward; the map is tabulated by re-locating the
    minimum along the site's (phi, z) line, which is a symmetry line of
    the potential. The largest local trap frequency is tabulated too.
    """

    def __init__(self, field: PotentialField, site: TrapSite, n: int = 120):
        self.field = field
        self.site = site
        _, phi, z = site.position
        a = field.radius
        axes = _local_axes(phi)
        factors = np.geomspace(1.0, 1e-3, n)
        depths, nu_max = [], []
        rs = a + np.geomspace(1e-9, 8e-6, 3000)
        for f in factors:
            u = field.potential(rs, phi, z, f)
            i = int(np.nanargmin(u))
            if u[i] >= 0 or i in (0, len(rs) - 1):
                break
            res = optimize.minimize_scalar(lambda rr: field.potential(rr, phi, z, f),
                                           bounds=(rs[max(i - 1, 0)], rs[i + 1]), method="bounded",
                                           options={"xatol": 1e-13})
            barrier, _ = _radial_barrier(field, res.x, phi, z, f)
            xyz = np.array([res.x * np.cos(phi), res.x * np.sin(phi), z])
            hess = local_hessian(field, xyz, axes, scale=f)
            evals = np.linalg.eigvalsh(hess)
            if evals[0] <= 0:
                break
            depths.append(barrier - res.fun)
            nu_max.append(np.sqrt(evals[-1] / field.mass) / (2 * np.pi))
        m = len(depths)
        self.factors = factors[:m]
        self.fractions = np.asarray(depths) / site.depth
        self.nu_max = np.asarray(nu_max)
        # depth fraction is monotone in the red factor; interpolate in log-log
        logf = np.log(self.fractions[::-1])
        self._interp = PchipInterpolator(logf, np.log(self.factors[::-1]))
        self._nu = PchipInterpolator(logf, np.log(self.nu_max[::-1]))
        self.min_fraction = float(self.fractions[-1])

    def red_scale(self, fraction):
        frac = np.clip(np.asarray(fraction, dtype=float), self.min_fraction, 1.0)
        out = np.exp(self._interp(np.log(frac)))
        return np.where(np.asarray(fraction) >= 1.0, 1.0, out)

    def max_frequency(self, fraction):
        """Largest trap frequency (Hz) at depth fraction ``fraction``."""
        frac = np.clip(np.asarray(fraction, dtype=float), self.min_fraction, 1.0)
        return np.exp(self._nu(np.log(frac)))


def equipotential_slice(field, site: TrapSite, level: float, plane: str = "xy",
                        half_width: float = 400e-9, n: int = 241) -> list:
    """Contours of ``U = U_min + level`` in a plane through the site.

    ``plane`` is ``"xy"`` (transverse, at the site's z) or ``"xz"`` (the
    plane containing the fiber axis and the site). Returns the closed
    polylines as (M, 2) arrays in plane coordinates (m); the first one
    encloses the site.
    """
    import contourpy

    if level < 0:
        raise ValueError("level must be non-negative")
    if level >= site.depth:
        raise LevelAboveDepth(f"level {level / UK:.1f} uK >= depth {site.depth / UK:.1f} uK")
    x0, y0, z0 = site.xyz
    if plane == "xy":
        cu, cv = x0, y0
    elif plane == "xz":
        cu, cv = np.hypot(x0, y0), z0
    else:
        raise ValueError("plane must be 'xy' or 'xz'")
    if level == 0:
        return [np.array([[cu, cv]])]
    us = cu + np.linspace(-half_width, half_width, n)
    vs = cv + np.linspace(-half_width, half_width, n)
    Uu, Vv = np.meshgrid(us, vs, indexing="xy")
    if plane == "xy":
        pts = np.stack([Uu, Vv, np.full_like(Uu, z0)], axis=-1)
    else:
        phi = np.arctan2(y0, x0)
        pts = np.stack([Uu * np.cos(phi), Uu * np.sin(phi), Vv], axis=-1)
    U = field.potential_xyz(pts.reshape(-1, 3)).reshape(Uu.shape) - site.u_min
    U = np.where(np.isfinite(U), U, np.nanmax(U))
    gen = contourpy.contour_generator(us, vs, U)
    lines = gen.lines(level)
    closed = [ln for ln in lines if len(ln) > 3 and np.allclose(ln[0], ln[-1])]
    around = [ln for ln in closed if point_in_polygon((cu, cv), ln)]
    if not around:
        raise LevelAboveDepth("no closed contour encloses the site at this level")
    others = [ln for ln in closed if not point_in_polygon((cu, cv), ln)]
    return around[:1] + others


def point_in_polygon(point, poly) -> bool:
    """Even-odd ray casting."""
    x, y = point
    px, py = poly[:, 0], poly[:, 1]
    qx, qy = np.roll(px, -1), np.roll(py, -1)
    cond = (py > y) != (qy > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = px + (y - py) * (qx - px) / (qy - py)
    return bool(np.count_nonzero(cond & (x < xcross)) % 2)


def polygon_area(poly) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def export_potential_csv(field, path, xs, ys, zs, scale=1.0) -> None:
    """Write U on the grid ``xs x ys x zs`` as ``x,y,z,U_uK`` (m, uK)."""
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    u = field.potential_xyz(pts, scale) / UK
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "U_uK"])
        for p, val in zip(pts, u):
            w.writerow([f"{p[0]:.6e}", f"{p[1]:.6e}", f"{p[2]:.6e}", f"{val:.6e}"])

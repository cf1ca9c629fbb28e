"""Scattered-light polarimetry of the guided mode.

Point scatterers on and inside the fiber radiate as dipoles driven by the
local field of the guided mode. Two cameras look at the fiber along x
and y through a polarization filter. Because every scatterer responds
linearly, the detected power for an input Jones vector ``j`` (at the
nanofiber) is a quadratic form ``j^H M j``; the 2x2 Hermitian matrices
``M`` are precomputed once per camera and filter setting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import optimize
from scipy.linalg import expm, logm
from scipy.stats import unitary_group

from .errors import FitNonconvergence, InsufficientScanRange
from .fiber_modes import GuidedMode, field_cartesian

FILTERS = ("transverse", "z", "none")


# --------------------------------------------------------------- ensemble
@dataclass
class ScattererEnsemble:
    """Point scatterers (Cartesian positions, complex weights).

    ``symmetric`` ensembles contain every base scatterer together with its
    seven images under the symmetry group of the square (mirrors in x and
    y and the x <-> y exchange) at the same z.
    """

    positions: np.ndarray
    weights: np.ndarray
    radius: float
    symmetric: bool = False

    def __len__(self):
        return len(self.positions)

    @classmethod
    def random(cls, n: int = 10_000, radius: float = 250e-9, length: float = 50e-6,
               surface_fraction: float = 0.8, seed=0, symmetric: bool = True):
        """Uniform scatterers on the surface and in the bulk of a segment.

        With ``symmetric`` the count is rounded up to a multiple of 8.
        """
        rng = np.random.default_rng(seed)
        n_base = -(-n // 8) if symmetric else n
        on_surface = rng.random(n_base) < surface_fraction
        # surface scatterers sit just inside the glass
        r = np.where(on_surface, radius * (1 - 1e-9), radius * np.sqrt(rng.random(n_base)))
        phi = rng.uniform(0, 2 * np.pi, n_base)
        z = rng.uniform(-length / 2, length / 2, n_base)
        x, y = r * np.cos(phi), r * np.sin(phi)
        if symmetric:
            imgs = [(x, y), (-x, y), (x, -y), (-x, -y), (y, x), (-y, x), (y, -x), (-y, -x)]
            x = np.concatenate([p[0] for p in imgs])
            y = np.concatenate([p[1] for p in imgs])
            z = np.tile(z, 8)
        pos = np.stack([x, y, z], axis=1)
        return cls(pos, np.ones(len(pos), dtype=complex), radius, symmetric)


@dataclass(frozen=True)
class CameraModel:
    """Camera looking along ``axis`` ("x" or "y") with a cone of half-angle
    ``aperture / 2`` and a polarization filter."""

    axis: str = "x"
    aperture: float = np.deg2rad(5.0)
    filter: str = "transverse"

    def __post_init__(self):
        if self.axis not in ("x", "y"):
            raise ValueError("axis must be 'x' or 'y'")
        if not self.aperture > 0:
            raise ValueError("aperture must be positive")
        if self.filter not in FILTERS:
            raise ValueError(f"filter must be one of {FILTERS}")

    def with_filter(self, name: str) -> "CameraModel":
        return CameraModel(self.axis, self.aperture, name)

    def directions(self, n_dir: int = 61) -> np.ndarray:
        """Unit vectors filling the aperture cone (sunflower pattern)."""
        k = np.arange(n_dir) + 0.5
        rho = np.sqrt(k / n_dir) * np.sin(self.aperture / 2)
        ang = k * np.pi * (3 - np.sqrt(5))
        a, b = rho * np.cos(ang), rho * np.sin(ang)
        c = np.sqrt(1 - a * a - b * b)
        if self.axis == "x":
            return np.stack([c, a, b], axis=1)
        return np.stack([a, c, b], axis=1)


def _filter_vectors(camera: CameraModel):
    """Transmission axes (lab frame) of the camera's polarizer.

    The polarizer axes are fixed in the camera frame and the aperture is
    treated paraxially: the transmitted amplitude is the dipole component
    along the axis, while the aperture enters only through the
    path-length phases.
    """
    transverse = np.array([0.0, 1.0, 0.0]) if camera.axis == "x" else np.array([1.0, 0.0, 0.0])
    zhat = np.array([0.0, 0.0, 1.0])
    return {"transverse": [transverse], "z": [zhat], "none": [transverse, zhat]}[camera.filter]


# ------------------------------------------------------------ scatter model
class ScatterModel:
    """Quadratic-form representation of the camera signals.

    Parameters
    ----------
    mode : GuidedMode
        Solved mode at the wavelength of the scattered light; its power and
        polarization angle are ignored (unit basis modes are used).
    ensemble : ScattererEnsemble
    zero_phase : bool
        Drop the propagation phases to the camera (ablation of the
        interference mechanism).
    """

    def __init__(self, mode: GuidedMode, ensemble: ScattererEnsemble, zero_phase: bool = False,
                 n_dir: int = 61):
        self.mode = mode
        self.ensemble = ensemble
        self.zero_phase = zero_phase
        self.n_dir = n_dir
        self.k = mode.spec.k0
        x, y, z = ensemble.positions.T
        basis = []
        for pol in (0.0, np.pi / 2):
            m = mode.with_pol_angle(pol).with_power(1.0)
            ex, ey, ez = field_cartesian(m, x, y, z)
            basis.append(np.stack([ex, ey, ez], axis=1) * ensemble.weights[:, None])
        self._dipoles = basis  # two (N, 3) complex arrays
        self._cache = {}

    def matrix(self, camera: CameraModel) -> np.ndarray:
        key = (camera.axis, camera.aperture, camera.filter)
        if key in self._cache:
            return self._cache[key]
        dirs = camera.directions(self.n_dir)
        pos = self.ensemble.positions
        if self.zero_phase:
            phase = np.ones((len(dirs), len(pos)), dtype=complex)
        else:
            phase = np.exp(-1j * self.k * (dirs @ pos.T))
        M = np.zeros((2, 2), dtype=complex)
        for e in _filter_vectors(camera):
            amps = np.stack([phase @ (p @ e) for p in self._dipoles], axis=1)
            M += amps.conj().T @ amps
        M /= len(dirs)
        M = 0.5 * (M + M.conj().T)
        self._cache[key] = M
        return M

    def power(self, camera: CameraModel, jones) -> np.ndarray:
        """Detected power for Jones vectors ``jones`` of shape (..., 2)."""
        j = np.asarray(jones, dtype=complex)
        M = self.matrix(camera)
        return np.real(np.einsum("...a,ab,...b->...", j.conj(), M, j))


def linear_jones(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    return np.stack([np.cos(phi), np.sin(phi)], axis=-1).astype(complex)


def simulate_scatter_pattern(mode: GuidedMode, ensemble: ScattererEnsemble, camera: CameraModel,
                             zero_phase: bool = False, model: ScatterModel | None = None) -> float:
    """Detected power for the mode's own polarization plane and power."""
    model = model or ScatterModel(mode, ensemble, zero_phase)
    return float(model.power(camera, linear_jones(mode.pol_angle)) * mode.power)


def angular_pattern(model: ScatterModel, jones, angles, n_dir: int = 1):
    """Unfiltered power vs observation azimuth in the transverse plane."""
    pos = model.ensemble.positions
    out = np.empty(len(angles))
    j = np.asarray(jones, dtype=complex)
    for i, a in enumerate(angles):
        n = np.array([[np.cos(a), np.sin(a), 0.0]])
        phase = np.ones(len(pos)) if model.zero_phase else np.exp(-1j * model.k * (pos @ n[0]))
        e_far = sum(jj * (phase @ p) for jj, p in zip(j, model._dipoles))
        e_far = e_far - (e_far @ n[0]) * n[0]
        out[i] = np.real(np.vdot(e_far, e_far))
    return out


# ------------------------------------------------------------------ Jones
def retarder(delta: float, theta: float) -> np.ndarray:
    """Linear retarder with retardance ``delta`` and fast axis at ``theta``."""
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    core = np.diag([np.exp(-0.5j * delta), np.exp(0.5j * delta)])
    return rot @ core @ rot.T


def random_unitary(rng) -> np.ndarray:
    return unitary_group.rvs(2, random_state=rng)


@dataclass
class JonesStack:
    """Fiber birefringence ``F`` preceded by a two-retarder compensator.

    ``settings = (delta1, theta1, delta2, theta2)``; the light meets
    retarder 1 first. Retardances and the fiber's birefringence phase
    scale as ``reference_wavelength / wavelength``.
    """

    fiber: np.ndarray = dc_field(default_factory=lambda: np.eye(2, dtype=complex))
    settings: tuple = (0.0, 0.0, 0.0, 0.0)
    reference_wavelength: float = 1064e-9

    def fiber_at(self, wavelength: float) -> np.ndarray:
        if wavelength == self.reference_wavelength:
            return self.fiber
        gen = logm(self.fiber)
        return expm(gen * (self.reference_wavelength / wavelength))

    def compensator(self, settings=None, wavelength: float | None = None) -> np.ndarray:
        d1, t1, d2, t2 = self.settings if settings is None else settings
        f = 1.0 if wavelength is None else self.reference_wavelength / wavelength
        return retarder(d2 * f, t2) @ retarder(d1 * f, t1)

    def total(self, settings=None, wavelength: float | None = None) -> np.ndarray:
        lam = self.reference_wavelength if wavelength is None else wavelength
        return self.fiber_at(lam) @ self.compensator(settings, wavelength)


def scan_contrast(M: np.ndarray, transfer: np.ndarray, background: float = 0.0) -> float:
    """Contrast of a linear-input scan through ``transfer`` seen via ``M``.

    ``P(phi) = v^T Q v`` with ``v = (cos phi, sin phi)`` and
    ``Q = Re(T^H M T)``; its extrema are the eigenvalues of ``Q``.
    ``background`` is an absolute incoherent power.
    """
    Q = np.real(transfer.conj().T @ M @ transfer)
    lo, hi = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    return float((hi - lo) / (hi + lo + 2 * background))


# ------------------------------------------------------------------ fitting
@dataclass
class ScanFit:
    """``I = A sin^2(phi - phi0) + B sin^2(2(phi - phi0)) + D``."""

    A: float
    B: float
    D: float
    phi0: float
    errors: np.ndarray
    residual_norm: float
    phi0_defined: bool = True

    def __call__(self, phi):
        x = np.asarray(phi) - self.phi0
        return self.A * np.sin(x) ** 2 + self.B * np.sin(2 * x) ** 2 + self.D

    @property
    def contrast(self) -> float:
        if not self.phi0_defined:
            return 0.0
        v = self(np.linspace(0, np.pi, 3601))
        hi, lo = v.max(), v.min()
        return float((hi - lo) / (hi + lo)) if hi + lo > 0 else 0.0

    def report(self, label: str = "") -> str:
        pre = f"{label}_" if label else ""
        e = self.errors
        return (f"{pre}A = {self.A:.6e} +- {e[0]:.2e}\n{pre}B = {self.B:.6e} +- {e[1]:.2e}\n"
                f"{pre}D = {self.D:.6e} +- {e[2]:.2e}\n"
                f"{pre}phi0_deg = {np.rad2deg(self.phi0):.4f} +- {np.rad2deg(e[3]):.4f}\n"
                f"{pre}contrast = {self.contrast:.5f}\n")


def _check_range(phi):
    phi = np.asarray(phi, dtype=float)
    if len(phi) < 8:
        raise InsufficientScanRange("need at least 8 scan points")
    span = np.ptp(phi)
    if span < np.pi * (1 - 1e-9) and len(np.unique(np.round(np.mod(phi, np.pi), 12))) < 8:
        raise InsufficientScanRange("scan must cover 180 degrees")
    if span < np.pi * (1 - 1e-9) - np.pi / len(phi):
        raise InsufficientScanRange(f"scan covers only {np.rad2deg(span):.1f} degrees")


def fit_scan(phi, power, sigma=None) -> ScanFit:
    """Least-squares fit of the two-harmonic scan model (analytic Jacobian).

    The result is put in canonical form with ``A >= 0`` and
    ``phi0 in [0, pi)``. A constant signal gives ``A = B = 0`` with
    ``phi0`` flagged as undefined.
    """
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(power, dtype=float)
    _check_range(phi)
    scale = max(np.max(np.abs(y)), 1e-300)
    if np.ptp(y) <= 1e-12 * scale:
        return ScanFit(0.0, 0.0, float(y.mean()), np.nan, np.zeros(4), 0.0, False)
    s = np.ones_like(y) if sigma is None else np.asarray(sigma, dtype=float)
    yn = y / scale
    # linear start: second harmonic of the data
    c2 = np.mean(yn * np.exp(-2j * phi)) * 2
    phi0_start = 0.5 * np.angle(-c2)
    a0 = 2 * abs(c2)
    d0 = yn.min()

    def resid(th):
        A, B, D, p0 = th
        x = phi - p0
        return (A * np.sin(x) ** 2 + B * np.sin(2 * x) ** 2 + D - yn) / s

    def jac(th):
        A, B, D, p0 = th
        x = phi - p0
        return np.stack([
            np.sin(x) ** 2, np.sin(2 * x) ** 2, np.ones_like(x),
            -A * np.sin(2 * x) - 2 * B * np.sin(4 * x),
        ], axis=1) / s[:, None]

    best = None
    for start in ([a0, 0.0, d0, phi0_start], [a0, 0.1 * a0, d0, phi0_start + 0.05]):
        res = optimize.least_squares(resid, start, jac=jac, method="lm", xtol=1e-15, ftol=1e-15,
                                     gtol=1e-15, max_nfev=2000)
        if best is None or res.cost < best.cost:
            best = res
    if not best.success or not np.all(np.isfinite(best.x)):
        raise FitNonconvergence(best.message)
    A, B, D, p0 = best.x
    if A < 0:  # A sin^2 x = A - A sin^2(x - pi/2)
        D, A, p0 = D + A, -A, p0 + np.pi / 2
    p0 = float(np.mod(p0, np.pi))
    J = jac([A, B, D, p0])
    dof = max(len(y) - 4, 1)
    chi2 = float(np.sum(best.fun**2))
    try:
        cov = np.linalg.inv(J.T @ J) * (chi2 / dof)
        err = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        err = np.full(4, np.nan)
    err = err * np.array([scale, scale, scale, 1.0])
    return ScanFit(A * scale, B * scale, D * scale, p0, err, float(np.sqrt(chi2)) * scale)


# ------------------------------------------------------------------- scans
@dataclass
class PolarizationScan:
    phi: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    fit1: ScanFit | None = None
    fit2: ScanFit | None = None

    @property
    def phase_offset(self) -> float:
        """``phi0`` of camera 2 minus camera 1, folded to ``[0, pi)`` (rad)."""
        return float(np.mod(self.fit2.phi0 - self.fit1.phi0, np.pi))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["phi_deg", "P_cam1", "P_cam2"])
            for row in zip(np.rad2deg(self.phi), self.p1, self.p2):
                w.writerow([f"{row[0]:.6g}", f"{row[1]:.10e}", f"{row[2]:.10e}"])

    @classmethod
    def from_csv(cls, path, fit: bool = True):
        cols = ([], [], [])
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                cols[0].append(np.deg2rad(float(row["phi_deg"])))
                cols[1].append(float(row["P_cam1"]))
                cols[2].append(float(row["P_cam2"]))
        scan = cls(*(np.asarray(c) for c in cols))
        if fit:
            scan.fit1, scan.fit2 = fit_scan(scan.phi, scan.p1), fit_scan(scan.phi, scan.p2)
        return scan


def background_power(model: ScatterModel, camera: CameraModel, transfer, fraction: float) -> float:
    """Incoherent floor that makes up ``fraction`` of the phi-averaged signal."""
    if not 0 <= fraction < 1:
        raise ValueError("background fraction must lie in [0, 1)")
    Q = np.real(transfer.conj().T @ model.matrix(camera) @ transfer)
    mean_pol = 0.5 * np.trace(Q)
    return fraction / (1 - fraction) * mean_pol


def scan_polarization(model: ScatterModel, phi, cameras=None, stack: JonesStack | None = None,
                      background: float = 0.0, wavelength: float | None = None,
                      fit: bool = True) -> PolarizationScan:
    """Camera powers vs input polarization angle ``phi``.

    ``background`` is the fraction of each camera's mean power carried by
    an unpolarized incoherent floor.
    """
    phi = np.asarray(phi, dtype=float)
    _check_range(phi)
    if cameras is None:
        cameras = (CameraModel("x"), CameraModel("y"))
    T = np.eye(2, dtype=complex) if stack is None else stack.total(wavelength=wavelength)
    j = linear_jones(phi) @ T.T
    signals = []
    for cam in cameras:
        p = model.power(cam, j)
        p = p + background_power(model, cam, T, background)
        signals.append(p)
    scan = PolarizationScan(phi, signals[0], signals[1])
    if fit:
        scan.fit1, scan.fit2 = fit_scan(phi, scan.p1), fit_scan(phi, scan.p2)
    return scan


# ------------------------------------------------------------- compensator
@dataclass
class CompensatorResult:
    settings: tuple
    contrast: float
    best_per_restart: list
    stagnated: bool

    def report(self) -> str:
        d1, t1, d2, t2 = self.settings
        return (f"delta1_rad = {d1:.6f}\ntheta1_rad = {t1:.6f}\n"
                f"delta2_rad = {d2:.6f}\ntheta2_rad = {t2:.6f}\n"
                f"contrast = {self.contrast:.6f}\nstagnated = {str(self.stagnated).lower()}\n")


def compensator_objective(model: ScatterModel, stack: JonesStack, cameras=None, wavelength=None):
    """Mean transverse-filter contrast of both cameras for given settings."""
    if cameras is None:
        cameras = (CameraModel("x"), CameraModel("y"))
    mats = [model.matrix(c) for c in cameras]
    fiber = stack.fiber_at(stack.reference_wavelength if wavelength is None else wavelength)

    def objective(settings):
        T = fiber @ stack.compensator(settings, wavelength)
        return float(np.mean([scan_contrast(M, T) for M in mats]))

    return objective


def optimize_compensator(model: ScatterModel, stack: JonesStack, restarts: int = 8, seed=0,
                         target: float = 0.99, max_sweeps: int = 200, tol: float = 1e-7,
                         cameras=None) -> CompensatorResult:
    """Coordinate search with random restarts over the four retarder settings.

    The fiber matrix is used only through the black-box contrast. The
    step along each coordinate halves after a sweep without improvement.
    """
    objective = compensator_objective(model, stack, cameras)
    rng = np.random.default_rng(seed)
    lower = np.array([0.0, 0.0, 0.0, 0.0])
    upper = np.array([2 * np.pi, np.pi, 2 * np.pi, np.pi])
    best_x, best_f, per_restart = None, -np.inf, []
    for r in range(restarts):
        x = np.array(stack.settings, dtype=float) if r == 0 else lower + (upper - lower) * rng.random(4)
        f = objective(x)
        step = (upper - lower) / 4
        for _ in range(max_sweeps):
            improved = False
            for i in range(4):
                for sgn in (1, -1):
                    y = x.copy()
                    y[i] = lower[i] + np.mod(y[i] + sgn * step[i] - lower[i], upper[i] - lower[i])
                    fy = objective(y)
                    if fy > f + 1e-12:
                        x, f, improved = y, fy, True
                        break
            if not improved:
                step *= 0.5
                if np.all(step < tol):
                    break
        per_restart.append(f)
        # later restarts must beat the incumbent by more than rounding noise
        if best_x is None or f > best_f + 1e-9:
            best_x, best_f = x, f
    return CompensatorResult(tuple(float(v) for v in best_x), float(best_f), per_restart,
                             bool(best_f < target))

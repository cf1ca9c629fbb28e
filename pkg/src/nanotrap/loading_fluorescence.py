"""Trap loading from a Gaussian MOT and fluorescence along the fiber.

Units: lengths in metres, rates in 1/s. The two-body coefficient and the
confinement volume are kept in cm^3 units as customary; their ratio is a
rate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

from . import _kernels
from .errors import DegenerateObservation

DEFAULT_CLIP = 0.23


@dataclass(frozen=True)
class LoadingModel:
    """Gaussian loading-rate profile ``R(z) = R_max exp(-(z-z0)^2 / 2 sigma^2)``.

    Parameters
    ----------
    r_max : float
        Peak loading rate per site (1/s).
    z0, sigma_mot : float
        MOT centre and rms radius (m).
    gamma : float
        One-body loss rate (1/s).
    beta2 : float
        Two-body loss coefficient (cm^3/s).
    volume : float
        Confinement volume of one site (cm^3).
    site_density : float
        Trapping sites per metre of fiber.
    duration : float
        Loading time (s).
    """

    r_max: float = 1.0e3
    z0: float = 0.0
    sigma_mot: float = 0.21e-3
    gamma: float = 1.0
    beta2: float = 1.0e-10
    volume: float = 2.7e-16
    site_density: float = 4.0e6
    duration: float = 0.05

    def __post_init__(self):
        for name in ("sigma_mot", "site_density", "duration", "volume"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("r_max", "gamma", "beta2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def beta_over_v(self) -> float:
        """Pair-loss rate constant ``beta2 / V`` (1/s)."""
        return self.beta2 / self.volume

    def rate(self, z):
        z = np.asarray(z, dtype=float)
        return self.r_max * np.exp(-0.5 * ((z - self.z0) / self.sigma_mot) ** 2)

    def grid(self, n: int = 2048, span: float = 3.0) -> np.ndarray:
        return np.linspace(self.z0 - span * self.sigma_mot, self.z0 + span * self.sigma_mot, n)


# ------------------------------------------------------------------ regime
@dataclass
class BlockadeReport:
    lower: float  # gamma / 2
    upper: float  # beta2 / 4V
    r_max: float
    in_blockade: bool
    z_range: tuple | None

    def report(self) -> str:
        zr = "none" if self.z_range is None else f"{self.z_range[0]*1e3:.6f} {self.z_range[1]*1e3:.6f}"
        return (f"gamma_half_per_s = {self.lower:.6g}\n"
                f"beta_over_4V_per_s = {self.upper:.6g}\n"
                f"R_max_per_s = {self.r_max:.6g}\n"
                f"in_blockade_at_peak = {str(self.in_blockade).lower()}\n"
                f"blockade_z_range_mm = {zr}\n")


def blockade_regime_check(model: LoadingModel, z=None) -> BlockadeReport:
    """Where along the MOT profile does ``gamma/2 < R(z) < beta2/4V`` hold?"""
    lower, upper = 0.5 * model.gamma, model.beta_over_v / 4
    z = model.grid() if z is None else np.asarray(z, dtype=float)
    r = model.rate(z)
    ok = (r > lower) & (r < upper)
    z_range = (float(z[ok].min()), float(z[ok].max())) if ok.any() else None
    peak_ok = bool(lower < model.r_max < upper)
    return BlockadeReport(lower, upper, model.r_max, peak_ok, z_range)


# --------------------------------------------------------------- occupancy
@dataclass
class OccupancyResult:
    counts: np.ndarray  # final occupation per site

    @property
    def histogram(self) -> np.ndarray:
        return np.bincount(self.counts, minlength=3)

    @property
    def mean(self) -> float:
        return float(self.counts.mean())

    @property
    def p_multiple(self) -> float:
        """Fraction of sites holding two or more atoms."""
        return float(np.mean(self.counts >= 2))

    def report(self) -> str:
        h = self.histogram / len(self.counts)
        lines = [f"n_sites = {len(self.counts)}", f"mean_occupancy = {self.mean:.6f}",
                 f"P_n_ge_2 = {self.p_multiple:.6f}"]
        lines += [f"P_n_{k} = {p:.6f}" for k, p in enumerate(h)]
        return "\n".join(lines) + "\n"


def site_seeds(seed, n_sites: int) -> np.ndarray:
    """Independent 64-bit stream seeds, one per site."""
    return np.random.SeedSequence(seed).generate_state(n_sites, dtype=np.uint64)


def simulate_site_occupancy(rate: float, gamma: float, beta_v: float, duration: float,
                            n_sites: int = 10_000, seed=0, n0=0) -> OccupancyResult:
    """Exact stochastic simulation of loading with one- and two-body loss.

    Events per site: load (rate ``R``), single loss (``n gamma``), pair
    loss ``n -> n-2`` (``beta_v n(n-1)/2``).
    """
    if min(rate, gamma, beta_v) < 0 or not duration > 0:
        raise ValueError("rates must be non-negative and duration positive")
    start = np.broadcast_to(np.asarray(n0, dtype=np.int64), (n_sites,)).copy()
    counts = _kernels.occupancy(float(rate), float(gamma), float(beta_v), float(duration),
                                start, site_seeds(seed, n_sites))
    return OccupancyResult(np.asarray(counts, dtype=np.int64))


# ------------------------------------------------------------ line density
@dataclass
class LineDensity:
    z: np.ndarray
    rho: np.ndarray  # atoms per metre

    @property
    def total(self) -> float:
        return float(integrate.trapezoid(self.rho, self.z))

    def optical_depth(self, cross_section: float, area: float) -> float:
        return cross_section / area * self.total

    def scaled(self, factor: float) -> "LineDensity":
        return LineDensity(self.z, self.rho * factor)


def plateau_half_width(sigma_mot: float, clip: float = DEFAULT_CLIP) -> float:
    """Half-width of the flat top of a Gaussian clipped at ``clip`` of its peak."""
    if not 0 < clip <= 1:
        raise ValueError("clip fraction must lie in (0, 1]")
    return sigma_mot * np.sqrt(2 * np.log(1 / clip))


def clipped_shape(model: LoadingModel, z, clip: float = DEFAULT_CLIP, soft: bool = False):
    """Loading profile normalized to its peak, optionally clipped.

    ``soft`` replaces the hard ``min`` by ``c (1 - exp(-g / c))``.
    """
    g = model.rate(z) / model.r_max if model.r_max > 0 else np.exp(
        -0.5 * ((np.asarray(z) - model.z0) / model.sigma_mot) ** 2)
    if clip >= 1 and not soft:
        return g
    if soft:
        return clip * -np.expm1(-g / clip)
    return np.minimum(g, clip)


def line_density(model: LoadingModel, blockade: bool = True, od_target: float = 1.0,
                 cross_section: float = 1.0, area: float = 1.0, clip: float = DEFAULT_CLIP,
                 z=None, soft: bool = False) -> LineDensity:
    """Atom line density scaled so that ``cross_section / area * int rho = od_target``."""
    if not od_target > 0:
        raise ValueError("od_target must be positive")
    z = model.grid() if z is None else np.asarray(z, dtype=float)
    shape = clipped_shape(model, z, clip if blockade else 1.0, soft and blockade)
    norm = integrate.trapezoid(shape, z)
    return LineDensity(z, shape * (od_target * area / cross_section / norm))


def equivalent_length(model: LoadingModel, clip: float = DEFAULT_CLIP) -> float:
    """Length of the clipped profile measured in units of its plateau.

    ``int min(g, c) dz / c`` evaluated in closed form.
    """
    if clip >= 1:
        return np.sqrt(2 * np.pi) * model.sigma_mot
    w = plateau_half_width(model.sigma_mot, clip)
    tails = np.sqrt(2 * np.pi) * model.sigma_mot * special.erfc(w / (np.sqrt(2) * model.sigma_mot))
    return 2 * w + tails / clip


def estimate_atom_number(model: LoadingModel, filling: float = 0.5,
                         clip: float = DEFAULT_CLIP) -> float:
    """Atoms = filling x sites per length x equivalent length of the clipped profile."""
    return filling * model.site_density * equivalent_length(model, clip)


# ------------------------------------------------------------ fluorescence
@dataclass
class FluorescenceProfile:
    z: np.ndarray
    intensity: np.ndarray
    probe: np.ndarray  # probe intensity reaching each z, relative to input
    cross_section: float
    area: float
    i0: float = 1.0
    offset: float = 0.0

    @property
    def transmission(self) -> float:
        return float(self.probe[-1])

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["z_mm", "I_F"])
            for z, i in zip(self.z * 1e3, self.intensity):
                w.writerow([f"{z:.9g}", f"{i:.12e}"])


def read_profile_csv(path):
    """Return ``(z, I_F)`` arrays (z in metres) from a ``z_mm,I_F`` file."""
    z, i = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            z.append(float(row["z_mm"]) * 1e-3)
            i.append(float(row["I_F"]))
    return np.asarray(z), np.asarray(i)


def fluorescence_profile(density: LineDensity, cross_section: float = 1.0, area: float = 1.0,
                         i0: float = 1.0, offset: float = 0.0) -> FluorescenceProfile:
    """Weak-probe fluorescence with Beer-Lambert depletion.

    The probe enters at the low-z end of the grid. The caller is
    responsible for staying in the unsaturated regime.
    """
    column = integrate.cumulative_trapezoid(density.rho, density.z, initial=0.0)
    probe = np.exp(-cross_section / area * column)
    intensity = density.rho * i0 * probe + offset
    return FluorescenceProfile(density.z, intensity, probe, cross_section, area, i0, offset)


# ---------------------------------------------------------------- compare
@dataclass
class ModelFit:
    name: str
    scale: float
    offset: float
    clip: float | None
    chi2: float

    def curve(self, shape):
        return self.scale * shape + self.offset


@dataclass
class ModelComparison:
    blockade: ModelFit
    gaussian: ModelFit

    @property
    def preferred(self) -> str:
        return "blockade" if self.blockade.chi2 < self.gaussian.chi2 else "gaussian"

    @property
    def chi2_ratio(self) -> float:
        """Gaussian chi^2 over blockade chi^2."""
        return self.gaussian.chi2 / max(self.blockade.chi2, 1e-300)

    def report(self) -> str:
        b, g = self.blockade, self.gaussian
        return (f"blockade_chi2 = {b.chi2:.6e}\nblockade_scale = {b.scale:.6e}\n"
                f"blockade_offset = {b.offset:.6e}\nblockade_clip = {b.clip:.5f}\n"
                f"gaussian_chi2 = {g.chi2:.6e}\ngaussian_scale = {g.scale:.6e}\n"
                f"gaussian_offset = {g.offset:.6e}\nchi2_ratio = {self.chi2_ratio:.6g}\n"
                f"preferred = {self.preferred}\n")


def _linear_fit(shape, y, w):
    A = np.stack([shape, np.ones_like(shape)], axis=1) * w[:, None]
    coef, *_ = np.linalg.lstsq(A, y * w, rcond=None)
    chi2 = float(np.sum((A @ coef - y * w) ** 2))
    return coef, chi2


def compare_models(z, observed, model: LoadingModel, od_target: float = 1.0, sigma=None,
                   clip_bounds=(0.02, 1.0)) -> ModelComparison:
    """Fit scale and offset (and the clip level for blockade) to an observed profile.

    Model profiles are built on the observation grid at the given optical
    depth, with unit cross section per area so that only OD matters.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(observed, dtype=float)
    if np.ptp(y) <= 1e-12 * max(np.max(np.abs(y)), 1e-300):
        raise DegenerateObservation("observed fluorescence profile is flat")
    w = np.ones_like(y) if sigma is None else 1.0 / np.broadcast_to(np.asarray(sigma, float), y.shape)

    def shape(clip, blockade):
        dens = line_density(model, blockade, od_target, 1.0, 1.0, clip, z=z)
        return fluorescence_profile(dens).intensity

    g_shape = shape(1.0, False)
    (gs, go), g_chi2 = _linear_fit(g_shape, y, w)

    def chi2_of(clip):
        return _linear_fit(shape(clip, True), y, w)[1]

    grid = np.linspace(clip_bounds[0], clip_bounds[1], 50)
    vals = [chi2_of(c) for c in grid]
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(chi2_of, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-6})
    clip = float(res.x) if res.fun <= vals[k] else float(grid[k])
    (bs, bo), b_chi2 = _linear_fit(shape(clip, True), y, w)
    return ModelComparison(ModelFit("blockade", bs, bo, clip, b_chi2),
                           ModelFit("gaussian", gs, go, None, g_chi2))


def synthetic_observation(model: LoadingModel, clip: float | None = DEFAULT_CLIP,
                          od_target: float = 1.0, noise: float = 0.02, offset: float = 0.1,
                          seed=0, z=None):
    """Noisy fluorescence built from the clipped (or, with ``clip=None``, pure
    Gaussian) model. Noise is relative to the profile peak."""
    z = model.grid(512) if z is None else np.asarray(z, dtype=float)
    dens = line_density(model, clip is not None, od_target, 1.0, 1.0,
                        clip if clip is not None else 1.0, z=z)
    prof = fluorescence_profile(dens)
    clean = prof.intensity / prof.intensity.max() + offset
    rng = np.random.default_rng(seed)
    return z, clean + noise * rng.standard_normal(len(z)), clean

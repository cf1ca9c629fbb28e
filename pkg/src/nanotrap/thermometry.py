"""Temperature from adiabatic-lowering survival data.

Pipeline: density of states of one site -> integrated Boltzmann
distribution of initial energies -> survival model ``p_max * P(E0(U_low), T)``
where ``E0(U_low)`` is the fitted escape polynomial. Also the harmonic
occupation numbers, localization volume and Lamb-Dicke parameter.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import PchipInterpolator

from .basin import jittered_grid, make_cell
from .constants import CONST, H, HBAR, KB, M_CS
from .errors import DegenerateData, EnergyOutOfRange, FitNonconvergence

N_QUAD = 4001


def dos_prefactor(mass: float = M_CS) -> float:
    """``2 pi (2M)^(3/2) / h^3``."""
    return 2 * np.pi * (2 * mass) ** 1.5 / H**3


def harmonic_dos(energy, frequencies):
    """Analytic 3-D harmonic density of states ``E^2 / (2 h^3 nu_x nu_y nu_z)``."""
    return np.asarray(energy, dtype=float) ** 2 / (2 * H**3 * np.prod(frequencies))


def harmonic_cumulative(x):
    """Fraction of a harmonic Boltzmann gas below ``E0 = x k_B T`` (no truncation)."""
    x = np.asarray(x, dtype=float)
    return 1.0 - np.exp(-x) * (1.0 + x + 0.5 * x * x)


@dataclass
class DensityOfStates:
    """Tabulated ``g(E)`` on ``(0, depth]`` with ``g(0) = 0``.

    ``energies`` are measured from the site minimum (J); ``g`` is in 1/J.
    Interpolation is monotone cubic (PCHIP); Boltzmann integrals use the
    trapezoid rule on ``N_QUAD`` points.
    """

    energies: np.ndarray
    g: np.ndarray
    depth: float
    g_err: np.ndarray | None = None
    _grid: np.ndarray = dc_field(init=False, repr=False)
    _gq: np.ndarray = dc_field(init=False, repr=False)

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        g = np.asarray(self.g, dtype=float)
        if np.any(g < 0):
            raise ValueError("g(E) must be non-negative")
        if e[0] > 0:
            e, g = np.concatenate([[0.0], e]), np.concatenate([[0.0], g])
        self._interp = PchipInterpolator(e, g, extrapolate=True)
        self._grid = np.linspace(0.0, self.depth, N_QUAD)
        self._gq = np.clip(self._interp(self._grid), 0.0, None)

    @classmethod
    def from_function(cls, func, depth, n: int = 400):
        e = np.linspace(0.0, depth, n + 1)[1:]
        return cls(e, func(e), depth)

    def __call__(self, energy):
        return np.clip(self._interp(np.asarray(energy, dtype=float)), 0.0, None)

    def _weights(self, temperature):
        return self._gq * np.exp(-self._grid / (KB * temperature))

    def partition(self, temperature) -> float:
        """``Z(T) = int_0^U0 g(E) exp(-E/k_B T) dE``."""
        return float(integrate.trapezoid(self._weights(temperature), self._grid))

    def cumulative(self, e0, temperature, derivative: bool = False):
        """``P(E0, T)``; with ``derivative`` also ``dP/dT``."""
        w = self._weights(temperature)
        num = integrate.cumulative_trapezoid(w, self._grid, initial=0.0)
        e0 = np.clip(np.asarray(e0, dtype=float), 0.0, self.depth)
        z = num[-1]
        p = np.interp(e0, self._grid, num) / z
        if not derivative:
            return p
        # d/dT of exp(-E/kT) is exp(-E/kT) E / (k T^2)
        wd = w * self._grid / (KB * temperature**2)
        numd = integrate.cumulative_trapezoid(wd, self._grid, initial=0.0)
        dp = np.interp(e0, self._grid, numd) / z - p * numd[-1] / z
        return p, dp


def compute_dos(field, site, energies, n_per_axis: int = 32, replicates: int = 4,
                seed=0, cell=None) -> DensityOfStates:
    """Density of states of one site by stratified Monte-Carlo integration.

    For each energy the box enclosing ``dU <= E`` is covered by a jittered
    ``n_per_axis**3`` grid; ``replicates`` independent jitters give the
    error estimate (standard error of their mean).
    """
    energies = np.asarray(energies, dtype=float)
    if np.any(energies <= 0) or np.any(energies > site.depth):
        raise EnergyOutOfRange("DOS energies must lie in (0, U0]")
    cell = cell or make_cell(field, site)
    rng = np.random.default_rng(seed)
    pref = dos_prefactor(field.mass)
    g = np.empty(len(energies))
    g_err = np.empty(len(energies))
    for i, e in enumerate(energies):
        lo, hi = cell.box(e)
        vol = float(np.prod(hi - lo))
        vals = np.empty(replicates)
        for k in range(replicates):
            u = lo + (hi - lo) * jittered_grid(rng, n_per_axis, cell.dim)
            xyz, jac = cell.to_xyz(u)
            du = cell.delta_u(xyz)
            vals[k] = vol * np.mean(np.sqrt(np.clip(e - du, 0.0, None)) * jac)
        g[i] = pref * vals.mean()
        g_err[i] = pref * vals.std(ddof=1) / np.sqrt(replicates) if replicates > 1 else np.nan
    return DensityOfStates(energies, g, site.depth, g_err)


def cumulative_boltzmann(dos: DensityOfStates, e0, temperature):
    """Fraction of trapped atoms with initial energy below ``e0`` at ``temperature``."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return dos.cumulative(e0, temperature)


# ------------------------------------------------------------------ data
@dataclass
class SurvivalDataset:
    """Survival fraction vs minimal depth ``U_low/U0``."""

    u_low: np.ndarray
    fraction: np.ndarray
    stderr: np.ndarray

    def __post_init__(self):
        self.u_low = np.asarray(self.u_low, dtype=float)
        self.fraction = np.asarray(self.fraction, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if np.any((self.u_low < 0) | (self.u_low > 1)):
            raise ValueError("U_low/U0 must lie in [0, 1]")
        if np.any((self.fraction < 0) | (self.fraction > 1)):
            raise ValueError("fractions must lie in [0, 1]")

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["U_low_over_U0", "fraction", "stderr"])
            for row in zip(self.u_low, self.fraction, self.stderr):
                w.writerow([f"{v:.6g}" for v in row])

    @classmethod
    def from_csv(cls, path):
        cols = ([], [], [])
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                cols[0].append(float(row["U_low_over_U0"]))
                cols[1].append(float(row["fraction"]))
                cols[2].append(float(row["stderr"]))
        return cls(*cols)


def survival_model(u_low, temperature, p_max, polynomial, dos):
    """``p_max * P(E0(U_low), T)`` with ``E0`` from the escape polynomial."""
    e0 = np.clip(polynomial(np.asarray(u_low, dtype=float)), 0.0, 1.0) * dos.depth
    return p_max * dos.cumulative(e0, temperature)


def synthesize_survival(u_low, temperature, p_max, polynomial, dos, noise=0.0, seed=0):
    """Synthetic dataset with additive Gaussian noise of absolute size ``noise``."""
    rng = np.random.default_rng(seed)
    p = survival_model(u_low, temperature, p_max, polynomial, dos)
    obs = np.clip(p + noise * rng.standard_normal(p.shape), 0.0, 1.0)
    err = np.full_like(p, noise if noise > 0 else 1.0)
    return SurvivalDataset(u_low, obs, err)


@dataclass
class TemperatureFit:
    temperature: float
    p_max: float
    covariance: np.ndarray
    residual_norm: float
    zero_temperature_limit: bool = False

    @property
    def temperature_err(self) -> float:
        return float(np.sqrt(self.covariance[0, 0]))

    @property
    def p_max_err(self) -> float:
        return float(np.sqrt(self.covariance[1, 1]))

    def ratio_to_depth(self, depth) -> float:
        """``k_B T / U0``."""
        return KB * self.temperature / depth

    def report(self) -> str:
        c = self.covariance
        lines = [
            f"T_uK = {self.temperature * 1e6:.4f} +- {self.temperature_err * 1e6:.4f}",
            f"p_max = {self.p_max:.4f} +- {self.p_max_err:.4f}",
            f"cov_TT = {c[0, 0]:.6e}",
            f"cov_Tp = {c[0, 1]:.6e}",
            f"cov_pp = {c[1, 1]:.6e}",
            f"residual_norm = {self.residual_norm:.6e}",
            f"zero_temperature_limit = {str(self.zero_temperature_limit).lower()}",
        ]
        return "\n".join(lines) + "\n"


def fit_temperature(dataset: SurvivalDataset, polynomial, dos: DensityOfStates,
                    p_max: float | None = None, t_guess: float | None = None) -> TemperatureFit:
    """Least-squares fit of ``(T, p_max)`` to survival data.

    ``p_max`` is free unless a value is given. The Jacobian is analytic.
    A fit that runs into the lower temperature bound is flagged as the
    zero-temperature limit.
    """
    x, y, s = dataset.u_low, dataset.fraction, dataset.stderr
    if len(x) < 5:
        raise DegenerateData("need at least 5 data points")
    if np.ptp(y) <= 1e-12:
        raise DegenerateData("all survival fractions are equal")
    s = np.where(s > 0, s, 1.0)
    e0 = np.clip(polynomial(x), 0.0, 1.0) * dos.depth
    t_floor = 1e-4 * dos.depth / KB
    free_p = p_max is None

    def unpack(th):
        return th[0] * 1e-6, (th[1] if free_p else p_max)

    def resid(th):
        t, pm = unpack(th)
        return (pm * dos.cumulative(e0, t) - y) / s

    def jac(th):
        t, pm = unpack(th)
        p, dp = dos.cumulative(e0, t, derivative=True)
        cols = [pm * dp * 1e-6 / s]
        if free_p:
            cols.append(p / s)
        return np.stack(cols, axis=1)

    if t_guess is None:
        t_guess = 0.08 * dos.depth / KB
    th0 = [t_guess * 1e6] + ([float(np.clip(y.max(), 0.05, 1.0))] if free_p else [])
    lower = [t_floor * 1e6] + ([0.0] if free_p else [])
    upper = [10 * dos.depth / KB * 1e6] + ([1.5] if free_p else [])
    res = optimize.least_squares(resid, th0, jac=jac, bounds=(lower, upper), method="trf",
                                 xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=500)
    if not res.success:
        raise FitNonconvergence(res.message)
    t, pm = unpack(res.x)
    J = jac(res.x)
    dof = max(len(x) - len(res.x), 1)
    chi2 = float(np.sum(res.fun**2))
    try:
        cov_s = np.linalg.inv(J.T @ J) * max(chi2 / dof, 1e-300)
    except np.linalg.LinAlgError:
        cov_s = np.full((len(res.x), len(res.x)), np.nan)
    cov = np.zeros((2, 2))
    cov[0, 0] = cov_s[0, 0] * 1e-12
    if free_p:
        cov[0, 1] = cov[1, 0] = cov_s[0, 1] * 1e-6
        cov[1, 1] = cov_s[1, 1]
    at_floor = res.x[0] <= t_floor * 1e6 * (1 + 1e-6)
    return TemperatureFit(float(t), float(pm), cov, float(np.sqrt(chi2)), bool(at_floor))


# --------------------------------------------------------------- occupation
@dataclass
class OccupationReport:
    """Thermal occupation of the three trap axes.

    ``widths`` are full ``2 sigma`` extents of the position distribution.
    """

    temperature: float
    occupation: dict
    sigma0: dict
    widths: dict
    volume: float  # m^3
    lamb_dicke: float

    @property
    def volume_cm3(self) -> float:
        return self.volume * 1e6

    def report(self) -> str:
        lines = [f"T_uK = {self.temperature * 1e6:.4f}"]
        for k in ("z", "r", "phi"):
            lines.append(f"n_{k} = {self.occupation[k]:.4f}")
        for k in ("z", "r", "phi"):
            lines.append(f"width_{k}_nm = {self.widths[k] * 1e9:.3f}")
        lines.append(f"volume_cm3 = {self.volume_cm3:.4e}")
        lines.append(f"lamb_dicke = {self.lamb_dicke:.4f}")
        return "\n".join(lines) + "\n"


def mean_occupation(frequency, temperature):
    """Bose occupation ``1 / (exp(h nu / k_B T) - 1)``; zero at ``T = 0``."""
    frequency = np.asarray(frequency, dtype=float)
    if temperature <= 0:
        return np.zeros_like(frequency)
    return 1.0 / np.expm1(H * frequency / (KB * temperature))


def occupation_report(temperature: float, frequencies, mass: float = M_CS,
                      probe_wavelength: float = CONST.lambda_d2) -> OccupationReport:
    """Occupation numbers, widths, volume and Lamb-Dicke parameter.

    Parameters
    ----------
    temperature : float
        K; zero gives the ground state.
    frequencies : dict or TrapSite
        Trap frequencies (Hz) keyed ``"r"``, ``"phi"``, ``"z"``. The
        azimuthal frequency refers to motion along ``r dphi``, so its
        width is already the arc length ``2 r sigma_phi``.
    """
    freqs = getattr(frequencies, "frequencies", frequencies)
    occ = {k: float(mean_occupation(freqs[k], temperature)) for k in ("z", "r", "phi")}
    return localization(occ, freqs, mass, probe_wavelength, temperature)


def localization(occupation: dict, frequencies, mass: float = M_CS,
                 probe_wavelength: float = CONST.lambda_d2,
                 temperature: float = np.nan) -> OccupationReport:
    """Widths, volume and Lamb-Dicke parameter for given mean occupations.

    Same conventions as :func:`occupation_report`, but the occupation
    numbers are inputs rather than thermal values.
    """
    freqs = getattr(frequencies, "frequencies", frequencies)
    if any(freqs[k] <= 0 for k in ("r", "phi", "z")):
        raise ValueError("frequencies must be positive")
    if any(occupation[k] < 0 for k in ("r", "phi", "z")):
        raise ValueError("occupation numbers must be non-negative")
    occ, s0, widths = {}, {}, {}
    for k in ("z", "r", "phi"):
        nu = freqs[k]
        occ[k] = float(occupation[k])
        s0[k] = float(np.sqrt(HBAR / (2 * mass * 2 * np.pi * nu)))
        widths[k] = 2 * s0[k] * np.sqrt(2 * occ[k] + 1)
    volume = widths["z"] * widths["r"] * widths["phi"]
    eta = 2 * np.pi / probe_wavelength * s0["z"]
    return OccupationReport(temperature, occ, s0, widths, volume, float(eta))

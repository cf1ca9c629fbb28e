"""Classical trajectories in a ramped trap and the Monte-Carlo escape map.

The ramp lowers the trap depth to a fraction ``U_low/U0`` and restores it.
For the nanofiber trap only the red-detuned power is ramped, so the depth
fraction is converted to a red-power factor through
:class:`~nanotrap.trap_potential.DepthCalibration`. For the harmonic
oracle the whole potential is scaled and the two coincide.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import integrate, optimize, special

from . import _kernels
from .basin import make_cell
from .errors import (EnergyOutOfRange, FitNonconvergence, NonFiniteState,
                     StepTooLarge)
from .trap_potential import DepthCalibration, HarmonicPotential, PotentialField

#: loss guard: radial excursion beyond this distance from the surface (m)
FAR_GUARD = 30e-6


# ---------------------------------------------------------------- ramp
@dataclass(frozen=True)
class RampSchedule:
    """Depth fraction ``s(t)``: down-ramp, hold at ``u_low``, mirrored up-ramp.

    The down-ramp keeps ``|d nu/dt| / nu**2 = epsilon`` for a harmonic
    frequency ``nu = nu0 * sqrt(s)``, i.e. ``nu(t) = nu0 / (1 + epsilon nu0 t)``.
    """

    u_low: float
    epsilon: float
    nu0: float
    t_down: float
    t_hold: float

    @property
    def t_up(self) -> float:
        return self.t_down

    @property
    def t_end(self) -> float:
        return 2 * self.t_down + self.t_hold

    def depth(self, t):
        t = np.asarray(t, dtype=float)
        k = self.epsilon * self.nu0
        t_rise = self.t_down + self.t_hold
        down = 1.0 / (1.0 + k * np.clip(t, 0.0, self.t_down)) ** 2
        up = 1.0 / (1.0 + k * np.clip(self.t_end - t, 0.0, self.t_down)) ** 2
        s = np.where(t <= self.t_down, down, np.where(t < t_rise, self.u_low, up))
        if self.t_down == 0:
            s = np.ones_like(t)
        return s

    def frequency(self, t):
        return self.nu0 * np.sqrt(self.depth(t))


def build_ramp(u_low: float, epsilon: float = 0.1, nu0: float = 1.0,
               hold: float | None = None) -> RampSchedule:
    """Constant-adiabaticity ramp to the depth fraction ``u_low``.

    Parameters
    ----------
    u_low : float
        Minimal depth fraction, ``0 < u_low <= 1``.
    epsilon : float
        Adiabaticity parameter.
    nu0 : float
        Reference trap frequency at full depth (Hz).
    hold : float, optional
        Hold duration at ``u_low`` (s); defaults to ``10 / nu0``.
    """
    if not 0.0 < u_low <= 1.0:
        raise ValueError("u_low must lie in (0, 1]; the ramp to zero depth never ends")
    if epsilon <= 0 or nu0 <= 0:
        raise ValueError("epsilon and nu0 must be positive")
    t_down = (1.0 / (epsilon * nu0)) * (np.sqrt(1.0 / u_low) - 1.0)
    if u_low == 1.0:
        return RampSchedule(1.0, epsilon, nu0, 0.0, 0.0)
    t_hold = 10.0 / nu0 if hold is None else float(hold)
    return RampSchedule(float(u_low), float(epsilon), float(nu0), float(t_down), t_hold)


def ramp_time_grid(ramp: RampSchedule | None, nu_max, t_end: float,
                   steps_per_period: float = 100.0, n_dense: int = 20001) -> np.ndarray:
    """Time points with ``dt = 1/(steps_per_period * nu_max(s(t)))``.

    ``nu_max`` maps a depth fraction to the largest trap frequency.
    """
    if ramp is None:
        nu = float(nu_max(1.0))
        n = int(np.ceil(t_end * nu * steps_per_period))
        return np.linspace(0.0, t_end, n + 1)
    t = np.unique(np.concatenate([
        np.linspace(0.0, t_end, n_dense),
        [b for b in (ramp.t_down, ramp.t_down + ramp.t_hold) if b < t_end],
    ]))
    rate = steps_per_period * nu_max(ramp.depth(t))
    phase = integrate.cumulative_trapezoid(rate, t, initial=0.0)
    n = max(int(np.ceil(phase[-1])), 1)
    return np.interp(np.linspace(0.0, phase[-1], n + 1), phase, t)


# ---------------------------------------------------------------- state
@dataclass
class TrajectoryState:
    """Batch of classical atoms in the fiber (or oracle) frame.

    ``position`` and ``velocity`` have shape ``(N, dim)``. ``alive`` is
    sticky: once false it never becomes true again.
    """

    position: np.ndarray
    velocity: np.ndarray
    time: float = 0.0
    alive: np.ndarray | None = None
    t_lost: np.ndarray | None = None

    def __post_init__(self):
        self.position = np.atleast_2d(np.asarray(self.position, dtype=float)).copy()
        self.velocity = np.atleast_2d(np.asarray(self.velocity, dtype=float)).copy()
        if self.position.shape != self.velocity.shape:
            raise ValueError("position and velocity shapes differ")
        n = len(self.position)
        if self.alive is None:
            self.alive = np.ones(n, dtype=bool)
        if self.t_lost is None:
            self.t_lost = np.full(n, np.nan)
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.velocity))):
            raise NonFiniteState("non-finite position or velocity")

    def __len__(self):
        return len(self.position)

    def energy(self, field, scale=1.0):
        u = field.potential_xyz(self.position, scale)
        return 0.5 * field.mass * np.sum(self.velocity**2, axis=1) + u


def _scale_and_nu(field, calibration, site=None):
    """Depth-fraction -> potential scale, and depth-fraction -> nu_max."""
    if isinstance(field, HarmonicPotential):
        nu = max(field.frequencies)
        return (lambda s: np.asarray(s, dtype=float)), (lambda s: nu * np.sqrt(np.asarray(s, dtype=float)))
    if calibration is None:
        from .trap_potential import find_trap_sites

        site = site or find_trap_sites(field)[0]
        calibration = DepthCalibration(field, site)
    return calibration.red_scale, calibration.max_frequency


def _propagate_generic(field, pos, vel, times, scales, alive, t_lost, record=False):
    """Velocity Verlet for any potential object (numpy path)."""
    mass = field.mass
    radius = getattr(field, "radius", None)
    idx = np.flatnonzero(alive)
    u, g = field.potential_and_gradient(pos[idx], scales[0])
    acc = -g / mass
    history = [] if record else None
    if record:
        history.append(0.5 * mass * np.sum(vel[idx] ** 2, axis=1) + u)
    for k in range(len(times) - 1):
        if idx.size == 0:
            break
        dt = times[k + 1] - times[k]
        p = pos[idx] + vel[idx] * dt + 0.5 * acc * dt * dt
        u, g = field.potential_and_gradient(p, scales[k + 1])
        anew = -g / mass
        v = vel[idx] + 0.5 * (acc + anew) * dt
        energy = 0.5 * mass * np.sum(v * v, axis=1) + u
        ok = np.isfinite(energy) & (energy <= field.escape_energy(scales[k + 1]))
        if radius is not None:
            rr = np.hypot(p[:, 0], p[:, 1])
            ok &= (rr > radius) & (rr - radius < FAR_GUARD)
        pos[idx] = p
        vel[idx] = v
        lost = idx[~ok]
        alive[lost] = False
        t_lost[lost] = times[k + 1]
        idx = idx[ok]
        acc = anew[ok]
        if record:
            history.append(energy)
    return history


def integrate_trajectory(state: TrajectoryState, field, ramp: RampSchedule | None = None,
                         dt: float | None = None, t_end: float | None = None, *,
                         calibration: DepthCalibration | None = None,
                         steps_per_period: float = 100.0, record_energy: bool = False):
    """Advance ``state`` through ``ramp`` (or a static trap) with velocity Verlet.

    Parameters
    ----------
    state : TrajectoryState
    field : PotentialField or HarmonicPotential
    ramp : RampSchedule, optional
        Depth-fraction schedule; ``None`` keeps the trap static.
    dt : float, optional
        Fixed time step. By default the step adapts to the instantaneous
        largest trap frequency, ``1/(steps_per_period * nu_max)``.
    t_end : float, optional
        Stop time; defaults to the end of the ramp.
    record_energy : bool
        Also return the total energy of the surviving atoms after every
        step (list of arrays). Forces the numpy path.

    Returns
    -------
    TrajectoryState or (TrajectoryState, list)
    """
    to_scale, nu_max = _scale_and_nu(field, calibration)
    if t_end is None:
        if ramp is None:
            raise ValueError("t_end is required without a ramp")
        t_end = ramp.t_end
    if dt is not None:
        n = max(int(np.ceil(t_end / dt - 1e-9)), 1)
        times = np.minimum(np.arange(n + 1) * dt, t_end)
        frac = ramp.depth(times) if ramp is not None else np.ones_like(times)
        if np.any(dt > 1.0 / (50.0 * nu_max(frac)) * (1 + 1e-12)):
            raise StepTooLarge(f"dt={dt:.3e} s exceeds 1/(50 nu_max)")
    else:
        times = ramp_time_grid(ramp, nu_max, t_end, steps_per_period)
        frac = ramp.depth(times) if ramp is not None else np.ones_like(times)
    scales = np.ascontiguousarray(to_scale(frac), dtype=float)
    times = times + state.time

    pos, vel = state.position.copy(), state.velocity.copy()
    alive, t_lost = state.alive.copy(), state.t_lost.copy()
    history = None
    if isinstance(field, PotentialField) and not record_energy:
        idx = np.flatnonzero(alive)
        p = np.ascontiguousarray(pos[idx])
        v = np.ascontiguousarray(vel[idx])
        ok, tl = _kernels.propagate(field.colors, field.radius, field.c3, field.mass,
                                    p, v, times, scales, FAR_GUARD)
        pos[idx], vel[idx] = p, v
        alive[idx] = ok
        t_lost[idx] = tl
    else:
        history = _propagate_generic(field, pos, vel, times, scales, alive, t_lost,
                                     record=record_energy)
    if not (np.all(np.isfinite(pos[alive])) and np.all(np.isfinite(vel[alive]))):
        raise NonFiniteState("integration produced non-finite values")
    out = TrajectoryState(pos, vel, float(times[-1]), alive, t_lost)
    return (out, history) if record_energy else out


# ---------------------------------------------------------------- sampling
def _child_seeds(seed, n):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.spawn(n)


def sample_initial_conditions(field, site, energy: float, n_samples: int, seed,
                              cell=None, batch: int = 64) -> TrajectoryState:
    """Microcanonical initial states at ``energy`` (J above the minimum).

    Positions follow the density ``sqrt(energy - dU)`` inside the site's
    cell, by rejection from the bounding box of the allowed region; the
    velocity has the remaining kinetic energy and an isotropic direction.
    Each sample draws from its own child of ``SeedSequence(seed)``.
    """
    if not 0.0 < energy < site.depth:
        raise EnergyOutOfRange(f"E0 must lie in (0, U0); got {energy:.3e} J")
    cell = cell or make_cell(field, site)
    lo, hi = cell.box(energy)
    jmax = cell.jacobian_max(lo, hi)
    dim = cell.dim
    pos = np.empty((n_samples, dim))
    vel = np.empty((n_samples, dim))
    for i, child in enumerate(_child_seeds(seed, n_samples)):
        rng = np.random.default_rng(child)
        while True:
            u = lo + (hi - lo) * rng.random((batch, dim))
            xyz, jac = cell.to_xyz(u)
            du = cell.delta_u(xyz)
            kin = energy - du
            weight = np.sqrt(np.clip(kin, 0.0, None) / energy) * jac / jmax
            acc = np.flatnonzero(rng.random(batch) < weight)
            if acc.size:
                j = acc[0]
                break
        pos[i] = xyz[j]
        speed = np.sqrt(2 * kin[j] / field.mass)
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        vel[i] = speed * direction
    return TrajectoryState(pos, vel)


# ---------------------------------------------------------------- escape map
@dataclass
class EscapeMapPoint:
    """Survival vs minimal depth at one initial energy (fractions of U0)."""

    e0: float
    u_low: np.ndarray
    survived: np.ndarray
    n_traj: int
    u_esc: float = np.nan
    u_esc_err: float = np.nan
    width: float = np.nan
    fit_ok: bool = False
    message: str = dc_field(default="", repr=False)

    @property
    def p(self) -> np.ndarray:
        return self.survived / self.n_traj

    @property
    def stderr(self) -> np.ndarray:
        p = self.p
        return np.sqrt(p * (1 - p) / self.n_traj)


def _erf_model(x, mu, w):
    """Survival vs ``x = log(U_low/U0)``: an error function centred at ``mu``."""
    return 0.5 * special.erfc((mu - x) / (np.sqrt(2) * w))


def fit_escape_threshold(u_low, survived, n_traj):
    """Error-function fit of survival vs ``log(u_low)``.

    Returns ``(u_esc, u_esc_err, width)`` where ``u_esc`` is the 0.5
    crossing and ``width`` the standard deviation in ``log(u_low)``.
    Binomial weights use the Laplace estimate ``(k+1)/(n+2)`` so that
    points at 0 or 1 keep a finite variance.
    """
    x = np.log(np.asarray(u_low, dtype=float))
    p = np.asarray(survived, dtype=float) / n_traj
    pl = (np.asarray(survived) + 1.0) / (n_traj + 2.0)
    sigma = np.sqrt(pl * (1 - pl) / n_traj)
    if np.all(p < 0.5) or np.all(p > 0.5):
        raise FitNonconvergence("survival does not cross 0.5 on the grid")
    order = np.argsort(x)
    xs, ps = x[order], p[order]
    k = int(np.flatnonzero(ps >= 0.5)[0])
    if k == 0:
        mu0 = xs[0]
    else:
        mu0 = xs[k - 1] + (0.5 - ps[k - 1]) * (xs[k] - xs[k - 1]) / max(ps[k] - ps[k - 1], 1e-12)
    w0 = max((xs[-1] - xs[0]) / 6, 1e-3)

    def resid(th):
        return (_erf_model(x, th[0], th[1]) - p) / sigma

    def jac(th):
        z = (th[0] - x) / (np.sqrt(2) * th[1])
        g = np.exp(-z * z) / np.sqrt(np.pi)
        d_mu = -g / (np.sqrt(2) * th[1])
        d_w = g * z / th[1]
        return np.stack([d_mu, d_w], axis=1) / sigma[:, None]

    res = optimize.least_squares(resid, [mu0, w0], jac=jac, bounds=([-np.inf, 1e-6], [np.inf, np.inf]),
                                 max_nfev=400)
    if not res.success:
        raise FitNonconvergence(res.message)
    try:
        cov = np.linalg.inv(res.jac.T @ res.jac)
        mu_err = float(np.sqrt(cov[0, 0]))
    except np.linalg.LinAlgError:
        mu_err = np.nan
    u_esc = float(np.exp(res.x[0]))
    return u_esc, u_esc * mu_err, float(res.x[1])


def survival_counts(field, site, state: TrajectoryState, u_low_values, epsilon, nu0,
                    calibration, steps_per_period=100.0, hold=None):
    """Number of atoms of ``state`` surviving each lowering in ``u_low_values``.

    Atoms are propagated to the end of the hold only: on the way up only
    the attractive light is raised, so the energy of every atom decreases
    and no further loss is possible.
    """
    counts = np.empty(len(u_low_values), dtype=np.int64)
    for j, x in enumerate(u_low_values):
        if x >= 1.0:
            counts[j] = int(state.alive.sum())
            continue
        ramp = build_ramp(float(x), epsilon, nu0, hold)
        out = integrate_trajectory(state, field, ramp, t_end=ramp.t_down + ramp.t_hold,
                                   calibration=calibration, steps_per_period=steps_per_period)
        counts[j] = int(out.alive.sum())
    return counts


def escape_map(field, site, e0_grid, u_low_grid=8, n_traj: int = 1000, epsilon: float = 0.1,
               seed=0, calibration: DepthCalibration | None = None, *,
               n_pilot: int = 96, spread: float = 4.0, steps_per_period: float = 100.0,
               hold: float | None = None) -> list:
    """Monte-Carlo survival probability ``p(E0, U_low)`` and its 0.5 crossing.

    Parameters
    ----------
    field, site
        Potential and the trapping site the atoms start in.
    e0_grid : array_like
        Initial energies as fractions of the depth.
    u_low_grid : int or array_like
        Either explicit depth fractions (1-D, shared by all energies, or
        2-D with one row per energy) or a number of levels. In the latter
        case a pilot bisection with ``n_pilot`` atoms locates the crossing
        and the levels are spaced geometrically within a factor
        ``spread`` of it.
    n_traj : int
        Trajectories per energy (shared by every level of that energy).
    epsilon : float
        Ramp adiabaticity.
    seed : int or SeedSequence
        Root seed; energy ``i`` uses ``SeedSequence([seed, i])``.
    """
    if n_traj < 100:
        raise ValueError("n_traj must be at least 100")
    e0_grid = np.asarray(e0_grid, dtype=float)
    harmonic = isinstance(field, HarmonicPotential)
    if calibration is None and not harmonic:
        calibration = DepthCalibration(field, site)
    nu0 = site.min_frequency
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(len(e0_grid))
    cell = make_cell(field, site)
    points = []
    for i, e0 in enumerate(e0_grid):
        state = sample_initial_conditions(field, site, e0 * site.depth, n_traj, children[i], cell=cell)
        if np.ndim(u_low_grid) == 0:
            levels = _adaptive_levels(field, site, state, int(u_low_grid), e0, epsilon, nu0,
                                      calibration, n_pilot, spread, steps_per_period, hold)
        else:
            grid = np.asarray(u_low_grid, dtype=float)
            levels = grid[i] if grid.ndim == 2 else grid
        counts = survival_counts(field, site, state, levels, epsilon, nu0, calibration,
                                 steps_per_period, hold)
        pt = EscapeMapPoint(float(e0), np.asarray(levels, dtype=float), counts, n_traj)
        try:
            pt.u_esc, pt.u_esc_err, pt.width = fit_escape_threshold(levels, counts, n_traj)
            pt.fit_ok = True
        except FitNonconvergence as exc:
            pt.message = str(exc)
        points.append(pt)
    return points


def _adaptive_levels(field, site, state, n_levels, e0, epsilon, nu0, calibration,
                     n_pilot, spread, steps_per_period, hold):
    pilot = TrajectoryState(state.position[:n_pilot], state.velocity[:n_pilot])
    floor = calibration.min_fraction if calibration is not None else 1e-6
    lo, hi = np.log(max(floor * 2, 1e-6)), 0.0
    x = np.log(np.clip(0.5 * e0**2, np.exp(lo), 1.0))
    for _ in range(8):
        frac = survival_counts(field, site, pilot, [np.exp(x)], epsilon, nu0, calibration,
                               steps_per_period, hold)[0] / len(pilot)
        if frac >= 0.5:
            hi = x
        else:
            lo = x
        # first probe near the harmonic estimate, then plain bisection
        x = 0.5 * (lo + hi)
    centre = np.exp(x)
    return np.clip(centre * np.geomspace(1 / spread, spread, n_levels), floor, 1.0)


def write_escape_map_csv(points, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["E0_over_U0", "U_low_over_U0", "p", "stderr"])
        for pt in points:
            for x, p, e in zip(pt.u_low, pt.p, pt.stderr):
                w.writerow([f"{pt.e0:.6g}", f"{x:.6g}", f"{p:.6g}", f"{e:.6g}"])


def read_escape_map_csv(path) -> list:
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(float(row["E0_over_U0"]), []).append(
                (float(row["U_low_over_U0"]), float(row["p"]), float(row["stderr"])))
    return rows


# ---------------------------------------------------------------- polynomial
@dataclass
class EscapePolynomial:
    """``E0/U0 = a x**b + c x**d`` with ``x = U_esc/U0``."""

    a: float
    b: float
    c: float
    d: float
    residual_norm: float = 0.0
    residuals: np.ndarray | None = dc_field(default=None, repr=False)

    @property
    def coefficients(self):
        return (self.a, self.b, self.c, self.d)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.a * x**self.b + self.c * x**self.d

    forward = __call__

    def inverse(self, y, x_max: float = 1.0):
        """Root-solve ``forward(x) = y`` on ``(0, x_max]``."""
        y = np.asarray(y, dtype=float)
        scalar = y.ndim == 0
        out = np.empty(y.size)
        top = float(self(x_max))
        for k, yy in enumerate(y.ravel()):
            if yy <= 0:
                out[k] = 0.0
            elif yy >= top:
                out[k] = x_max
            else:
                out[k] = optimize.brentq(lambda x: self(x) - yy, 0.0, x_max, xtol=1e-300, rtol=1e-15)
        return float(out[0]) if scalar else out.reshape(y.shape)


def fit_escape_polynomial(x, y=None, sigma=None, n_starts: int = 12, seed=0) -> EscapePolynomial:
    """Bounded least-squares fit of ``y = a x^b + c x^d``.

    ``x`` may instead be a list of :class:`EscapeMapPoint`; then ``x`` is
    the fitted ``U_esc`` and ``y`` the initial energy (both in units of U0).
    In that case a first unweighted fit provides the local slope through
    which the threshold uncertainties are converted to ``y`` errors, and
    the fit is repeated with those weights. Coefficients are returned with
    ``b <= d``.
    """
    if y is None:
        pts = [p for p in x if p.fit_ok]
        x = np.array([p.u_esc for p in pts])
        y = np.array([p.e0 for p in pts])
        first = _fit_power_pair(x, y, np.ones_like(y), n_starts, seed)
        a, b, c, d = first.coefficients
        slope = a * b * x ** (b - 1) + c * d * x ** (d - 1)
        sigma_x = np.array([p.u_esc_err for p in pts])
        sigma = np.hypot(np.abs(slope) * sigma_x, 1e-6)
    elif sigma is None:
        sigma = np.ones_like(np.asarray(y, dtype=float))
    return _fit_power_pair(np.asarray(x, dtype=float), np.asarray(y, dtype=float),
                           np.asarray(sigma, dtype=float), n_starts, seed)


def _fit_power_pair(x, y, sigma, n_starts, seed):
    if len(x) < 6:
        raise FitNonconvergence("need at least 6 map points")
    if np.any(x <= 0):
        raise FitNonconvergence("escape depths must be positive")

    def model(th, xx):
        return th[0] * xx ** th[1] + th[2] * xx ** th[3]

    def jac(th):
        lx = np.log(x)
        xb, xd = x ** th[1], x ** th[3]
        return np.stack([xb, th[0] * xb * lx, xd, th[2] * xd * lx], axis=1) / sigma[:, None]

    rng = np.random.default_rng(seed)
    lower, upper = [0.0, 1e-3, 0.0, 1e-3], [np.inf, 10.0, np.inf, 10.0]
    starts = [[1.0, 0.5, 0.0, 2.0], [0.5, 0.4, 0.5, 1.0]]
    starts += [[rng.uniform(0, 2), rng.uniform(0.1, 1.5), rng.uniform(0, 2), rng.uniform(0.5, 4)]
               for _ in range(n_starts)]
    best = None
    for th0 in starts:
        res = optimize.least_squares(lambda th: (model(th, x) - y) / sigma, th0, jac=jac,
                                     bounds=(lower, upper), method="trf", xtol=1e-15, ftol=1e-15,
                                     gtol=1e-15, max_nfev=5000)
        if best is None or res.cost < best.cost:
            best = res
    if best is None or not np.all(np.isfinite(best.x)):
        raise FitNonconvergence("polynomial fit failed")
    a, b, c, d = best.x
    if b > d:
        a, b, c, d = c, d, a, b
    r = model((a, b, c, d), x) - y
    return EscapePolynomial(float(a), float(b), float(c), float(d),
                            float(np.linalg.norm(r / sigma)), r)

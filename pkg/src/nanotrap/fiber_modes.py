"""Fundamental HE11 mode of a step-index cylindrical waveguide.

Conventions
-----------
Fields are complex amplitudes with time dependence ``exp(-i omega t)``;
the physical field is ``Re[E exp(-i omega t)]``. A forward mode carries
``exp(+i beta z)``. Components are cylindrical ``(E_r, E_phi, E_z)``.

The circular HE11 mode with angular index ``l = +1`` is

* ``r < a``: ``e_r = i C beta/(2h) [(1-s) J0(hr) - (1+s) J2(hr)]``,
  ``e_phi = -C beta/(2h) [(1-s) J0(hr) + (1+s) J2(hr)]``,
  ``e_z = C J1(hr)``
* ``r > a``: same with ``h -> q``, ``J -> K``, the sign of the ``(1+s)``
  terms flipped, and an overall ``J1(ha)/K1(qa)``,

times ``exp(i phi)``. The quasi-linear mode polarized along ``phi0`` is
``(E_+ exp(-i phi0) + E_- exp(+i phi0))/sqrt(2)``, giving

``E_r = sqrt2 e_r cos(phi-phi0)``, ``E_phi = i sqrt2 e_phi sin(phi-phi0)``,
``E_z = sqrt2 e_z cos(phi-phi0)``.

``pol_angle`` is measured from the x axis. A backward mode flips the sign
of ``E_z`` relative to the transverse components and carries
``exp(-i beta z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, optimize
from scipy.special import jv, jvp, kv, kvp

from .constants import C_LIGHT, EPS0, MU0
from .errors import BracketingFailure, RootNonconvergence

SCAN_POINTS = 2048


def silica_index(wavelength):
    """Refractive index of fused silica (Malitson three-term Sellmeier)."""
    lam2 = (np.asarray(wavelength, dtype=float) * 1e6) ** 2
    n2 = (
        1.0
        + 0.6961663 * lam2 / (lam2 - 0.0684043**2)
        + 0.4079426 * lam2 / (lam2 - 0.1162414**2)
        + 0.8974794 * lam2 / (lam2 - 9.896161**2)
    )
    return np.sqrt(n2)


@dataclass(frozen=True)
class FiberSpec:
    radius: float
    n_core: float
    n_clad: float
    wavelength: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")
        if not (self.n_core > self.n_clad >= 1.0):
            raise ValueError("require n_core > n_clad >= 1")

    @classmethod
    def silica(cls, radius: float, wavelength: float, n_clad: float = 1.0) -> "FiberSpec":
        return cls(radius, float(silica_index(wavelength)), n_clad, wavelength)

    @property
    def k0(self) -> float:
        return 2 * np.pi / self.wavelength

    @property
    def v_number(self) -> float:
        return self.k0 * self.radius * np.sqrt(self.n_core**2 - self.n_clad**2)


def eigenvalue_function(beta, spec: FiberSpec):
    """HE/EH (l = 1) dispersion function; zero at guided-mode constants.

    Returned normalized by the magnitude of its right-hand side so that
    residuals are dimensionless.
    """
    n1, n2, k, a = spec.n_core, spec.n_clad, spec.k0, spec.radius
    beta = np.asarray(beta, dtype=float)
    ha = np.sqrt(n1**2 * k**2 - beta**2) * a
    qa = np.sqrt(beta**2 - n2**2 * k**2) * a
    jterm = jvp(1, ha) / (ha * jv(1, ha))
    kterm = kvp(1, qa) / (qa * kv(1, qa))
    rhs = (1 / ha**2 + 1 / qa**2) * (n1**2 / ha**2 + n2**2 / qa**2)
    return ((jterm + kterm) * (n1**2 * jterm + n2**2 * kterm) - rhs) / rhs


def _beta_from_u(u, spec):
    return np.sqrt((spec.n_core * spec.k0) ** 2 - (u / spec.radius) ** 2)


@dataclass(frozen=True)
class GuidedMode:
    """Solved HE11 mode. ``amplitude`` normalizes the circular mode to 1 W."""

    spec: FiberSpec
    beta: float
    h: float
    q: float
    s: float
    amplitude: float
    pol_angle: float = 0.0
    power: float = 1.0
    residual: float = field(default=0.0, compare=False)

    @property
    def k0(self) -> float:
        return self.spec.k0

    @property
    def n_eff(self) -> float:
        return self.beta / self.spec.k0

    @property
    def omega(self) -> float:
        return C_LIGHT * self.spec.k0

    @property
    def radius(self) -> float:
        return self.spec.radius

    @property
    def outer_ratio(self) -> float:
        """J1(ha)/K1(qa), the field matching factor at the surface."""
        a = self.spec.radius
        return jv(1, self.h * a) / kv(1, self.q * a)

    def with_power(self, power: float) -> "GuidedMode":
        return replace(self, power=float(power))

    def with_pol_angle(self, pol_angle: float) -> "GuidedMode":
        return replace(self, pol_angle=float(pol_angle))

    # -- radial profiles of the circular (l = +1) mode, 1 W normalization
    def radial_profiles(self, r, derivatives=False):
        """Return ``(e_r, e_phi, e_z)`` and optionally their r-derivatives."""
        r = np.asarray(r, dtype=float)
        a, h, q, s, b = self.spec.radius, self.h, self.q, self.s, self.beta
        amp = self.amplitude
        inside = r < a
        x = h * np.where(inside, r, a)
        t = q * np.where(inside, a, r)
        j0, j1, j2 = jv(0, x), jv(1, x), jv(2, x)
        k0_, k1_, k2_ = kv(0, t), kv(1, t), kv(2, t)
        ratio = self.outer_ratio
        cin = b / (2 * h)
        cout = b / (2 * q) * ratio
        e_r = np.where(inside, 1j * cin * ((1 - s) * j0 - (1 + s) * j2),
                       1j * cout * ((1 - s) * k0_ + (1 + s) * k2_))
        e_phi = np.where(inside, -cin * ((1 - s) * j0 + (1 + s) * j2),
                         -cout * ((1 - s) * k0_ - (1 + s) * k2_))
        e_z = np.where(inside, j1, ratio * k1_)
        if not derivatives:
            return amp * e_r, amp * e_phi, amp * e_z
        dj0, dj1, dj2 = -j1, jvp(1, x), j1 - 2 * j2 / x
        dk0, dk1, dk2 = -k1_, kvp(1, t), -k1_ - 2 * k2_ / t
        de_r = np.where(inside, 1j * cin * h * ((1 - s) * dj0 - (1 + s) * dj2),
                        1j * cout * q * ((1 - s) * dk0 + (1 + s) * dk2))
        de_phi = np.where(inside, -cin * h * ((1 - s) * dj0 + (1 + s) * dj2),
                          -cout * q * ((1 - s) * dk0 - (1 + s) * dk2))
        de_z = np.where(inside, h * dj1, ratio * q * dk1)
        return (amp * e_r, amp * e_phi, amp * e_z,
                amp * de_r, amp * de_phi, amp * de_z)

    def _circular_h(self, r):
        """Magnetic profiles (h_r, h_phi, h_z) of the l=+1 mode from curl E."""
        e_r, e_phi, e_z, _, de_phi, de_z = self.radial_profiles(r, derivatives=True)
        r = np.asarray(r, dtype=float)
        iwm = 1j * self.omega * MU0
        b = self.beta
        h_r = (1j * e_z / r - 1j * b * e_phi) / iwm
        h_phi = (1j * b * e_r - de_z) / iwm
        h_z = ((e_phi + r * de_phi) / r - 1j * e_r / r) / iwm
        return h_r, h_phi, h_z

    def field(self, r, phi, z=0.0, direction: int = 1):
        """Quasi-linear electric field ``(E_r, E_phi, E_z)`` at ``(r, phi, z)``."""
        return evaluate_field(self, r, phi, z, direction)

    def magnetic_field(self, r, phi, z=0.0):
        """Quasi-linear magnetic field ``(H_r, H_phi, H_z)`` of the forward mode."""
        h_r, h_phi, h_z = self._circular_h(r)
        psi = np.asarray(phi) - self.pol_angle
        scale = np.sqrt(2 * self.power) * np.exp(1j * self.beta * np.asarray(z))
        # mirror image of the l=+1 solution flips h_r and h_z (axial vector)
        return (scale * 1j * h_r * np.sin(psi),
                scale * h_phi * np.cos(psi),
                scale * 1j * h_z * np.sin(psi))

    def poynting_z(self, r, phi, z=0.0):
        e_r, e_phi, _ = self.field(r, phi, z)
        h_r, h_phi, _ = self.magnetic_field(r, phi, z)
        return 0.5 * np.real(e_r * np.conj(h_phi) - e_phi * np.conj(h_r))

    def intensity_terms(self, r):
        """``(T0, T2, Z)``: ``|E_t|^2 = T0 + T2 cos 2psi``, ``|E_z|^2 = Z (1 + cos 2psi)``.

        Values for the configured power; ``psi = phi - pol_angle``.
        """
        e_r, e_phi, e_z = self.radial_profiles(r)
        ar, ap, az = np.abs(e_r) ** 2, np.abs(e_phi) ** 2, np.abs(e_z) ** 2
        p = self.power
        return p * (ar + ap), p * (ar - ap), p * az

    def intensity(self, r, phi):
        """``|E|^2`` of the forward quasi-linear mode (V^2/m^2)."""
        t0, t2, zz = self.intensity_terms(r)
        c2 = np.cos(2 * (np.asarray(phi) - self.pol_angle))
        return t0 + t2 * c2 + zz * (1 + c2)


def evaluate_field(mode: GuidedMode, r, phi, z=0.0, direction: int = 1):
    """Quasi-linear HE11 field components ``(E_r, E_phi, E_z)``.

    Broadcasts over array inputs; ``direction=-1`` gives the counter-
    propagating mode with the same transverse polarization plane.
    """
    e_r, e_phi, e_z = mode.radial_profiles(r)
    psi = np.asarray(phi) - mode.pol_angle
    phase = np.exp(1j * direction * mode.beta * np.asarray(z))
    scale = np.sqrt(2 * mode.power) * phase
    return (scale * e_r * np.cos(psi),
            scale * 1j * e_phi * np.sin(psi),
            direction * scale * e_z * np.cos(psi))


def field_cartesian(mode: GuidedMode, x, y, z=0.0, direction: int = 1):
    """Field components ``(E_x, E_y, E_z)`` at Cartesian points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.hypot(x, y)
    phi = np.arctan2(y, x)
    e_r, e_phi, e_z = evaluate_field(mode, r, phi, z, direction)
    c, s = np.cos(phi), np.sin(phi)
    return e_r * c - e_phi * s, e_r * s + e_phi * c, e_z


def _radial_integral(func, mode: GuidedMode, decay_lengths: float = 80.0) -> float:
    """``int_0^inf func(r) dr`` split at the surface; the evanescent part is
    integrated over ``decay_lengths / q`` in units of the decay length."""
    a, q = mode.spec.radius, mode.q
    ref = abs(float(func(a))) or 1.0
    opts = dict(epsabs=1e-14, epsrel=1e-12, limit=400)
    inner = integrate.quad(lambda x: func(x * a) / ref, 0.0, 1.0, **opts)[0] * a
    outer = integrate.quad(lambda t: func(a + t / q) / ref, 0.0, decay_lengths, **opts)[0] / q
    return (inner + outer) * ref


def _circular_power(mode: GuidedMode) -> float:
    """Axial power of the l=+1 circular mode (amplitude as stored)."""

    def sz(r):
        e_r, e_phi, _ = mode.radial_profiles(r)
        h_r, h_phi, _ = mode._circular_h(r)
        return 0.5 * np.real(e_r * np.conj(h_phi) - e_phi * np.conj(h_r)) * r

    return 2 * np.pi * _radial_integral(sz, mode)


def solve_he11(spec: FiberSpec, pol_angle: float = 0.0, power: float = 1.0) -> GuidedMode:
    """Solve the HE11 propagation constant and normalize the mode to 1 W.

    The dispersion function is scanned on a uniform grid of the core
    transverse parameter ``u = h a`` spanning ``(0, V)``, which maps into
    ``beta in (n_clad k0, n_core k0)``. Sign changes across poles of
    ``J1`` are rejected by their residual; the largest surviving root is
    HE11.
    """
    v = spec.v_number
    u = np.linspace(0.0, v, SCAN_POINTS + 2)[1:-1]
    beta_grid = _beta_from_u(u, spec)
    with np.errstate(all="ignore"):
        f = eigenvalue_function(beta_grid, spec)
    roots = []
    for i in range(len(u) - 1):
        fa, fb = f[i], f[i + 1]
        if not (np.isfinite(fa) and np.isfinite(fb)) or np.sign(fa) == np.sign(fb):
            continue
        try:
            ur, info = optimize.brentq(
                lambda uu: eigenvalue_function(_beta_from_u(uu, spec), spec),
                u[i], u[i + 1], xtol=1e-14 * v, rtol=1e-15, full_output=True,
            )
        except ValueError:
            continue
        if not info.converged:
            raise RootNonconvergence(f"brentq did not converge in [{u[i]}, {u[i + 1]}]")
        beta = float(_beta_from_u(ur, spec))
        res = abs(float(eigenvalue_function(beta, spec)))
        if res < 1e-8:
            roots.append((ur, beta, res))
    if not roots:
        raise BracketingFailure(f"no HE11 root found for {spec}")
    ur, beta, res = min(roots, key=lambda t: t[0])
    k, a = spec.k0, spec.radius
    h = np.sqrt(spec.n_core**2 * k**2 - beta**2)
    q = np.sqrt(beta**2 - spec.n_clad**2 * k**2)
    ha, qa = h * a, q * a
    s = (1 / ha**2 + 1 / qa**2) / (jvp(1, ha) / (ha * jv(1, ha)) + kvp(1, qa) / (qa * kv(1, qa)))
    raw = GuidedMode(spec, beta, h, q, float(s), 1.0, pol_angle, power, res)
    p1 = _circular_power(raw)
    return replace(raw, amplitude=1.0 / np.sqrt(p1))


def effective_area(mode: GuidedMode, r: float | None = None) -> float:
    """Effective cross-sectional area of the guided mode (m^2).

    With ``r`` given: guided power over the peak (in phi) intensity
    ``eps0 c |E|^2 / 2`` at radius ``r``. Without ``r``: the mode-area
    ``(int S_z dA)^2 / int S_z^2 dA`` of the axial Poynting flux.
    """
    if r is not None:
        peak = max(mode.intensity(r, mode.pol_angle), mode.intensity(r, mode.pol_angle + np.pi / 2))
        return mode.power / (0.5 * EPS0 * C_LIGHT * float(peak))
    unit = mode.with_power(1.0)
    phis = np.linspace(0.0, 2 * np.pi, 64, endpoint=False)

    def sz2(r):
        return np.mean(unit.poynting_z(r, phis) ** 2) * 2 * np.pi * r

    return 1.0 / _radial_integral(sz2, unit)

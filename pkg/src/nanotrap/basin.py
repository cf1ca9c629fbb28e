"""Geometry of a single trapping basin.

Both the microcanonical sampler and the density-of-states integrator need
a box that encloses the region ``U - U_min <= E`` around one site. For the
nanofiber the box lives in cylindrical coordinates ``(r, phi, z)`` limited
to the site's own cell (half-plane in azimuth, one lattice period in z);
for the harmonic oracle it is the exact bounding box of the ellipsoid.
"""

from __future__ import annotations

import numpy as np

from .trap_potential import HarmonicPotential


class HarmonicCell:
    """Cartesian box around the origin of a :class:`HarmonicPotential`."""

    def __init__(self, potential: HarmonicPotential):
        self.potential = potential
        self.dim = potential.dim
        self.u_min = 0.0

    def box(self, energy):
        half = np.sqrt(2 * energy / self.potential.spring)
        return -half, half

    def to_xyz(self, u):
        return u, np.ones(len(u))

    def jacobian_max(self, lo, hi):
        return 1.0

    def delta_u(self, xyz):
        return self.potential.potential_xyz(xyz)


class FiberCell:
    """Cylindrical cell of one nanofiber site.

    The sublevel sets are located on a grid that is geometrically refined
    toward the site (``n_side`` points per half axis), so that both the
    few-nanometre boxes of low energies and the micrometre boxes near the
    depth are resolved.

    Parameters
    ----------
    field : PotentialField
    site : TrapSite
    r_span : float
        Outer radial limit measured from the fiber surface (m). The trap
        is open toward large r, so the cell is truncated there.
    """

    def __init__(self, field, site, r_span=3e-6, n_side=36, scale=1.0):
        self.field = field
        self.site = site
        self.scale = scale
        self.dim = 3
        self.u_min = site.u_min
        r0, phi0, z0 = site.position
        a = field.radius
        period = field.lattice_period
        self.center = np.array([r0, phi0, z0])
        self.limits = (
            np.array([a + 1e-10, phi0 - np.pi / 2, z0 - period / 2]),
            np.array([a + r_span, phi0 + np.pi / 2, z0 + period / 2]),
        )
        axes = []
        for k in range(3):
            lo, hi = self.limits[0][k], self.limits[1][k]
            c = self.center[k]
            fine = min(1e-9, (c - lo) / 10) if k != 1 else 1e-9 / r0
            inner = c - np.geomspace(fine, c - lo, n_side)[::-1]
            outer = c + np.geomspace(fine, hi - c, n_side)
            axes.append(np.concatenate([inner, [c], outer]))
        self._axes = axes
        R, P, Z = np.meshgrid(*axes, indexing="ij")
        xyz = np.stack([R * np.cos(P), R * np.sin(P), Z], axis=-1).reshape(-1, 3)
        du = field.potential_xyz(xyz, scale).reshape(R.shape) - self.u_min
        self._du = np.where(np.isfinite(du), du, np.inf)

    def box(self, energy):
        """Bounding box (lo, hi) of ``{dU <= energy}``, padded by one grid
        cell and clipped to the cell limits."""
        mask = self._du <= energy
        lo, hi = np.empty(3), np.empty(3)
        for k in range(3):
            other = tuple(j for j in range(3) if j != k)
            hit = np.flatnonzero(mask.any(axis=other))
            ax = self._axes[k]
            if hit.size == 0:
                lo[k] = hi[k] = self.center[k]
                continue
            lo[k] = ax[max(hit[0] - 1, 0)]
            hi[k] = ax[min(hit[-1] + 1, len(ax) - 1)]
        return lo, hi

    def to_xyz(self, u):
        r, phi, z = u[:, 0], u[:, 1], u[:, 2]
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1), r

    def jacobian_max(self, lo, hi):
        return hi[0]

    def delta_u(self, xyz):
        du = self.field.potential_xyz(xyz, self.scale) - self.u_min
        return np.where(np.isfinite(du), du, np.inf)


def make_cell(field, site, **kwargs):
    if isinstance(field, HarmonicPotential):
        return HarmonicCell(field)
    return FiberCell(field, site, **kwargs)


def jittered_grid(rng, n_per_axis, dim):
    """One uniform point in each cell of an ``n_per_axis**dim`` grid on
    the unit cube (stratified sampling)."""
    idx = np.indices((n_per_axis,) * dim).reshape(dim, -1).T
    return (idx + rng.random(idx.shape)) / n_per_axis

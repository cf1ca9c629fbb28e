"""Pure numpy implementations of the hot kernels.

Each color is described by one row of a ``(n_colors, NCOL)`` float array
(see :data:`COLOR_FIELDS`). Outside the fiber a color contributes

    U = c_T [g_r^2 (1 + c2) + g_phi^2 (1 - c2)] + c_Z K1^2 (1 + c2)

with ``g_r = A0 K0 + A2 K2``, ``g_phi = A0 K0 - A2 K2`` evaluated at
``q r`` and ``c2 = cos 2(phi - pol)``. A standing wave multiplies the
transverse part by ``4 cos^2(beta z)`` and the axial part by
``4 sin^2(beta z)``.
"""

import math

import numpy as np
from scipy.special import k0, k1

COLOR_FIELDS = ("q", "A0", "A2", "cT", "cZ", "pol", "beta", "standing", "scalable")
NCOL = len(COLOR_FIELDS)

_MASK64 = (1 << 64) - 1


def fiber_potential(colors, radius, c3, xyz, scale=1.0):
    """Potential and Cartesian gradient at points ``xyz`` of shape (N, 3)."""
    xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    r2 = x * x + y * y
    r = np.sqrt(r2)
    cos2p = (x * x - y * y) / r2
    sin2p = 2 * x * y / r2
    u = np.zeros_like(r)
    du_dr = np.zeros_like(r)
    du_dphi = np.zeros_like(r)
    du_dz = np.zeros_like(r)
    for row in np.atleast_2d(colors):
        q, a0, a2, ct, cz, pol, beta, standing, scalable = row[:NCOL]
        f = scale if scalable else 1.0
        if f == 0.0:
            continue
        t = q * r
        kk0, kk1 = k0(t), k1(t)
        kk2 = kk0 + 2 * kk1 / t
        dk0 = -q * kk1
        dk1 = -q * (kk0 + kk1 / t)
        dk2 = -q * (kk1 + 2 * kk2 / t)
        gr = a0 * kk0 + a2 * kk2
        gp = a0 * kk0 - a2 * kk2
        dgr = a0 * dk0 + a2 * dk2
        dgp = a0 * dk0 - a2 * dk2
        c2p, s2p = math.cos(2 * pol), math.sin(2 * pol)
        c2 = cos2p * c2p + sin2p * s2p
        s2 = sin2p * c2p - cos2p * s2p
        trans = ct * (gr * gr * (1 + c2) + gp * gp * (1 - c2))
        axial = cz * kk1 * kk1 * (1 + c2)
        dtrans_dr = ct * (2 * gr * dgr * (1 + c2) + 2 * gp * dgp * (1 - c2))
        daxial_dr = cz * 2 * kk1 * dk1 * (1 + c2)
        dtrans_dphi = ct * (gp * gp - gr * gr) * 2 * s2
        daxial_dphi = -cz * kk1 * kk1 * 2 * s2
        if standing:
            cb = np.cos(beta * z)
            sb = np.sin(beta * z)
            wt, wz = 4 * cb * cb, 4 * sb * sb
            s2b = 4 * beta * 2 * sb * cb
            u += f * (trans * wt + axial * wz)
            du_dr += f * (dtrans_dr * wt + daxial_dr * wz)
            du_dphi += f * (dtrans_dphi * wt + daxial_dphi * wz)
            du_dz += f * (axial - trans) * s2b
        else:
            u += f * (trans + axial)
            du_dr += f * (dtrans_dr + daxial_dr)
            du_dphi += f * (dtrans_dphi + daxial_dphi)
    if c3 != 0.0:
        d = r - radius
        u -= c3 / d**3
        du_dr += 3 * c3 / d**4
    grad = np.empty_like(xyz)
    cphi, sphi = x / r, y / r
    grad[:, 0] = du_dr * cphi - du_dphi * sphi / r
    grad[:, 1] = du_dr * sphi + du_dphi * cphi / r
    grad[:, 2] = du_dz
    return u, grad


def propagate(colors, radius, c3, mass, pos, vel, times, scales, r_far):
    """Velocity-Verlet propagation of a batch of trajectories.

    ``pos`` and ``vel`` (N, 3) are updated in place. A trajectory is lost
    (sticky) when it touches the surface, moves beyond ``radius + r_far``
    or its energy relative to the asymptotic potential becomes positive.
    Returns ``(alive, t_lost)``; ``t_lost`` is NaN for survivors.
    """
    n = pos.shape[0]
    alive = np.ones(n, dtype=bool)
    t_lost = np.full(n, np.nan)
    idx = np.arange(n)
    _, grad = fiber_potential(colors, radius, c3, pos, scales[0])
    acc = -grad / mass
    for k in range(len(times) - 1):
        if idx.size == 0:
            break
        dt = times[k + 1] - times[k]
        p = pos[idx]
        v = vel[idx]
        a = acc
        p = p + v * dt + 0.5 * a * dt * dt
        rr = np.hypot(p[:, 0], p[:, 1])
        ok = (rr > radius) & (rr - radius < r_far)
        u = np.full(idx.size, np.inf)
        anew = np.zeros_like(p)
        if ok.any():
            uo, go = fiber_potential(colors, radius, c3, p[ok], scales[k + 1])
            u[ok] = uo
            anew[ok] = -go / mass
        v = v + 0.5 * (a + anew) * dt
        energy = 0.5 * mass * np.einsum("ij,ij->i", v, v) + u
        keep = ok & (energy <= 0.0)
        pos[idx] = p
        vel[idx] = v
        lost = idx[~keep]
        alive[lost] = False
        t_lost[lost] = times[k + 1]
        idx = idx[keep]
        acc = anew[keep]
    return alive, t_lost


# -- splitmix64 generator shared bit-for-bit with the compiled kernel
def _splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def occupancy(rate, gamma, beta_v, duration, n0, seeds):
    """Direct-method SSA of per-site loading with one- and two-body loss.

    Returns final occupation numbers, one per seed.
    """
    out = np.empty(len(seeds), dtype=np.int64)
    for i, seed in enumerate(seeds):
        state = int(seed) & _MASK64
        n = int(n0[i])
        t = 0.0
        while True:
            a_load = rate
            a_one = gamma * n
            a_pair = 0.5 * beta_v * n * (n - 1)
            a_tot = a_load + a_one + a_pair
            if a_tot <= 0.0:
                break
            state, x = _splitmix64(state)
            u1 = ((x >> 11) + 1) * 2.0**-53
            t += -math.log(u1) / a_tot
            if t > duration:
                break
            state, x = _splitmix64(state)
            u2 = (x >> 11) * 2.0**-53 * a_tot
            if u2 < a_load:
                n += 1
            elif u2 < a_load + a_one:
                n -= 1
            else:
                n -= 2
        out[i] = n
    return out

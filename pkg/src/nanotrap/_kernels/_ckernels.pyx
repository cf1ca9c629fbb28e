# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels`` (same signatures)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, log, INFINITY, NAN
from libc.stdint cimport uint64_t, int64_t
from scipy.special.cython_special cimport k0, k1

cnp.import_array()

cdef inline void _point(const double[:, ::1] colors, int ncolors, double radius,
                        double c3, double x, double y, double z, double scale,
                        double* u_out, double* gx, double* gy, double* gz) noexcept nogil:
    cdef double r2 = x * x + y * y
    cdef double r = sqrt(r2)
    cdef double cos2p = (x * x - y * y) / r2
    cdef double sin2p = 2.0 * x * y / r2
    cdef double u = 0.0, du_dr = 0.0, du_dphi = 0.0, du_dz = 0.0
    cdef double q, a0, a2, ct, cz, pol, beta, f, t
    cdef double kk0, kk1, kk2, dk0, dk1, dk2, gr, gp, dgr, dgp
    cdef double c2, s2, trans, axial, dtr, dax, dtp, dap, cb, sb, wt, wz, d
    cdef int i
    for i in range(ncolors):
        q = colors[i, 0]
        a0 = colors[i, 1]
        a2 = colors[i, 2]
        ct = colors[i, 3]
        cz = colors[i, 4]
        pol = colors[i, 5]
        beta = colors[i, 6]
        f = scale if colors[i, 8] != 0.0 else 1.0
        if f == 0.0:
            continue
        t = q * r
        kk0 = k0(t)
        kk1 = k1(t)
        kk2 = kk0 + 2.0 * kk1 / t
        dk0 = -q * kk1
        dk1 = -q * (kk0 + kk1 / t)
        dk2 = -q * (kk1 + 2.0 * kk2 / t)
        gr = a0 * kk0 + a2 * kk2
        gp = a0 * kk0 - a2 * kk2
        dgr = a0 * dk0 + a2 * dk2
        dgp = a0 * dk0 - a2 * dk2
        c2 = cos2p * cos(2.0 * pol) + sin2p * sin(2.0 * pol)
        s2 = sin2p * cos(2.0 * pol) - cos2p * sin(2.0 * pol)
        trans = ct * (gr * gr * (1.0 + c2) + gp * gp * (1.0 - c2))
        axial = cz * kk1 * kk1 * (1.0 + c2)
        dtr = ct * (2.0 * gr * dgr * (1.0 + c2) + 2.0 * gp * dgp * (1.0 - c2))
        dax = cz * 2.0 * kk1 * dk1 * (1.0 + c2)
        dtp = ct * (gp * gp - gr * gr) * 2.0 * s2
        dap = -cz * kk1 * kk1 * 2.0 * s2
        if colors[i, 7] != 0.0:
            cb = cos(beta * z)
            sb = sin(beta * z)
            wt = 4.0 * cb * cb
            wz = 4.0 * sb * sb
            u += f * (trans * wt + axial * wz)
            du_dr += f * (dtr * wt + dax * wz)
            du_dphi += f * (dtp * wt + dap * wz)
            du_dz += f * (axial - trans) * 8.0 * beta * sb * cb
        else:
            u += f * (trans + axial)
            du_dr += f * (dtr + dax)
            du_dphi += f * (dtp + dap)
    if c3 != 0.0:
        d = r - radius
        u -= c3 / (d * d * d)
        du_dr += 3.0 * c3 / (d * d * d * d)
    u_out[0] = u
    gx[0] = du_dr * x / r - du_dphi * y / r2
    gy[0] = du_dr * y / r + du_dphi * x / r2
    gz[0] = du_dz


def fiber_potential(colors, double radius, double c3, xyz, double scale=1.0):
    cdef double[:, ::1] col = np.ascontiguousarray(np.atleast_2d(colors), dtype=np.float64)
    cdef double[:, ::1] pts = np.ascontiguousarray(np.atleast_2d(xyz), dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0], i
    u = np.empty(n)
    grad = np.empty((n, 3))
    cdef double[::1] uv = u
    cdef double[:, ::1] gv = grad
    cdef int nc = col.shape[0]
    with nogil:
        for i in range(n):
            _point(col, nc, radius, c3, pts[i, 0], pts[i, 1], pts[i, 2], scale,
                   &uv[i], &gv[i, 0], &gv[i, 1], &gv[i, 2])
    return u, grad


def propagate(colors, double radius, double c3, double mass,
              double[:, ::1] pos, double[:, ::1] vel,
              const double[::1] times, const double[::1] scales, double r_far):
    cdef double[:, ::1] col = np.ascontiguousarray(np.atleast_2d(colors), dtype=np.float64)
    cdef int nc = col.shape[0]
    cdef Py_ssize_t n = pos.shape[0], nt = times.shape[0], i, k
    alive_arr = np.ones(n, dtype=np.uint8)
    t_lost_arr = np.full(n, np.nan)
    cdef cnp.uint8_t[::1] alive = alive_arr
    cdef double[::1] t_lost = t_lost_arr
    cdef double x, y, z, vx, vy, vz, ax, ay, az, nx, ny, nz, dt, u, gx, gy, gz, rr, inv_m
    inv_m = 1.0 / mass
    with nogil:
        for i in range(n):
            x = pos[i, 0]; y = pos[i, 1]; z = pos[i, 2]
            vx = vel[i, 0]; vy = vel[i, 1]; vz = vel[i, 2]
            _point(col, nc, radius, c3, x, y, z, scales[0], &u, &gx, &gy, &gz)
            ax = -gx * inv_m; ay = -gy * inv_m; az = -gz * inv_m
            for k in range(nt - 1):
                dt = times[k + 1] - times[k]
                x = x + vx * dt + 0.5 * ax * dt * dt
                y = y + vy * dt + 0.5 * ay * dt * dt
                z = z + vz * dt + 0.5 * az * dt * dt
                rr = sqrt(x * x + y * y)
                if rr <= radius or rr - radius >= r_far:
                    alive[i] = 0
                    t_lost[i] = times[k + 1]
                    break
                _point(col, nc, radius, c3, x, y, z, scales[k + 1], &u, &gx, &gy, &gz)
                nx = -gx * inv_m; ny = -gy * inv_m; nz = -gz * inv_m
                vx = vx + 0.5 * (ax + nx) * dt
                vy = vy + 0.5 * (ay + ny) * dt
                vz = vz + 0.5 * (az + nz) * dt
                ax = nx; ay = ny; az = nz
                if 0.5 * mass * (vx * vx + vy * vy + vz * vz) + u > 0.0:
                    alive[i] = 0
                    t_lost[i] = times[k + 1]
                    break
            pos[i, 0] = x; pos[i, 1] = y; pos[i, 2] = z
            vel[i, 0] = vx; vel[i, 1] = vy; vel[i, 2] = vz
    return alive_arr.astype(bool), t_lost_arr


cdef inline uint64_t _splitmix64(uint64_t* state) noexcept nogil:
    state[0] += <uint64_t>0x9E3779B97F4A7C15
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


def occupancy(double rate, double gamma, double beta_v, double duration, n0, seeds):
    cdef const uint64_t[::1] sd = np.ascontiguousarray(seeds, dtype=np.uint64)
    cdef const int64_t[::1] start = np.ascontiguousarray(n0, dtype=np.int64)
    cdef Py_ssize_t m = sd.shape[0], i
    out_arr = np.empty(m, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef uint64_t state, xr
    cdef int64_t n
    cdef double t, a_load, a_one, a_pair, a_tot, u1, u2
    with nogil:
        for i in range(m):
            state = sd[i]
            n = start[i]
            t = 0.0
            while True:
                a_load = rate
                a_one = gamma * n
                a_pair = 0.5 * beta_v * n * (n - 1)
                a_tot = a_load + a_one + a_pair
                if a_tot <= 0.0:
                    break
                xr = _splitmix64(&state)
                u1 = <double>((xr >> 11) + 1) * 1.1102230246251565e-16
                t += -log(u1) / a_tot
                if t > duration:
                    break
                xr = _splitmix64(&state)
                u2 = <double>(xr >> 11) * 1.1102230246251565e-16 * a_tot
                if u2 < a_load:
                    n += 1
                elif u2 < a_load + a_one:
                    n -= 1
                else:
                    n -= 2
            out[i] = n
    return out_arr

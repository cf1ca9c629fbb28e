"""Physical constants (SI) used throughout the package.

Fundamental constants come from :mod:`scipy.constants` (CODATA 2018).
Cesium line data: D. A. Steck, "Cesium D Line Data" (rev. 2.2.1).
"""

from dataclasses import dataclass

from scipy import constants as _c


@dataclass(frozen=True)
class PhysicalConstants:
    h: float = _c.h
    hbar: float = _c.hbar
    k_B: float = _c.k
    c: float = _c.c
    epsilon_0: float = _c.epsilon_0
    mu_0: float = _c.mu_0
    mass_cs: float = 2.20695e-25           # kg, 132.905 u
    lambda_d1: float = 894.593e-9         # m
    lambda_d2: float = 852.347e-9         # m
    gamma_d1: float = 2.8743e7              # s^-1, 2pi x 4.575 MHz
    gamma_d2: float = 3.2889e7              # s^-1, 2pi x 5.234 MHz


CONST = PhysicalConstants()

H = CONST.h
HBAR = CONST.hbar
KB = CONST.k_B
C_LIGHT = CONST.c
EPS0 = CONST.epsilon_0
MU0 = CONST.mu_0
M_CS = CONST.mass_cs

#: micro-Kelvin expressed as an energy
UK = 1e-6 * KB

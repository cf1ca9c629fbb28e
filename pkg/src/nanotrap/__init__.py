"""Simulation toolkit for a two-color nanofiber-based atom trap.

Submodules: :mod:`fiber_modes`, :mod:`trap_potential`, :mod:`polarization`,
:mod:`dynamics_mc`, :mod:`thermometry`, :mod:`loading_fluorescence` and the
command-line front end :mod:`cli`.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND  # noqa: E402,F401

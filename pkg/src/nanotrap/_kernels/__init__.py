"""Hot kernels: compiled extension when available, numpy fallback otherwise.

Set ``NANOTRAP_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("NANOTRAP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

fiber_potential = _impl.fiber_potential
propagate = _impl.propagate
occupancy = _impl.occupancy

COLOR_FIELDS = _pykernels.COLOR_FIELDS
NCOL = _pykernels.NCOL

__all__ = ["BACKEND", "fiber_potential", "propagate", "occupancy", "COLOR_FIELDS", "NCOL"]

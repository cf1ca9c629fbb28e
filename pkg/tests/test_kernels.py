import numpy as np
import pytest

from nanotrap import _kernels
from nanotrap._kernels import _pykernels

try:
    from nanotrap._kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def test_backend_flag():
    assert _kernels.BACKEND in ("cython", "python")


@needs_ext
def test_potential_backends_agree(ref_field, rng):
    pts = np.column_stack([rng.uniform(-8e-7, 8e-7, (500, 2)), rng.uniform(0, 1e-6, 500)])
    pts = pts[np.hypot(pts[:, 0], pts[:, 1]) > 2.6e-7]
    args = ref_field.kernel_args()
    for scale in (1.0, 0.37):
        u1, g1 = _pykernels.fiber_potential(*args, pts, scale)
        u2, g2 = _ckernels.fiber_potential(*args, np.ascontiguousarray(pts), scale)
        assert np.allclose(u1, u2, rtol=1e-12, atol=0)
        assert np.allclose(g1, g2, rtol=1e-11, atol=1e-12 * np.abs(g1).max())


@needs_ext
def test_propagate_backends_agree(ref_field, ref_site):
    rng = np.random.default_rng(1)
    pos0 = ref_site.xyz + rng.normal(scale=10e-9, size=(16, 3))
    vel0 = rng.normal(scale=0.05, size=(16, 3))
    times = np.linspace(0, 20e-6, 801)
    scales = np.linspace(1.0, 0.3, 801)
    out = []
    for mod in (_pykernels, _ckernels):
        p, v = pos0.copy(), vel0.copy()
        alive, tl = mod.propagate(*ref_field.kernel_args(), ref_field.mass, p, v, times, scales, 30e-6)
        out.append((p, v, alive))
    assert np.array_equal(out[0][2], out[1][2])
    assert np.allclose(out[0][0], out[1][0], rtol=1e-9, atol=1e-18)
    assert np.allclose(out[0][1], out[1][1], rtol=1e-8, atol=1e-12)


@needs_ext
def test_occupancy_backends_bit_identical():
    seeds = np.random.SeedSequence(5).generate_state(200, dtype=np.uint64)
    n0 = np.zeros(200, dtype=np.int64)
    a = _pykernels.occupancy(800.0, 1.0, 3.7e5, 0.05, n0, seeds)
    b = _ckernels.occupancy(800.0, 1.0, 3.7e5, 0.05, n0, seeds)
    assert np.array_equal(np.asarray(a), np.asarray(b))

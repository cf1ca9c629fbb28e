"""Compare the compiled kernels with the numpy fallback.

Run from the repository root::

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is timed on identical inputs with both backends and the
outputs are checked for agreement before any timing is reported.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from nanotrap._kernels import _pykernels
from nanotrap.trap_potential import build_potential, find_trap_sites

try:
    from nanotrap._kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _cases(field, site):
    rng = np.random.default_rng(0)
    args = field.kernel_args()

    pts = np.column_stack([rng.uniform(-8e-7, 8e-7, (40_000, 2)), rng.uniform(0, 1e-6, 40_000)])
    pts = np.ascontiguousarray(pts[np.hypot(pts[:, 0], pts[:, 1]) > 2.6e-7][:20_000])

    def potential(mod):
        return mod.fiber_potential(*args, pts, 1.0)[0]

    pos0 = site.xyz + rng.normal(scale=10e-9, size=(64, 3))
    vel0 = rng.normal(scale=0.05, size=(64, 3))
    times = np.linspace(0, 40e-6, 2001)
    scales = np.linspace(1.0, 0.5, 2001)

    def propagate(mod):
        p, v = pos0.copy(), vel0.copy()
        mod.propagate(*args, field.mass, p, v, times, scales, 30e-6)
        return p

    seeds = np.random.SeedSequence(1).generate_state(2000, dtype=np.uint64)
    n0 = np.zeros(len(seeds), dtype=np.int64)

    def occupancy(mod):
        return np.asarray(mod.occupancy(1e3, 1.0, 3.7e5, 0.05, n0, seeds))

    return {
        f"fiber_potential ({len(pts)} points)": potential,
        "propagate (64 trajectories x 2000 steps)": propagate,
        f"occupancy ({len(seeds)} sites)": occupancy,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels are not built; only the fallback can be timed")
    field = build_potential()
    site = find_trap_sites(field)[0]
    print(f"{'kernel':44s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s}")
    for name, fn in _cases(field, site).items():
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat))
        if _ckernels is None:
            print(f"{name:44s} {t_py:11.4f} {'-':>11s} {'-':>8s}")
            continue
        a, b = fn(_pykernels), fn(_ckernels)
        if not np.allclose(a, b, rtol=1e-8, atol=0):
            raise SystemExit(f"{name}: backends disagree")
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat))
        print(f"{name:44s} {t_py:11.4f} {t_c:11.4f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()

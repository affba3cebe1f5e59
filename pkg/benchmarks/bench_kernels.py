"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are imported directly, so no environment variable is needed.
Each case checks that the two backends agree before timing them.
"""

import argparse
import timeit

import numpy as np

from odolab import _pykernels
from odolab.sandpile import WeightDistribution, draw_weights, init_configuration
from odolab.torus import TorusLattice, neighbor_table

try:
    from odolab import _ckernels
except ImportError:
    _ckernels = None


def _stabilize_case(d, n, batch=None):
    lat = TorusLattice(d, n)
    nbr = neighbor_table(lat)
    masses = [
        init_configuration(draw_weights(lat, WeightDistribution(), (0, t)), lat).mass.ravel()
        for t in range(batch or 1)
    ]

    if batch is None:
        def run(mod):
            s = masses[0].copy()
            odo = np.zeros_like(s)
            mod.stabilize_run(s, odo, nbr, 1e-10, 10**7)
            return odo
    else:
        def run(mod):
            S = np.array(masses)
            ODO = np.zeros_like(S)
            mod.stabilize_batch(S, ODO, nbr, 1e-10, 10**7)
            return ODO
    return run


def _cosine_case(d, M):
    theta = np.full(d, 0.137)

    def run(mod):
        return mod.lattice_cosine_sum(theta, M, 4.0, 0.0)
    return run


CASES = [
    ("stabilize_run d=1 n=64", _stabilize_case(1, 64)),
    ("stabilize_run d=2 n=32", _stabilize_case(2, 32)),
    ("stabilize_batch d=1 n=32 x64", _stabilize_case(1, 32, batch=64)),
    ("lattice_cosine_sum d=1 M=1e4", _cosine_case(1, 10**4)),
    ("lattice_cosine_sum d=3 M=60", _cosine_case(3, 60)),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the numpy fallback is available")
    print(f"{'case':32s} {'numpy [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, run in CASES:
        t_py = min(timeit.repeat(lambda: run(_pykernels), number=1, repeat=args.repeat))
        if _ckernels is None:
            print(f"{name:32s} {1e3 * t_py:12.2f} {'-':>12s} {'-':>8s}")
            continue
        diff = np.max(np.abs(np.asarray(run(_pykernels)) - np.asarray(run(_ckernels))))
        assert diff <= 1e-9, f"{name}: backends disagree by {diff}"
        t_c = min(timeit.repeat(lambda: run(_ckernels), number=1, repeat=args.repeat))
        print(f"{name:32s} {1e3 * t_py:12.2f} {1e3 * t_c:12.2f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()

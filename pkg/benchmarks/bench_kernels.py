"""Compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 2000] [--repeat 3]

Times the three hot loops (pair sum, rank-one sum, resolvent sweep) at
sizes typical of a moment sweep and reports the speed-up of each
available implementation over the fallback.
"""
import argparse
import timeit

import numpy as np

from qdbounds import _backend


def cases(n: int):
    rng = np.random.default_rng(0)
    lam = np.sort(rng.uniform(-3, 3, n))
    Z = rng.normal(size=(n, 4))
    B = Z @ Z.T
    u = rng.normal(size=n) + 1j * rng.normal(size=n)
    T = np.geomspace(100, 1000, 9)
    E = np.linspace(-3, 3, 600)
    return {
        "abel_pair_sum": lambda impl: _backend.abel_pair_sum(lam, B, T, impl=impl),
        "abel_rank1": lambda impl: _backend.abel_rank1(lam, u, T, impl=impl),
        "resolvent_sq": lambda impl: _backend.resolvent_sq(lam, u, E, 0.01, impl=impl),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000, help="number of eigenvalues")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    impls = _backend.implementations()
    print(f"n = {args.n}; implementations: {', '.join(sorted(impls))}")
    print(f"{'kernel':<16}{'impl':<10}{'best s':>10}{'speed-up':>10}")
    for name, fn in cases(args.n).items():
        times = {k: min(timeit.repeat(lambda: fn(m), number=1, repeat=args.repeat)) for k, m in impls.items()}
        for k in sorted(times):
            print(f"{name:<16}{k:<10}{times[k]:>10.4f}{times['python'] / times[k]:>10.1f}")


if __name__ == "__main__":
    main()

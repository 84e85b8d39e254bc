"""Compiled vs pure-numpy Dykstra kernels on the benchmark feasible sets.

    python3 benchmarks/bench_kernels.py [--batch 256] [--k 10] [--repeat 5]

Prints one line per problem with the best-of-repeat time of each backend,
the speedup, and the max abs difference between the two outputs.
"""

import argparse
import time

import numpy as np

from projectnet import kernels
from projectnet.problems import build_problem

CASES = [
    ("matching", {"n": 10}),
    ("shortest-path", {"side": 5}),
    ("capacitated-newsvendor", {"K": 20, "C": 30.0}),
    ("electricity", {"horizon": 24}),
    ("electricity", {"horizon": 72}),
    ("toy-polytope", {}),
]


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    try:
        kernels.get_backend("cython")
    except ImportError:
        print("compiled extension not built; only the numpy backend is available")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'problem':<36}{'dim':>5}{'python s':>12}{'cython s':>12}{'speedup':>9}{'max diff':>11}")
    for kind, params in CASES:
        p = build_problem(kind, **params)
        plan = p.plan(args.k)
        W = 3.0 * rng.standard_normal((args.batch, p.dim))
        tp, xp = best_time(lambda: plan.run(W, backend="python")[0], args.repeat)
        tc, xc = best_time(lambda: plan.run(W, backend="cython")[0], args.repeat)
        label = kind + "".join(f" {k}={v}" for k, v in params.items())
        print(f"{label:<36}{p.dim:>5}{tp:>12.5f}{tc:>12.5f}{tp / tc:>9.1f}{np.max(np.abs(xp - xc)):>11.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Time the compiled and pure-Python kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import timeit

import numpy as np

from formlab import kernels


def cases(rng):
    n = 2000
    dx = rng.uniform(0.01, 0.2, n)
    V = rng.uniform(-5, 20, n)
    w = np.where(rng.random(n) < 0.2, rng.uniform(-2, 2, n), 0.0)
    lams = np.linspace(-5, 40, 200)
    m = 20000
    diag = rng.uniform(2, 4, m)
    off = rng.uniform(-1, 1, m - 1)
    mass = np.ones(m)
    return {
        "transfer_products (2000 cells x 200 energies)":
            lambda impl: kernels.transfer_products(dx, V, w, lams, impl=impl),
        "shoot_frame (2000 cells)":
            lambda impl: kernels.shoot_frame(dx, V, w, 3.0, np.eye(2), impl=impl),
        "ldl_inertia (n = 20000)":
            lambda impl: kernels.ldl_inertia(diag, off, mass, 3.0, impl=impl),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    impls = kernels.implementations()
    if "compiled" not in impls:
        print("compiled extension not available; timing the fallback only")
    print(f"{'kernel':48s}" + "".join(f"{name:>12s}" for name in impls) + "     speedup")
    for label, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for name, impl in impls.items():
            fn(impl)
            times[name] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
        row = f"{label:48s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times.values())
        if "compiled" in times:
            row += f"  {times['python'] / times['compiled']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()

"""Compare the compiled backend against the numpy fallback on the hot
kernels at training-realistic sizes.

Usage: python benchmarks/bench_backends.py [--batch 512] [--repeats 30]
"""
import argparse
import time

import numpy as np

from revgen._backend import _numpy_impl

try:
    from revgen._backend import _fused
except ImportError:
    _fused = None

GMM_BWS = (0.1, 0.5, 1.0, 2.0, 5.0)
SPIN_BWS = (1.5, 3.0, 6.0)


def timeit(fn, repeats):
    fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1000.0


def workloads(batch):
    g = np.random.default_rng(0)
    s2 = g.standard_normal((batch, 4))
    sp2 = s2 + 0.1 * g.standard_normal((batch, 4))
    spins = (g.integers(0, 2, (batch, 9)) * 2 - 1).astype(np.float64)
    spins_next = spins.copy()
    flip = g.integers(0, 9, batch)
    spins_next[np.arange(batch), flip] *= -1
    hx = 2 * g.standard_normal((batch, 1))
    hxp = hx + 0.3 * g.standard_normal((batch, 1))
    hk = g.integers(0, 3, batch)
    hkp = g.integers(0, 3, batch)

    raw = (g.integers(0, 2, (batch, 9)) * 2 - 1).astype(np.int8)
    nbr = np.zeros((9, 4), dtype=np.int64)
    for r in range(3):
        for c in range(3):
            i = 3 * r + c
            nbr[i] = (3 * r + (c + 1) % 3, 3 * r + (c - 1) % 3,
                      3 * ((r + 1) % 3) + c, 3 * ((r - 1) % 3) + c)
    m = 5
    move_u = g.random((m, batch))
    sites = g.integers(0, 9, (m, batch))
    logu = np.log(g.random((m, batch)))

    return {
        "pair loss+cot (gmm pairs)": lambda impl: impl.pair_mmd_cotangents(
            s2, sp2, GMM_BWS, 0.5, 1.4, True),
        "pair loss+cot (spin pairs)": lambda impl: impl.pair_mmd_cotangents(
            spins, spins_next, SPIN_BWS, 0.0, 0.0, True),
        "hybrid loss+cot": lambda impl: impl.hybrid_pair_mmd_cotangents(
            hx, hxp, hk, hkp, 3, GMM_BWS, True),
        "ising evolve (m=5)": lambda impl: impl.evolve_ising_mixture(
            raw, nbr, 0.2, 1.0, 0.0, 0.1, move_u, sites, logu),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=512)
    ap.add_argument("--repeats", type=int, default=30)
    args = ap.parse_args()

    jobs = workloads(args.batch)
    print(f"batch = {args.batch}, repeats = {args.repeats}")
    header = f"{'workload':<28} {'numpy (ms)':>12} {'cython (ms)':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, job in jobs.items():
        t_np = timeit(lambda: job(_numpy_impl), args.repeats)
        if _fused is None:
            print(f"{name:<28} {t_np:>12.2f} {'n/a':>12} {'n/a':>9}")
            continue
        t_cy = timeit(lambda: job(_fused), args.repeats)
        print(f"{name:<28} {t_np:>12.2f} {t_cy:>12.2f} {t_np / t_cy:>8.1f}x")
    if _fused is None:
        print("compiled backend not available; showing numpy fallback only")


if __name__ == "__main__":
    main()

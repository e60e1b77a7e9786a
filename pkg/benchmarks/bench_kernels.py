"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run:

    python benchmarks/bench_kernels.py [--chains N] [--steps N]

The numpy path can also be forced package-wide with POLYKIN_NO_NUMBA=1;
here both implementations are invoked directly so one process can time
the pair side by side (after verifying they agree).
"""

import argparse
import math
import time

import numpy as np

import polykin._kernels as kernels
from polykin.chain_mc import increment_table


def time_fn(fn, *args, repeat=3):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_chain_sweep(n_chains, n_steps, eps=1e-3, seed=0):
    table = increment_table(eps)
    rng = np.random.default_rng(seed)
    draws = [rng.random(n_chains) for _ in range(n_steps)]

    def run(sweep):
        x1 = np.zeros(n_chains)
        x2 = np.full(n_chains, 0.05)
        th = np.full(n_chains, -math.pi / 2)
        trapped = np.zeros(n_chains, dtype=np.int8)
        md = np.zeros(n_chains)
        for u in draws:
            sweep(x1, x2, th, trapped, md, u, eps, table)
        return x1, x2, th

    if kernels.HAVE_NUMBA:
        run(kernels._chain_sweep_nb)  # compile outside the timing
        out_nb = run(kernels._chain_sweep_nb)
        out_py = run(kernels._chain_sweep_py)
        for a, b in zip(out_nb, out_py):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)
        t_nb = time_fn(lambda: run(kernels._chain_sweep_nb))
        t_py = time_fn(lambda: run(kernels._chain_sweep_py))
        rate = n_chains * n_steps / t_nb / 1e6
        print(f"chain_sweep   {n_chains} chains x {n_steps} steps: "
              f"numba {t_nb:.3f}s ({rate:.0f} Msteps/s), numpy {t_py:.3f}s, "
              f"speedup {t_py / t_nb:.1f}x")
    else:
        t_py = time_fn(lambda: run(kernels._chain_sweep_py))
        print(f"chain_sweep   numpy only: {t_py:.3f}s")


def bench_transport(n1=96, n2=129, nk=64, n_steps=40, seed=1):
    rng = np.random.default_rng(seed)
    f = rng.random((n1, n2, nk))
    f[:, 0, :] = 0.0
    theta = -math.pi + 2 * math.pi / nk * np.arange(nk)
    s1 = 0.9 * np.cos(theta)
    s2 = 0.9 * np.sin(theta)

    def run(shift):
        g = f
        for _ in range(n_steps):
            g, _, _ = shift(g, s1, s2)
        return g

    if kernels.HAVE_NUMBA:
        fc = np.ascontiguousarray(f)
        run_nb = lambda: [kernels._transport_shift_nb(fc, s1, s2)
                          for _ in range(n_steps)]
        run_nb()
        out_nb = kernels._transport_shift_nb(fc, s1, s2)
        out_py = kernels._transport_shift_py(f, s1, s2)
        np.testing.assert_allclose(out_nb[0], out_py[0], rtol=1e-13,
                                   atol=1e-15)
        t_nb = time_fn(run_nb)
        t_py = time_fn(lambda: [kernels._transport_shift_py(f, s1, s2)
                                for _ in range(n_steps)])
        cells = n1 * n2 * nk * n_steps / 1e6
        print(f"transport     {n1}x{n2}x{nk} x {n_steps} steps: "
              f"numba {t_nb:.3f}s ({cells / t_nb:.0f} Mcells/s), "
              f"numpy {t_py:.3f}s, speedup {t_py / t_nb:.1f}x")
    else:
        t_py = time_fn(lambda: [kernels._transport_shift_py(f, s1, s2)
                                for _ in range(n_steps)])
        print(f"transport     numpy only: {t_py:.3f}s")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--chains", type=int, default=200000)
    ap.add_argument("--steps", type=int, default=200)
    args = ap.parse_args()
    print(f"numba available: {kernels.HAVE_NUMBA} "
          f"(active: {kernels.USE_NUMBA})")
    bench_chain_sweep(args.chains, args.steps)
    bench_transport()


if __name__ == "__main__":
    main()

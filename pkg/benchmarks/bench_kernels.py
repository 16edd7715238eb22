"""Benchmark the numba kernels against the pure-numpy fallback.

Runs every dual-implementation contraction kernel on training-sized inputs,
reports per-call time for both backends, the speedup, and the max absolute
difference between their outputs.

Usage:
    python benchmarks/bench_kernels.py [--batch 64] [--vars 11] [--width 10]
                                       [--steps 10] [--repeat 300]
"""

import argparse
import time

import numpy as np

from mvlstm import kernels as K


def time_call(fn, args, repeat):
    fn(*args)  # warm-up (numba compiles here)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--vars", type=int, default=11)
    parser.add_argument("--width", type=int, default=10)
    parser.add_argument("--steps", type=int, default=10)
    parser.add_argument("--repeat", type=int, default=300)
    args = parser.parse_args()

    if "numba" not in K.IMPLS:
        print("numba backend unavailable (MVLSTM_PURE_NUMPY set or numba "
              "missing); nothing to compare")
        return

    B, N, d, Tm = args.batch, args.vars, args.width, args.steps - 1
    rng = np.random.default_rng(0)
    w = rng.standard_normal((N, d, d))
    h = rng.standard_normal((B, N, d))
    g = rng.standard_normal((B, N, d))
    ws = rng.standard_normal((N, d))
    wv = rng.standard_normal(d)
    x = rng.standard_normal((B, N))
    gn = rng.standard_normal((B, N))
    a = K.IMPLS["numpy"]["softmax_last"](rng.standard_normal((B, N, Tm)))
    hs = rng.standard_normal((Tm, B, N, d))
    e = rng.standard_normal((B, N, Tm))

    cases = [
        ("tdot", (w, h)),
        ("tdot_dw", (g, h)),
        ("tdot_dh", (g, w)),
        ("rowdot", (ws, h)),
        ("rowdot_dw", (gn, h)),
        ("rowdot_dh", (gn, ws)),
        ("shared_dot", (wv, h)),
        ("var_product", (ws, x)),
        ("var_product_dw", (g, x)),
        ("var_product_dx", (g, ws)),
        ("attn_mix", (a, hs)),
        ("attn_mix_da", (g, hs)),
        ("attn_mix_dh", (g, a)),
        ("softmax_last", (e,)),
        ("softmax_last_vjp", (a, e)),
    ]

    print(f"active backend: {K.BACKEND}   "
          f"(B={B}, N={N}, d={d}, steps={args.steps}, repeat={args.repeat})")
    header = f"{'kernel':<18} {'numpy us':>10} {'numba us':>10} {'speedup':>8} {'max|diff|':>10}"
    print(header)
    print("-" * len(header))
    total_np = total_nb = 0.0
    for name, arrs in cases:
        t_np = time_call(K.IMPLS["numpy"][name], arrs, args.repeat)
        t_nb = time_call(K.IMPLS["numba"][name], arrs, args.repeat)
        diff = float(np.max(np.abs(K.IMPLS["numpy"][name](*arrs)
                                   - K.IMPLS["numba"][name](*arrs))))
        total_np += t_np
        total_nb += t_nb
        print(f"{name:<18} {t_np * 1e6:>10.2f} {t_nb * 1e6:>10.2f} "
              f"{t_np / t_nb:>7.2f}x {diff:>10.2e}")
    print("-" * len(header))
    print(f"{'total':<18} {total_np * 1e6:>10.2f} {total_nb * 1e6:>10.2f} "
          f"{total_np / total_nb:>7.2f}x")


if __name__ == "__main__":
    main()

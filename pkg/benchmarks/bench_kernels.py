"""Compare the numba and pure-numpy kernel backends on speed and agreement.

Run with: python3 benchmarks/bench_kernels.py [--size 128] [--repeats 20]
"""
import argparse
import time

import numpy as np

from segxai import _kernels_np as knp

try:
    from segxai import _kernels_nb as knb
except ImportError:
    knb = None


def timeit(fn, repeats):
    fn()  # warm-up (triggers JIT compilation for the numba backend)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=128, help="spatial side length")
    parser.add_argument("--channels", type=int, default=16)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    c, s = args.channels, args.size
    x = rng.standard_normal((c, s, s))
    w = rng.standard_normal((c, c, 3, 3))
    b = rng.standard_normal(c)
    gout = rng.standard_normal((c, s, s))
    pooled_np, idx_np = knp.maxpool2(x)
    gpool = rng.standard_normal(pooled_np.shape)

    cases = [
        ("conv3x3", lambda m: m.conv3x3(x, w, b)),
        ("conv3x3_backward", lambda m: m.conv3x3_backward(x, w, gout)),
        ("maxpool2", lambda m: m.maxpool2(x)),
        ("maxpool2_backward", lambda m: m.maxpool2_backward(gpool, idx_np, s, s)),
    ]

    print(f"size={s}x{s} channels={c} repeats={args.repeats} (best-of timings)")
    header = f"{'kernel':<20} {'numpy [ms]':>12} {'numba [ms]':>12} {'speedup':>9} {'max |diff|':>12}"
    print(header)
    print("-" * len(header))
    for name, call in cases:
        t_np = timeit(lambda: call(knp), args.repeats)
        if knb is None:
            print(f"{name:<20} {t_np * 1e3:>12.3f} {'n/a':>12} {'n/a':>9} {'n/a':>12}")
            continue
        t_nb = timeit(lambda: call(knb), args.repeats)
        out_np, out_nb = call(knp), call(knb)
        if not isinstance(out_np, tuple):
            out_np, out_nb = (out_np,), (out_nb,)
        diff = max(
            float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b2, dtype=np.float64))))
            for a, b2 in zip(out_np, out_nb)
        )
        print(f"{name:<20} {t_np * 1e3:>12.3f} {t_nb * 1e3:>12.3f} {t_np / t_nb:>8.2f}x {diff:>12.3e}")


if __name__ == "__main__":
    main()

"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from roomestim import _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases():
    rain = (np.array([6.0, 5.0, 3.0]), np.array([1.0, 1.5, 1.2]),
            np.array([[4.0, 3.0, 1.5], [4.225, 3.0, 1.5]]), np.full((6, 6), 0.25),
            0.7, 500, 99, 48000.0, 343.0, 48000, 0.1, 1e-6)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16 * 21, 8, 769)).astype(np.float32)
    w = rng.standard_normal((8, 11)).astype(np.float32)
    g = rng.standard_normal(x.shape).astype(np.float32)
    return {
        "trace_rain (500 rays)": lambda k: k.trace_rain(*rain),
        "depthwise_forward (336x8x769)": lambda k: k.depthwise_forward(x, w, 2),
        "depthwise_backward (336x8x769)": lambda k: k.depthwise_backward(x, w, g, 2),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels.compiled is None:
        print("compiled kernels unavailable; timing the numpy fallback only")
    print(f"{'kernel':34s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, fn in cases().items():
        t_py = best_of(lambda: fn(_kernels.python), args.repeat) * 1e3
        if _kernels.compiled is not None:
            t_c = best_of(lambda: fn(_kernels.compiled), args.repeat) * 1e3
            print(f"{name:34s} {t_py:11.2f} {t_c:12.2f} {t_py / t_c:7.1f}x")
        else:
            print(f"{name:34s} {t_py:11.2f} {'-':>12s}")


if __name__ == "__main__":
    main()

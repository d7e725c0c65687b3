"""Time the numba and numpy versions of each hot kernel on identical inputs.

    python3 benchmarks/bench_kernels.py [--repeats N]

Numba compilation happens in a warm-up call and is excluded.  Each row also
reports the largest absolute difference between the two outputs.
"""

import argparse
import time

import numpy as np

from dualkanba import kernels as K


def best_ms(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return 1000.0 * min(times)


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.abs(a - b).max())


def cases(rng):
    L, n, E, N = 32, 128, 64, 16
    u, delta = rng.normal(size=(L, n, E)), rng.uniform(0.01, 0.5, (L, n, E))
    A, D = -rng.uniform(0.1, 2.0, (E, N)), rng.normal(size=E)
    B, C = rng.normal(size=(L, n, N)), rng.normal(size=(L, n, N))
    _, hs = K.scan_forward_np(u, delta, A, B, C, D)
    gy = rng.normal(size=(L, n, E))
    yield "scan_forward", (K.scan_forward_np, K.scan_forward_nb), (u, delta, A, B, C, D)
    yield "scan_backward", (K.scan_backward_np, K.scan_backward_nb), (gy, u, delta, A, B, C, D, hs)

    knots = np.linspace(-3.4, 3.4, 12)
    x = rng.uniform(-2.0, 2.0, size=200_000)
    yield "bspline_basis", (K.bspline_basis_np, K.bspline_basis_nb), (x, knots, 3)

    idx = rng.integers(0, 256, size=(64, 16))
    g = rng.normal(size=(64, 16, 32))
    yield "scatter_add_rows", (K.scatter_add_rows_np, K.scatter_add_rows_nb), (idx, g, 256)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    print(f"{'kernel':<18s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, (f_np, f_nb), inputs in cases(np.random.default_rng(0)):
        t_np = best_ms(lambda: f_np(*inputs), args.repeats)
        t_nb = best_ms(lambda: f_nb(*inputs), args.repeats)
        diff = max_diff(f_np(*inputs), f_nb(*inputs))
        print(f"{name:<18s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:7.1f}x {diff:11.1e}")


if __name__ == "__main__":
    main()

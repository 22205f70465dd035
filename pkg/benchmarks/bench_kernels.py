"""Timing comparison of the compiled and numpy kernel lanes.

Runs each primitive (convolution forward/backward, bilinear sampling
forward/backward) on workloads shaped like the training pipeline's and
prints a table of per-call times plus the speedup of the compiled lane.
Both lanes are imported directly, so the JULKIT_BACKEND selection does
not matter here.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from julkit._kernels import numpy_backend

try:
    from julkit._kernels import _fast
except ImportError:
    _fast = None


def _workloads(rng):
    # batch 8 of 16-channel 16x16 feature maps, 3x3 kernels, and a
    # per-channel sampling grid: the shapes the generator actually runs
    x = rng.normal(size=(8, 16, 16, 16))
    w = rng.normal(size=(16, 16, 3, 3))
    gy = rng.normal(size=(8, 16, 16, 16))
    grid = rng.uniform(-0.9, 0.9, size=(8, 16, 16, 16, 2))
    img = rng.normal(size=(8, 3, 32, 32))
    wimg = rng.normal(size=(8, 3, 3, 3))
    gimg = rng.normal(size=(8, 8, 32, 32))
    return [
        ("conv2d_forward 8x16x16x16 k3",
         lambda be: be.conv2d_forward(x, w)),
        ("conv2d_grad_input", lambda be: be.conv2d_grad_input(gy, w)),
        ("conv2d_grad_weight", lambda be: be.conv2d_grad_weight(x, gy, 3)),
        ("conv2d_forward 8x3x32x32 k3",
         lambda be: be.conv2d_forward(img, wimg)),
        ("bilinear_forward per-channel grid",
         lambda be: be.bilinear_forward(x, grid)),
        ("bilinear_backward", lambda be: be.bilinear_backward(x, grid, gy)),
    ]


def _time(fn, repeats):
    fn()  # warm cache and exclude one-time setup
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = _workloads(rng)

    print(f"{'primitive':38s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, call in cases:
        t_np = _time(lambda: call(numpy_backend), args.repeats)
        if _fast is None:
            print(f"{name:38s} {t_np * 1e3:9.3f}ms {'missing':>10s} {'-':>8s}")
            continue
        t_fast = _time(lambda: call(_fast), args.repeats)
        a = call(numpy_backend)
        b = call(_fast)
        pairs = zip(a, b) if isinstance(a, tuple) else [(a, b)]
        for got, want in pairs:
            if not np.allclose(got, want, rtol=1e-12, atol=1e-12):
                raise AssertionError(f"lanes disagree on {name}")
        print(f"{name:38s} {t_np * 1e3:9.3f}ms {t_fast * 1e3:9.3f}ms "
              f"{t_np / t_fast:7.1f}x")
    if _fast is None:
        print("compiled lane not built; showing numpy lane only")


if __name__ == "__main__":
    main()

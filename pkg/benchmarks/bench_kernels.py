"""Time the compiled and NumPy convolution kernels on network-sized inputs.

    python benchmarks/bench_kernels.py [--repeats 20]

Prints one line per (shape, stride, direction) with both timings and the
speedup of the compiled kernel, plus the max abs difference between outputs.
"""

import argparse
import time

import numpy as np

from plca import _kernels_py

try:
    from plca import _kernels as _compiled
except ImportError:
    _compiled = None

CASES = [  # (B, Cin, H, W, Cout, stride) as seen in a batch of 4 pairs
    (8, 3, 48, 48, 16, 1),
    (8, 16, 48, 48, 16, 2),
    (8, 16, 24, 24, 16, 2),
    (8, 16, 12, 12, 16, 1),
]


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'case':<28}{'dir':<6}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}{'max diff':>11}")
    for b, c, h, w_, o, s in CASES:
        x = rng.normal(size=(b, c, h, w_))
        w = rng.normal(size=(o, c, 3, 3))
        bias = rng.normal(size=o)
        y = _kernels_py.conv2d_forward(x, w, bias, s)
        g = rng.normal(size=y.shape)
        label = f"{b}x{c}x{h}x{w_}->{o} s{s}"
        for name, fwd in (("fwd", lambda m: m.conv2d_forward(x, w, bias, s)),
                          ("bwd", lambda m: m.conv2d_backward(x, w, g, s))):
            tp = best_of(lambda: fwd(_kernels_py), args.repeats)
            tc = best_of(lambda: fwd(_compiled), args.repeats)
            a, r = fwd(_compiled), fwd(_kernels_py)
            if name == "bwd":
                diff = max(np.abs(u - v).max() for u, v in zip(a, r))
            else:
                diff = np.abs(a - r).max()
            print(f"{label:<28}{name:<6}{tp * 1e3:>10.3f}{tc * 1e3:>11.3f}{tp / tc:>9.2f}{diff:>11.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

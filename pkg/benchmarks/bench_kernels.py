"""Time the compiled kernels against the numpy fallback on training shapes.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from bridgespot import _kernels_py

try:
    from bridgespot import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    det = rng.normal(size=(8, 8, 24, 48))
    rec = rng.normal(size=(32, 16, 12, 48))
    feat = rng.normal(size=(16, 12, 24))
    ys, xs = np.linspace(1.2, 9.7, 8), np.linspace(3.1, 20.4, 24)
    cols = _kernels_py.im2col(det, 3, 3, 1, 1)
    return {
        "im2col det 8x8x24x48 k3": ("im2col", (det, 3, 3, 1, 1)),
        "im2col rec 32x16x12x48 k3": ("im2col", (rec, 3, 3, 1, 1)),
        "col2im det 8x8x24x48 k3": ("col2im", (cols, det.shape, 3, 3, 1, 1)),
        "bilinear_gather 16x12x24 -> 8x24": ("bilinear_gather", (feat, ys, xs)),
        "bilinear_scatter 8x24 -> 16x12x24": ("bilinear_scatter",
                                              (rng.normal(size=(16, 8, 24)), feat.shape, ys, xs)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':38s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for label, (fn, call_args) in cases(rng).items():
        py = getattr(_kernels_py, fn)
        t_py = min(timeit.repeat(lambda: py(*call_args), number=args.repeat, repeat=3))
        row = f"{label:38s} {1e3 * t_py / args.repeat:10.4f}"
        if _kernels is not None:
            cy = getattr(_kernels, fn)
            np.testing.assert_allclose(cy(*call_args), py(*call_args), rtol=1e-12, atol=1e-12)
            t_cy = min(timeit.repeat(lambda: cy(*call_args), number=args.repeat, repeat=3))
            row += f" {1e3 * t_cy / args.repeat:10.4f} {t_py / t_cy:7.2f}x"
        else:
            row += f" {'n/a':>10s}"
        print(row)


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Time the compiled patch kernels against the pure numpy fallback.

Runs forward and backward passes of representative convolution shapes
from the pose models under both backends and prints a comparison table.
1x1 convolutions skip the patch kernels entirely (both backends share
the same matmul fast path), so one is included as a control.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N] [--batch N]
"""

import argparse
import time
from contextlib import contextmanager

import numpy as np

from effipose import kernels
from effipose import tensor as T

CASES = (
    # name, input (C, H, W), weight, stride, op
    ("stem 3x3/2 @224", (3, 224, 224), (32, 3, 3, 3), 2, "conv"),
    ("expand 1x1 @56 (control)", (24, 56, 56), (144, 24, 1, 1), 1, "conv"),
    ("depthwise 5x5 @28", (144, 28, 28), (144, 1, 5, 5), 1, "depthwise"),
    ("detection 3x3 @46", (128, 46, 46), (128, 128, 3, 3), 1, "conv"),
    ("upscale 4x4/2 @46", (16, 46, 46), (16, 16, 4, 4), 2, "transposed"),
)


@contextmanager
def backend(name):
    """Swap the active im2col/col2im implementation for the block."""
    saved = kernels._impl, kernels._name
    kernels._impl = kernels.get_backend(name)
    kernels._name = name
    try:
        yield
    finally:
        kernels._impl, kernels._name = saved


def run_case(shape, wshape, stride, op, batch, repeats):
    rng = np.random.default_rng(0)
    best = float("inf")
    for _ in range(repeats + 1):  # first pass is warmup
        x = T.Tensor(rng.normal(size=(batch, *shape)).astype(np.float32),
                     requires_grad=True)
        w = T.Tensor((rng.normal(size=wshape) * 0.05).astype(np.float32),
                     requires_grad=True)
        start = time.perf_counter()
        if op == "transposed":
            out = T.conv_transpose2d(x, w, stride=stride, padding=1)
        elif op == "depthwise":
            out = T.depthwise_conv2d(x, w, stride=stride)
        else:
            out = T.conv2d(x, w, stride=stride)
        out.backward()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timed runs per case; the fastest is reported")
    parser.add_argument("--batch", type=int, default=1)
    args = parser.parse_args()

    backends = ["python"]
    try:
        kernels.get_backend("cython")
        backends.append("cython")
    except ImportError:
        print("compiled backend unavailable; timing python only\n")

    print(f"forward+backward, batch={args.batch}, best of {args.repeats}\n")
    header = f"{'case':<28}" + "".join(f"{b + ' (ms)':>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    ratios = []
    for name, shape, wshape, stride, op in CASES:
        times = {}
        for b in backends:
            with backend(b):
                times[b] = run_case(shape, wshape, stride, op,
                                    args.batch, args.repeats)
        row = f"{name:<28}" + "".join(f"{times[b] * 1e3:>14.2f}" for b in backends)
        if len(backends) == 2:
            ratio = times["python"] / times["cython"]
            ratios.append(ratio)
            row += f"{ratio:>9.2f}x"
        print(row)
    if ratios:
        geo = float(np.exp(np.mean(np.log(ratios))))
        print(f"\ngeometric mean speedup: {geo:.2f}x "
              f"(active default backend: {kernels.backend_name()})")


if __name__ == "__main__":
    main()

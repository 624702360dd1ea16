"""Timing comparison of the compiled and numpy depthwise-conv kernels.

Run:  python3 benchmarks/bench_kernels.py
The numpy fallback is forced through FEWSPOT_FORCE_NUMPY_KERNELS in a
subprocess so both backends run in one invocation.
"""

import json
import os
import subprocess
import sys
import time
import timeit

import numpy as np

SHAPES = [
    # (batch, channels, h, w) roughly matching small/large encoder interiors
    (160, 64, 25, 5),
    (160, 256, 25, 10),
    (600, 64, 25, 5),
]
DTYPES = ("float32", "float64")


def bench_backend():
    from fewspot.nn import kernels

    rows = []
    for shape in SHAPES:
        for dtype in DTYPES:
            rng = np.random.default_rng(0)
            x = rng.standard_normal(shape).astype(dtype)
            w = rng.standard_normal((shape[1], 3, 3)).astype(dtype)
            g = rng.standard_normal(shape).astype(dtype)
            calls = {
                "forward": lambda: kernels.depthwise3x3_forward(x, w),
                "backward_input": lambda: kernels.depthwise3x3_backward_input(g, w),
                "backward_weight": lambda: kernels.depthwise3x3_backward_weight(x, g),
            }
            for name, fn in calls.items():
                fn()  # warm up
                n = max(3, int(0.2 / max(timeit.timeit(fn, number=1), 1e-9)))
                t = timeit.timeit(fn, number=n) / n
                rows.append(
                    {
                        "backend": kernels.BACKEND,
                        "shape": "x".join(map(str, shape)),
                        "dtype": dtype,
                        "op": name,
                        "ms": t * 1e3,
                    }
                )
    return rows


def main():
    if os.environ.get("FEWSPOT_BENCH_CHILD"):
        print(json.dumps(bench_backend()))
        return

    t0 = time.time()
    rows = bench_backend()
    env = dict(os.environ, FEWSPOT_BENCH_CHILD="1", FEWSPOT_FORCE_NUMPY_KERNELS="1")
    out = subprocess.run(
        [sys.executable, __file__], env=env, capture_output=True, text=True, check=True
    )
    rows += json.loads(out.stdout)

    by_key = {}
    for r in rows:
        by_key.setdefault((r["shape"], r["dtype"], r["op"]), {})[r["backend"]] = r["ms"]
    print(f"{'shape':>14} {'dtype':>8} {'op':>16} {'cython ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for (shape, dtype, op), times in by_key.items():
        cy, np_ = times.get("cython"), times.get("numpy")
        ratio = f"{np_ / cy:7.2f}x" if cy and np_ else "     n/a"
        cy_s = f"{cy:10.3f}" if cy else "       n/a"
        print(f"{shape:>14} {dtype:>8} {op:>16} {cy_s} {np_:10.3f} {ratio}")
    print(f"total {time.time() - t0:.1f}s")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs each hot kernel on representative workloads under both backends and
prints a timing table.  Select a single backend via TRUSTLENS_BACKEND or
compare both (default).

    python3 benchmarks/bench_backends.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from trustlens import backend, kernels
from trustlens.layout import TokenLayout
from trustlens.saliency import StreamingFusion

FULL_SCALE_LAYOUT = TokenLayout(
    grid_x=180, grid_y=180, cell_size=0.6, num_cams=6, cam_h=40, cam_w=100
)


def workloads():
    rng = np.random.default_rng(0)
    x_series = np.linspace(0.0, 15.0, 200_000)
    x_wide = np.geomspace(1e-3, 2000.0, 200_000)
    kappa = np.exp(rng.uniform(-3, 5, 20_000))
    half = rng.uniform(0.0, np.pi, 20_000)
    z = rng.normal(0.0, 2.0, 500_000)
    return [
        ("i0 series range (200k)", lambda: kernels.i0(x_series)),
        ("log_i0 wide range (200k)", lambda: kernels.log_i0(x_wide)),
        ("i1/i0 ratio (200k)", lambda: kernels.i1_i0_ratio(x_wide)),
        ("erf (500k)", lambda: kernels.erf(z)),
        ("vm interval mass (20k x 512 panels)", lambda: kernels.vm_interval_mass(kappa, half)),
        ("fusion stream (full scale, 6x8)", _full_scale_fusion),
    ]


def _full_scale_fusion():
    queries = 64
    rng = np.random.default_rng(1)
    raw = rng.random((queries, FULL_SCALE_LAYOUT.s_total), dtype=np.float32) + 1e-3
    sl = raw / raw.sum(axis=1, keepdims=True)
    reducer = StreamingFusion("mean", 6, 8, queries, FULL_SCALE_LAYOUT.s_total)
    for layer in range(6):
        for head in range(8):
            reducer.add(layer, head, sl)
    reducer.finalize(FULL_SCALE_LAYOUT)


def time_best(fn, repeats):
    fn()  # warm-up (numba compilation, page faults)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    names = ["numpy"] + (["numba"] if backend.HAVE_NUMBA else [])
    results = {}
    for name in names:
        backend.set_backend(name)
        for label, fn in workloads():
            results[(label, name)] = time_best(fn, args.repeats)
    backend.set_backend("auto")

    width = max(len(label) for label, _ in workloads())
    header = f"{'kernel':<{width}}  " + "".join(f"{n:>12}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, _ in workloads():
        row = f"{label:<{width}}  "
        for name in names:
            row += f"{results[(label, name)] * 1000:>10.2f}ms"
        if len(names) == 2:
            ratio = results[(label, "numpy")] / results[(label, "numba")]
            row += f"{ratio:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()

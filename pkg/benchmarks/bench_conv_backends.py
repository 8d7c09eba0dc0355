"""Benchmark the grouped-convolution kernels: numba loops vs pure numpy.

Runs the forward and backward pass for a few representative workloads under
each backend and prints a timing table. Backend choice goes through the same
EFFKIT_BACKEND mechanism the library uses, so what is measured here is what
users get.

    python benchmarks/bench_conv_backends.py [--repeats N]
"""

import argparse
import os
import statistics
import time

import numpy as np

from effkit import backend
from effkit.convs import ConvSpec, conv_backward, conv_forward
from effkit.tensor import make_rng

# (label, spec, input spatial size, batch)
WORKLOADS = [
    ("pointwise 64->128", ConvSpec(64, 128, 1), 28, 8),
    ("depthwise k3 G=1", ConvSpec(64, 64, 3, group_size=1), 28, 8),
    ("grouped k3 G=16", ConvSpec(64, 64, 3, group_size=16), 28, 8),
    ("grouped k5 G=16 s2", ConvSpec(96, 96, 5, stride=2, group_size=16), 28, 8),
    ("dense k3", ConvSpec(32, 64, 3), 28, 8),
]


def run_backend(name: str, repeats: int) -> dict:
    os.environ[backend.ENV_VAR] = name
    assert backend.active_backend() == name
    results = {}
    rng = make_rng(0)
    for label, spec, field, batch in WORKLOADS:
        x = rng.normal(size=(batch, spec.in_channels, field, field))
        w = rng.normal(size=spec.weight_shape)
        y, cache = conv_forward(x, w, spec)  # warm-up compiles numba kernels
        dy = rng.normal(size=y.shape)
        conv_backward(cache, dy)
        fwd, bwd = [], []
        for _ in range(repeats):
            t0 = time.perf_counter()
            _, cache = conv_forward(x, w, spec)
            t1 = time.perf_counter()
            conv_backward(cache, dy)
            t2 = time.perf_counter()
            fwd.append(t1 - t0)
            bwd.append(t2 - t1)
        results[label] = (statistics.median(fwd), statistics.median(bwd))
    return results


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    previous = os.environ.get(backend.ENV_VAR)
    names = ["numpy"] + (["numba"] if backend.HAVE_NUMBA else [])
    if not backend.HAVE_NUMBA:
        print("numba not importable; timing the numpy backend only")
    try:
        timings = {name: run_backend(name, args.repeats) for name in names}
    finally:
        if previous is None:
            os.environ.pop(backend.ENV_VAR, None)
        else:
            os.environ[backend.ENV_VAR] = previous

    header = f"{'workload':24s}" + "".join(
        f"  {name + ' fwd':>12s}  {name + ' bwd':>12s}" for name in names
    )
    if len(names) == 2:
        header += f"  {'speedup fwd':>12s}  {'speedup bwd':>12s}"
    print(header)
    print("-" * len(header))
    for label, *_ in WORKLOADS:
        row = f"{label:24s}"
        for name in names:
            fwd, bwd = timings[name][label]
            row += f"  {fwd * 1e3:10.2f}ms  {bwd * 1e3:10.2f}ms"
        if len(names) == 2:
            np_fwd, np_bwd = timings["numpy"][label]
            nb_fwd, nb_bwd = timings["numba"][label]
            row += f"  {np_fwd / nb_fwd:11.2f}x  {np_bwd / nb_bwd:11.2f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

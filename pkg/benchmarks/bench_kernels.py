"""Compare the compiled and numpy kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 2000] [--duration 60]

Reports the per-call cost of the measurement Jacobian kernel and the wall
time of one FE-GUT run under each available backend.
"""

from __future__ import annotations

import argparse
import logging
import time
import timeit

import numpy as np

from fegut import _kernels
from fegut.config import ExperimentConfig, build_scenario
from fegut.hybrid import FeGutPipeline


def kernel_inputs(seed=0, n_sats=8, n_anchors=4):
    rng = np.random.default_rng(seed)
    x = np.r_[rng.normal(0, 6.4e6, 3), rng.normal(0, 5, 3), rng.normal(0, 1, 3), 10.0, 0.1, 0.04]
    sats = x[:3] + rng.normal(0, 2.2e7, (n_sats, 3))
    anchors = x[:3] + rng.normal(0, 50, (n_anchors, 3))
    return x, sats, anchors


def bench_kernel(repeat):
    x, sats, anchors = kernel_inputs()
    out = {}
    for name, mod in _kernels.BACKENDS.items():
        mod.measurement_jacobian(x, sats, anchors)  # warm up
        best = min(timeit.repeat(lambda m=mod: m.measurement_jacobian(x, sats, anchors), number=repeat, repeat=5))
        out[name] = best / repeat
    return out


def bench_pipeline(duration):
    cfg = ExperimentConfig.from_dict({"scenario": {"trajectory": {"duration": duration}}})
    epochs = build_scenario(cfg, 0).dataset.epochs
    out = {}
    previous = _kernels.backend_name()
    try:
        for name in _kernels.BACKENDS:
            _kernels.use_backend(name)
            t0 = time.perf_counter()
            outputs = FeGutPipeline(cfg.pipeline_config()).run(epochs)
            out[name] = (time.perf_counter() - t0, outputs[-1].r.copy())
    finally:
        _kernels.use_backend(previous)
    return out, len(epochs)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=2000, help="kernel calls per timing sample")
    p.add_argument("--duration", type=float, default=60.0, help="simulated seconds for the end-to-end run")
    args = p.parse_args(argv)
    logging.getLogger("fegut").setLevel(logging.ERROR)

    print(f"backends: {', '.join(_kernels.BACKENDS)} (default: {_kernels.backend_name()})")
    kern = bench_kernel(args.repeat)
    for name, sec in kern.items():
        print(f"measurement_jacobian  {name:<7} {sec * 1e6:8.2f} us/call")
    if "cython" in kern:
        print(f"  speed-up {kern['python'] / kern['cython']:.1f}x")

    runs, n = bench_pipeline(args.duration)
    for name, (sec, _) in runs.items():
        print(f"FE-GUT {args.duration:g} s ({n} epochs)  {name:<7} {sec:7.2f} s")
    if "cython" in runs:
        same = np.array_equal(runs["cython"][1], runs["python"][1])
        print(f"  speed-up {runs['python'][0] / runs['cython'][0]:.2f}x, final state identical: {same}")


if __name__ == "__main__":
    main()

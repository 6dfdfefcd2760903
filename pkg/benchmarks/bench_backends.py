#!/usr/bin/env python3
"""Benchmark the compiled extension against the NumPy fallback.

Times the three hot paths on realistic problem sizes: one subgradient pass,
a full multi-start sphere ascent, and locally weighted prediction.

Usage: python benchmarks/bench_backends.py [--n 5000] [--repeats 5]
"""

import argparse
import time

import numpy as np

from relumax.backend import available_backends
from relumax.dgp import DgpSpec, default_direction, gen_single_index, true_h0


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--n", type=int, default=5000)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--starts", type=int, default=8)
    parser.add_argument("--epochs", type=int, default=500)
    args = parser.parse_args()

    theta0 = default_direction()
    data = gen_single_index(DgpSpec(design="single_index", n=args.n, seed=42))
    x = data.x
    h = true_h0("single_index", x, theta0)
    rng = np.random.default_rng(0)
    theta_starts = rng.standard_normal((args.starts, 3))
    theta_starts /= np.linalg.norm(theta_starts, axis=1, keepdims=True)
    x_flat = data.x_flat
    queries = rng.uniform(-2.0, 2.0, size=(1000, 3))

    impls = available_backends()
    print(f"n={args.n}, starts={args.starts}, epochs={args.epochs}")
    print(f"{'task':<28}" + "".join(f"{name:>14}" for name in impls))
    rows = {
        "criterion_subgrad": lambda mod: mod.criterion_subgrad(x, h, theta0),
        "adam_sphere_max": lambda mod: mod.adam_sphere_max(
            x, h, theta_starts, 0.01, args.epochs, 0.9, 0.999, 1e-8, False
        ),
        "nw_predict (1000 queries)": lambda mod: mod.nw_predict(
            x_flat, data.y_centered, queries, 0.35, 0, 2
        ),
    }
    timings = {}
    for label, call in rows.items():
        line = f"{label:<28}"
        timings[label] = {}
        for name, mod in impls.items():
            elapsed = _time(lambda: call(mod), args.repeats)
            timings[label][name] = elapsed
            line += f"{elapsed * 1e3:>11.2f} ms"
        print(line)
    if {"numpy", "compiled"} <= impls.keys():
        print("\nspeedup (numpy / compiled):")
        for label in rows:
            ratio = timings[label]["numpy"] / timings[label]["compiled"]
            print(f"  {label:<28}{ratio:>8.1f}x")


if __name__ == "__main__":
    main()

"""Multi-scale vs per-scale sketching, compiled vs numpy phase kernel.

    python benchmarks/bench_multiscale.py [--D 200] [--M 100000] [--S 10] [--N 1000]
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from opusketch import _backend, _fallback
from opusketch.rff import FeatureMap, FrequencyFactors
from opusketch.sketching import FlopCounter, ScaleGrid, sketch_multiscale, sketch_naive


def timed(fn, repeats):
    best, out = np.inf, None
    for _ in range(repeats):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def run(D, M, S, N, repeats, kernel):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((N, D)) / np.sqrt(D)
    fmap = FeatureMap.from_factors(FrequencyFactors.draw(M, D, 1))
    grid = ScaleGrid.logspace(1e-3, 1.0, S)
    saved = _backend.accumulate_phases
    _backend.accumulate_phases = kernel
    try:
        cm, cn = FlopCounter(), FlopCounter()
        t_multi, multi = timed(lambda: sketch_multiscale(fmap, grid, X, counter=cm), repeats)
        t_naive, naive = timed(lambda: sketch_naive(fmap, grid, X, counter=cn), repeats)
    finally:
        _backend.accumulate_phases = saved
    err = max(np.max(np.abs(a.values - b.values)) for a, b in zip(multi, naive))
    return {"multiscale_s": t_multi, "naive_s": t_naive, "speedup": t_naive / t_multi,
            "max_abs_diff": float(err),
            "flops_multiscale": cm.total // repeats, "flops_naive": cn.total // repeats,
            "model_multiscale": N * (M * D + S * M), "model_naive": N * S * M * D}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--D", type=int, default=200)
    ap.add_argument("--M", type=int, default=100_000)
    ap.add_argument("--S", type=int, default=10)
    ap.add_argument("--N", type=int, default=1000)
    ap.add_argument("--repeats", type=int, default=1)
    a = ap.parse_args()
    kernels = {"python": _fallback.accumulate_phases}
    if _backend.compiled is not None:
        kernels["compiled"] = _backend.compiled.accumulate_phases
    results = {name: run(a.D, a.M, a.S, a.N, a.repeats, k) for name, k in kernels.items()}
    print(json.dumps(results, indent=1))


if __name__ == "__main__":
    main()

"""Compare the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--nodes 2000] [--degree 20] [--trials 50]

Both backends run the same inputs; the script checks their outputs agree
before reporting timings.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from cascadeclone import _pykernels
from cascadeclone.datagen import SynthSpec, generate_network
from cascadeclone.sei import CascadeGraph

try:
    from cascadeclone import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_cascades(impl, graph: CascadeGraph, probs, trials: int):
    seeds = np.arange(trials, dtype=np.uint64)
    out = (np.zeros(trials, np.int64), np.zeros((trials, graph.n), np.int32),
           np.zeros(graph.n, np.int64), np.zeros(graph.m, np.int64))

    def run():
        for buf in out:
            buf[...] = 0
        impl.cascade_accumulate(graph.indptr, graph.indices, probs, 0, seeds, _pykernels.DELAY_EXPONENTIAL,
                                1.0, -1, *out)

    return run, out


def bench_histogram(impl, rows: int, features: int, n_bins: int = 256):
    rng = np.random.default_rng(0)
    bins = rng.integers(0, n_bins, (rows, features)).astype(np.uint16)
    idx = np.arange(0, rows, 2, dtype=np.int64)
    grad = rng.standard_normal(rows)
    hess = rng.random(rows)
    out = np.zeros((features, n_bins, 2))

    def run():
        impl.histogram(bins, idx, grad, hess, n_bins, 0, features, out)

    return run, out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=2000)
    ap.add_argument("--degree", type=float, default=20.0)
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--rows", type=int, default=50_000)
    ap.add_argument("--features", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if _kernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")

    half = args.nodes // 2
    p_in = args.degree / max(half - 1, 1)
    graph = CascadeGraph(generate_network(SynthSpec(block_sizes=(half, args.nodes - half), p_in=min(p_in, 1.0),
                                                    p_out=0.0, seed=1)))
    probs = np.random.default_rng(2).uniform(0.05, 0.25, graph.m)

    rows = []
    for name, make in (
        (f"cascade_accumulate ({graph.n} nodes, {graph.m} edges, {args.trials} trials)",
         lambda impl: bench_cascades(impl, graph, probs, args.trials)),
        (f"histogram ({args.rows} rows, {args.features} features)",
         lambda impl: bench_histogram(impl, args.rows, args.features)),
    ):
        run_c, out_c = make(_kernels)
        run_p, out_p = make(_pykernels)
        t_c = best_of(run_c, args.repeat)
        t_p = best_of(run_p, args.repeat)
        outs_c = out_c if isinstance(out_c, tuple) else (out_c,)
        outs_p = out_p if isinstance(out_p, tuple) else (out_p,)
        for a, b in zip(outs_c, outs_p):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-9)
        rows.append((name, t_c, t_p))

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel'.ljust(width)}  {'compiled s':>11}  {'python s':>10}  {'speedup':>8}")
    for name, t_c, t_p in rows:
        print(f"{name.ljust(width)}  {t_c:11.4f}  {t_p:10.4f}  {t_p / t_c:7.1f}x")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Benchmark the compiled aggregation kernel against the numpy fallback.

Times the weighted soft-medoid aggregation of a full graph (one call per
forward pass) for a range of graph sizes and truncation levels, plus a
per-node loop over the plain estimator as a naive reference on the
smallest case.

Usage: python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from softmedoid import estimators as est
from softmedoid import graph as gr
from softmedoid import kernels


def timeit(fn, reps):
    fn()  # warmup
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def per_node_loop(Z, A, T, k):
    out = np.zeros_like(Z)
    for v in range(A.shape[0]):
        row = A.getrow(v)
        ids, w = row.indices, row.data
        if k and len(ids) > k:
            res = est.weighted_soft_medoid_topk(Z[ids], w, T, k)
        else:
            res = est.weighted_soft_medoid(Z[ids], w, T)
        out[v] = res.location
    return out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="fewer sizes and reps")
    args = parser.parse_args()
    reps = 3 if args.quick else 7
    cases = [(200, 0.05, 16, 0), (200, 0.05, 16, 8)]
    if not args.quick:
        cases += [(1000, 0.01, 32, 16), (2000, 0.008, 64, 32), (2000, 0.008, 64, 64)]

    print(f"active backend: {kernels.backend()}")
    header = f"{'n':>6} {'avg_deg':>8} {'h':>4} {'k':>4} {'cython_ms':>10} {'numpy_ms':>9} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for n, p_in, h, k in cases:
        g = gr.synth_sbm(n, 2, p_in, p_in / 10, 4, 1.0, seed=0)
        A = gr.gcn_normalize(g)
        rng = np.random.default_rng(0)
        Z = rng.normal(size=(n, h))
        t_numpy = timeit(lambda: kernels.csr_wsm_forward_numpy(Z, A, 0.5, k), reps)
        if kernels.backend() == "cython":
            t_ext = timeit(lambda: kernels.csr_wsm_forward(Z, A, 0.5, k), reps)
            out_ext = kernels.csr_wsm_forward(Z, A, 0.5, k)
            out_np = kernels.csr_wsm_forward_numpy(Z, A, 0.5, k)
            assert np.allclose(out_ext, out_np, atol=1e-10), "backend mismatch"
            cy, ratio = f"{t_ext * 1e3:10.3f}", f"{t_numpy / t_ext:8.1f}x"
        else:
            cy, ratio = f"{'n/a':>10}", f"{'n/a':>8}"
        avg_deg = g.adjacency.nnz / n
        print(f"{n:>6} {avg_deg:>8.1f} {h:>4} {k:>4} {cy} {t_numpy * 1e3:9.3f} {ratio}")

    # naive per-node estimator loop for scale, smallest case only
    n, p_in, h, k = cases[0]
    g = gr.synth_sbm(n, 2, p_in, p_in / 10, 4, 1.0, seed=0)
    A = gr.gcn_normalize(g)
    Z = np.random.default_rng(0).normal(size=(n, h))
    t_loop = timeit(lambda: per_node_loop(Z, A, 0.5, k), max(2, reps // 2))
    print(f"\nper-node estimator loop at n={n}: {t_loop * 1e3:.1f} ms")


if __name__ == "__main__":
    main()

"""Benchmark: compiled nearest-neighbor kernel vs the NumPy/BLAS fallback.

Run:  python benchmarks/bench_nn.py [--threads N]

The compiled kernel scans pairs with an early exit and never materializes
distance blocks; the NumPy path batches a BLAS gemm. The table shows the
crossover that the auto backend selection in patchlens.kernels encodes.
"""

import argparse
import time

import numpy as np

from patchlens import kernels

CASES = [
    # (N, Q, D)                      regime
    (60000, 200, 8),     # many rows, narrow features
    (2000, 2000, 32),    # square, narrow
    (5000, 1000, 128),   # medium
    (20000, 500, 568),   # pruned ViT features
    (20000, 5000, 768),  # full ViT features, bulk queries
    (12, 5000, 768),     # tracking-style tiny pools, many calls batched
]


def run_case(n, q, d, threads, repeats=3):
    rng = np.random.default_rng(0)
    db = rng.standard_normal((n, d)).astype(np.float32)
    queries = rng.standard_normal((q, d)).astype(np.float32)
    row = {"case": f"N={n} Q={q} D={d}"}
    reference = None
    for backend in ("compiled", "numpy"):
        try:
            best = np.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                out = kernels.nearest_index(db, queries, threads=threads,
                                            backend=backend)
                best = min(best, time.perf_counter() - t0)
            row[backend] = best
            if reference is None:
                reference = out
            elif not np.array_equal(reference, out):
                raise AssertionError(f"backends disagree on {row['case']}")
        except RuntimeError as exc:
            row[backend] = None
            print(f"  ({backend} unavailable: {exc})")
    return row


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--threads", type=int, default=2)
    args = parser.parse_args()
    print(f"{'case':32s} {'compiled':>10s} {'numpy':>10s} {'ratio':>7s}")
    for n, q, d in CASES:
        row = run_case(n, q, d, args.threads)
        c, p = row.get("compiled"), row.get("numpy")
        ratio = f"{c / p:7.2f}" if c and p else "    n/a"
        fmt = lambda v: f"{v * 1e3:9.1f}ms" if v is not None else "      n/a"
        print(f"{row['case']:32s} {fmt(c)} {fmt(p)} {ratio}")


if __name__ == "__main__":
    main()

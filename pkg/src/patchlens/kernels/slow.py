"""NumPy fallback for the nearest-neighbor kernel.

Uses the BLAS-friendly expansion ||q-t||^2 = ||q||^2 - 2 q.t + ||t||^2 in
float64, then re-evaluates near-minimal candidates with the direct
difference form so that exact ties (and near-ties inside the numerical
error of the expansion) resolve identically to the compiled kernel:
smallest distance, lowest index first.
"""

from __future__ import annotations

import numpy as np

_BLOCK = 512


def nearest_index(db, queries, db_groups, q_groups, threads=1):
    """Index of the nearest db row per query; -1 if every row was excluded."""
    db64 = np.ascontiguousarray(db, dtype=np.float64)
    n, d = db64.shape
    out = np.empty(queries.shape[0], dtype=np.int64)
    db_sq = np.einsum("ij,ij->i", db64, db64)
    scale = float(db_sq.max(initial=0.0))
    for start in range(0, queries.shape[0], _BLOCK):
        stop = min(start + _BLOCK, queries.shape[0])
        q64 = np.ascontiguousarray(queries[start:stop], dtype=np.float64)
        q_sq = np.einsum("ij,ij->i", q64, q64)
        dist = q_sq[:, None] - 2.0 * (q64 @ db64.T) + db_sq[None, :]
        excluded = db_groups[None, :] == q_groups[start:stop, None]
        dist[excluded] = np.inf
        best = dist.min(axis=1)
        # Error bound of the expanded form is O(eps * magnitude); anything
        # inside it is a candidate for exact re-evaluation.
        slack = 1e-9 * (q_sq + scale) + 1e-12
        for i in range(stop - start):
            if not np.isfinite(best[i]):
                out[start + i] = -1
                continue
            cand = np.flatnonzero(dist[i] <= best[i] + slack[i])
            if cand.size == 1:
                out[start + i] = cand[0]
                continue
            diffs = db64[cand] - q64[i]
            exact = np.einsum("ij,ij->i", diffs, diffs)
            out[start + i] = cand[np.argmin(exact)]
    return out

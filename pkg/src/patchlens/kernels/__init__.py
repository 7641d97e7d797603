"""Backend selection for the hot nearest-neighbor kernel.

Two interchangeable implementations, identical predictions (squared
Euclidean argmin, ties to the lowest index):

* ``compiled`` - Cython scalar kernel; lowest latency for narrow
  features or small batches, and never allocates distance blocks.
* ``numpy``    - BLAS expansion ||q-t||^2 = ||q||^2 - 2 q.t + ||t||^2
  with exact re-evaluation of near-ties; fastest for bulk work.

``auto`` (the default) routes by measured crossover: small or narrow
problems go to the compiled kernel when it is available, everything
else to BLAS. benchmarks/bench_nn.py reproduces the comparison. Set
PATCHLENS_BACKEND=numpy or =compiled to force one.
"""

from __future__ import annotations

import os

import numpy as np

from . import slow

try:
    from . import _nn
except ImportError:  # extension not built
    _nn = None

# Below either bound the scalar kernel matched or beat the BLAS path on
# this package's benchmark; above, BLAS wins by a growing margin.
_NARROW_DIM = 16
_SMALL_WORK = 1 << 14


def backend_name() -> str:
    forced = os.environ.get("PATCHLENS_BACKEND", "auto")
    if forced == "numpy":
        return "numpy"
    if forced == "compiled":
        if _nn is None:
            raise RuntimeError("compiled kernel requested but not available")
        return "compiled"
    return "auto" if _nn is not None else "numpy"


def _pick(name: str, n: int, q: int, d: int) -> str:
    if name != "auto":
        return name
    if _nn is None:
        return "numpy"
    if d <= _NARROW_DIM or n * q <= _SMALL_WORK:
        return "compiled"
    return "numpy"


def nearest_index(db, queries, db_groups=None, q_groups=None, threads=1,
                  backend=None):
    """Nearest db row per query under squared Euclidean distance.

    db: (N, D) float array; queries: (Q, D). Optional int group labels per
    db row and per query: db rows whose group equals the query's group are
    skipped (used for same-image exclusion). Returns int64 indices; raises
    if exclusion empties the pool for any query.
    """
    db = np.ascontiguousarray(db, dtype=np.float32)
    queries = np.ascontiguousarray(queries, dtype=np.float32)
    if db.ndim != 2 or queries.ndim != 2:
        raise ValueError("db and queries must be 2-D")
    if db.shape[0] == 0:
        raise ValueError("empty database")
    if db.shape[1] != queries.shape[1]:
        raise ValueError(
            f"dimension mismatch: db D={db.shape[1]}, queries D={queries.shape[1]}")
    if (db_groups is None) != (q_groups is None):
        raise ValueError("db_groups and q_groups must be given together")
    if db_groups is None:
        db_groups = np.full(db.shape[0], -1, dtype=np.int64)
        q_groups = np.full(queries.shape[0], -2, dtype=np.int64)
    else:
        db_groups = np.ascontiguousarray(db_groups, dtype=np.int64)
        q_groups = np.ascontiguousarray(q_groups, dtype=np.int64)

    name = _pick(backend or backend_name(), db.shape[0], queries.shape[0],
                 db.shape[1])
    if name == "compiled":
        out = _nn.nearest_index(db, queries, db_groups, q_groups, int(threads))
    else:
        out = slow.nearest_index(db, queries, db_groups, q_groups, int(threads))
    if out.size and out.min() < 0:
        raise ValueError("no database entries left after exclusion")
    return out

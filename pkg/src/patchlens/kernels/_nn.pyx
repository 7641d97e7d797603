# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled exact nearest-neighbor kernel.

Distances are squared Euclidean accumulated in float64 with four
independent partial sums (fixed order for a given D, so results are
reproducible) and an early exit every block once the partial distance
exceeds the running best. Ties resolve to the lowest database index:
only a strictly smaller distance replaces the best while scanning in
ascending index order. Each query is independent of the others, so the
output never depends on the thread count.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport INFINITY

cnp.import_array()

DEF BLOCK = 64


cdef inline double _pair_dist(const float* q, const float* t, Py_ssize_t d,
                              double best) noexcept nogil:
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef double d0, d1, d2, d3
    cdef Py_ssize_t k = 0
    cdef Py_ssize_t stop
    while k + BLOCK <= d:
        stop = k + BLOCK
        while k < stop:
            d0 = <double> q[k] - <double> t[k]
            d1 = <double> q[k + 1] - <double> t[k + 1]
            d2 = <double> q[k + 2] - <double> t[k + 2]
            d3 = <double> q[k + 3] - <double> t[k + 3]
            s0 = s0 + d0 * d0
            s1 = s1 + d1 * d1
            s2 = s2 + d2 * d2
            s3 = s3 + d3 * d3
            k = k + 4
        if s0 + s1 + s2 + s3 > best:
            return s0 + s1 + s2 + s3
    while k < d:
        d0 = <double> q[k] - <double> t[k]
        s0 = s0 + d0 * d0
        k = k + 1
    return s0 + s1 + s2 + s3


def nearest_index(const float[:, ::1] db, const float[:, ::1] queries,
                  const long long[::1] db_groups, const long long[::1] q_groups,
                  int threads):
    """Index of the nearest db row per query; -1 if every row was excluded.

    A db row is excluded for a query when db_groups[row] == q_groups[query].
    Callers that want no exclusion pass group arrays that never collide.
    """
    cdef Py_ssize_t n = db.shape[0]
    cdef Py_ssize_t d = db.shape[1]
    cdef Py_ssize_t nq = queries.shape[0]
    if queries.shape[1] != d:
        raise ValueError("query dimension mismatch")
    out = np.empty(nq, dtype=np.int64)
    cdef long long[::1] out_v = out
    cdef Py_ssize_t i, j
    cdef double dist, best
    cdef long long best_j, qg
    if threads < 1:
        threads = 1
    for i in prange(nq, nogil=True, num_threads=threads, schedule='static'):
        best = INFINITY
        best_j = -1
        qg = q_groups[i]
        for j in range(n):
            if db_groups[j] == qg:
                continue
            dist = _pair_dist(&queries[i, 0], &db[j, 0], d, best)
            if dist < best:
                best = dist
                best_j = j
        out_v[i] = best_j
    return out

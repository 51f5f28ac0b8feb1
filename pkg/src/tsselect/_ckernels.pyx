# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in ``_pykernels.py``."""

import numpy as np
from libc.stdint cimport uint64_t
from libc.stdlib cimport malloc, free


cdef inline uint64_t _next(uint64_t* state) noexcept nogil:
    cdef uint64_t z
    state[0] += <uint64_t>0x9E3779B97F4A7C15ULL
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


def splitmix64_stream(seed, Py_ssize_t count):
    cdef uint64_t state = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t i
    out = []
    for i in range(count):
        out.append(_next(&state))
    return out


def exp_smooth(values, double alpha):
    cdef double[::1] x = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], t
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double s, beta = 1.0 - alpha
    if n == 0:
        return []
    s = x[0]
    o[0] = s
    for t in range(1, n):
        s = alpha * x[t] + beta * s
        o[t] = s
    return out.tolist()


cdef void _stable_sort(int* order, int m, const double* X, int n_lags, int f) noexcept nogil:
    # insertion sort keyed on X[i, f]; stable, matches Python's sorted()
    cdef int a, b, key
    cdef double kv
    for a in range(1, m):
        key = order[a]
        kv = X[key * n_lags + f]
        b = a - 1
        while b >= 0 and X[order[b] * n_lags + f] > kv:
            order[b + 1] = order[b]
            b -= 1
        order[b + 1] = key


cdef double _path_predict(const double* X, const double* y, int* idx, int m,
                          int* order, const double* query, int n_lags,
                          int max_depth) noexcept nogil:
    cdef int depth = 0, p, f, i, j, best_f, nl, nr, keep
    cdef double s, sq, v, first, mean, best, best_thr, sl, sql, xv, xn, sr, sqr, cand
    cdef bint pure, go_left
    while True:
        s = 0.0
        sq = 0.0
        first = y[idx[0]]
        pure = True
        for j in range(m):
            v = y[idx[j]]
            s += v
            sq += v * v
            if v != first:
                pure = False
        mean = s / m
        if m < 2 or pure or (max_depth >= 0 and depth >= max_depth):
            return mean
        best = sq - s * s / m
        best_f = -1
        best_thr = 0.0
        for f in range(n_lags):
            for j in range(m):
                order[j] = idx[j]
            _stable_sort(order, m, X, n_lags, f)
            sl = 0.0
            sql = 0.0
            for p in range(m - 1):
                i = order[p]
                v = y[i]
                sl += v
                sql += v * v
                xv = X[i * n_lags + f]
                xn = X[order[p + 1] * n_lags + f]
                if xv < xn:
                    nl = p + 1
                    nr = m - nl
                    sr = s - sl
                    sqr = sq - sql
                    cand = (sql - sl * sl / nl) + (sqr - sr * sr / nr)
                    if cand < best:
                        best = cand
                        best_f = f
                        best_thr = (xv + xn) / 2.0
        if best_f < 0:
            return mean
        go_left = query[best_f] <= best_thr
        keep = 0
        for j in range(m):
            i = idx[j]
            if (X[i * n_lags + best_f] <= best_thr) == go_left:
                idx[keep] = i
                keep += 1
        m = keep
        depth += 1


def forest_predict(series, int n_lags, int n_estimators, int max_depth, seed):
    cdef double[::1] x = np.ascontiguousarray(series, dtype=np.float64)
    cdef int n = x.shape[0]
    cdef int ns = n - n_lags
    cdef int i, f, t, j
    cdef uint64_t state = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)
    cdef double total = 0.0
    cdef double* X = <double*>malloc(ns * n_lags * sizeof(double))
    cdef double* y = <double*>malloc(ns * sizeof(double))
    cdef double* query = <double*>malloc(n_lags * sizeof(double))
    cdef int* idx = <int*>malloc(ns * sizeof(int))
    cdef int* order = <int*>malloc(ns * sizeof(int))
    if X == NULL or y == NULL or query == NULL or idx == NULL or order == NULL:
        free(X); free(y); free(query); free(idx); free(order)
        raise MemoryError()
    try:
        with nogil:
            for i in range(ns):
                for f in range(n_lags):
                    X[i * n_lags + f] = x[i + n_lags - 1 - f]
                y[i] = x[i + n_lags]
            for f in range(n_lags):
                query[f] = x[n - 1 - f]
            for t in range(n_estimators):
                for j in range(ns):
                    idx[j] = <int>(_next(&state) % <uint64_t>ns)
                total += _path_predict(X, y, idx, ns, order, query, n_lags, max_depth)
    finally:
        free(X); free(y); free(query); free(idx); free(order)
    return total / n_estimators

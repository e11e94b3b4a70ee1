# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: fused distance/selection/accumulation loops.

Semantics must match _kernels_py exactly (same tie rules, left-to-right
accumulation within each row). Only loop-bound kernels live here; dense
matmuls stay on BLAS.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "compiled"


def pairwise_sqdist(double[:, ::1] x, double[:, ::1] u):
    cdef Py_ssize_t n = x.shape[0], m = u.shape[0], d = x.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, m))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, t
    cdef double acc, diff
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(d):
                diff = x[i, t] - u[j, t]
                acc += diff * diff
            o[i, j] = acc
    return out


def knn_indices(double[:, ::1] x, double[:, ::1] u, Py_ssize_t k):
    """Per row of u: indices of the k nearest rows of x, ascending distance,
    ties to lower index. Insertion select, O(N*k) per centroid."""
    cdef Py_ssize_t n = x.shape[0], m = u.shape[0], d = x.shape[1]
    cdef cnp.ndarray[cnp.intp_t, ndim=2] out = np.empty((m, k), dtype=np.intp)
    cdef cnp.intp_t[:, ::1] o = out
    cdef cnp.ndarray[cnp.float64_t, ndim=1] best_d = np.empty(k)
    cdef double[::1] bd = best_d
    cdef Py_ssize_t i, j, t, p, q, size
    cdef double acc, diff
    for j in range(m):
        size = 0
        for i in range(n):
            acc = 0.0
            for t in range(d):
                diff = x[i, t] - u[j, t]
                acc += diff * diff
            if size == k and acc >= bd[k - 1]:
                continue
            # insert (acc, i); strict < keeps lower index first on ties
            p = size if size < k else k - 1
            while p > 0 and acc < bd[p - 1]:
                bd[p] = bd[p - 1]
                o[j, p] = o[j, p - 1]
                p -= 1
            bd[p] = acc
            o[j, p] = i
            if size < k:
                size += 1
    return out


def fps_indices(double[:, ::1] x, Py_ssize_t m, Py_ssize_t start):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef cnp.ndarray[cnp.intp_t, ndim=1] out = np.empty(m, dtype=np.intp)
    cdef cnp.intp_t[::1] o = out
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist = np.empty(n)
    cdef double[::1] d2 = dist
    cdef Py_ssize_t i, t, step, nxt
    cdef double acc, diff, best
    o[0] = start
    for i in range(n):
        acc = 0.0
        for t in range(d):
            diff = x[i, t] - x[start, t]
            acc += diff * diff
        d2[i] = acc
    for step in range(1, m):
        nxt = 0
        best = d2[0]
        for i in range(1, n):
            if d2[i] > best:
                best = d2[i]
                nxt = i
        o[step] = nxt
        for i in range(n):
            acc = 0.0
            for t in range(d):
                diff = x[i, t] - x[nxt, t]
                acc += diff * diff
            if acc < d2[i]:
                d2[i] = acc
    return out


def gather_weighted_sum(double[:, ::1] weights, cnp.intp_t[:, ::1] idx,
                        double[:, ::1] values):
    cdef Py_ssize_t m = weights.shape[0], k = weights.shape[1]
    cdef Py_ssize_t d = values.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((m, d))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t j, t, c, row
    cdef double w
    for j in range(m):
        for t in range(k):
            w = weights[j, t]
            row = idx[j, t]
            for c in range(d):
                o[j, c] += w * values[row, c]
    return out

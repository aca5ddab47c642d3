# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled segment kernels: the hot inner loops of edge attention.

Same contracts as ``numpy_backend``; one edge per loop iteration, float64.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()


def segment_sum(double[::1] values, long long[::1] seg, Py_ssize_t n):
    cdef Py_ssize_t m = values.shape[0]
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t e
    for e in range(m):
        out[seg[e]] += values[e]
    return out_arr


def segment_sum_rows(double[:, ::1] values, long long[::1] seg, Py_ssize_t n):
    cdef Py_ssize_t m = values.shape[0]
    cdef Py_ssize_t d = values.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t e, j, i
    for e in range(m):
        i = seg[e]
        for j in range(d):
            out[i, j] += values[e, j]
    return out_arr


def edge_softmax_fwd(double[::1] scores, long long[::1] seg, Py_ssize_t n):
    cdef Py_ssize_t m = scores.shape[0]
    alpha_arr = np.zeros(m, dtype=np.float64)
    cdef double[::1] alpha = alpha_arr
    if m == 0:
        return alpha_arr
    seg_max_arr = np.full(n, -INFINITY, dtype=np.float64)
    denom_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] seg_max = seg_max_arr
    cdef double[::1] denom = denom_arr
    cdef Py_ssize_t e
    cdef double v
    for e in range(m):
        v = scores[e]
        if v > seg_max[seg[e]]:
            seg_max[seg[e]] = v
    for e in range(m):
        v = exp(scores[e] - seg_max[seg[e]])
        alpha[e] = v
        denom[seg[e]] += v
    for e in range(m):
        alpha[e] /= denom[seg[e]]
    return alpha_arr


def edge_softmax_bwd(double[::1] alpha, double[::1] grad, long long[::1] seg, Py_ssize_t n):
    cdef Py_ssize_t m = alpha.shape[0]
    out_arr = np.zeros(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    if m == 0:
        return out_arr
    s_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] s = s_arr
    cdef Py_ssize_t e
    cdef double t
    for e in range(m):
        t = alpha[e] * grad[e]
        out[e] = t
        s[seg[e]] += t
    for e in range(m):
        out[e] -= alpha[e] * s[seg[e]]
    return out_arr


def edge_softmax_fwd_cols(double[:, ::1] scores, long long[::1] seg, Py_ssize_t n):
    """Column-wise segment softmax over a (m, k) score matrix."""
    cdef Py_ssize_t m = scores.shape[0]
    cdef Py_ssize_t k = scores.shape[1]
    alpha_arr = np.zeros((m, k), dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_arr
    if m == 0:
        return alpha_arr
    seg_max_arr = np.full((n, k), -INFINITY, dtype=np.float64)
    denom_arr = np.zeros((n, k), dtype=np.float64)
    cdef double[:, ::1] seg_max = seg_max_arr
    cdef double[:, ::1] denom = denom_arr
    cdef Py_ssize_t e, j, i
    cdef double v
    for e in range(m):
        i = seg[e]
        for j in range(k):
            v = scores[e, j]
            if v > seg_max[i, j]:
                seg_max[i, j] = v
    for e in range(m):
        i = seg[e]
        for j in range(k):
            v = exp(scores[e, j] - seg_max[i, j])
            alpha[e, j] = v
            denom[i, j] += v
    for e in range(m):
        i = seg[e]
        for j in range(k):
            alpha[e, j] /= denom[i, j]
    return alpha_arr


def edge_softmax_bwd_cols(double[:, ::1] alpha, double[:, ::1] grad,
                          long long[::1] seg, Py_ssize_t n):
    cdef Py_ssize_t m = alpha.shape[0]
    cdef Py_ssize_t k = alpha.shape[1]
    out_arr = np.zeros((m, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if m == 0:
        return out_arr
    s_arr = np.zeros((n, k), dtype=np.float64)
    cdef double[:, ::1] s = s_arr
    cdef Py_ssize_t e, j, i
    cdef double t
    for e in range(m):
        i = seg[e]
        for j in range(k):
            t = alpha[e, j] * grad[e, j]
            out[e, j] = t
            s[i, j] += t
    for e in range(m):
        i = seg[e]
        for j in range(k):
            out[e, j] -= alpha[e, j] * s[i, j]
    return out_arr

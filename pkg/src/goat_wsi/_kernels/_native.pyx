# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled segment reductions. Same contracts as goat_wsi._kernels._numpy."""

from libc.stdint cimport int64_t

import numpy as np


def segment_sum(const double[:, ::1] values, const int64_t[::1] seg, Py_ssize_t n_segments):
    cdef Py_ssize_t rows = values.shape[0]
    cdef Py_ssize_t cols = values.shape[1]
    out_arr = np.zeros((n_segments, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c
    cdef int64_t s
    for r in range(rows):
        s = seg[r]
        for c in range(cols):
            out[s, c] += values[r, c]
    return out_arr


def segment_max(const double[:, ::1] values, const int64_t[::1] seg, Py_ssize_t n_segments):
    cdef Py_ssize_t rows = values.shape[0]
    cdef Py_ssize_t cols = values.shape[1]
    out_arr = np.full((n_segments, cols), -np.inf, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c
    cdef int64_t s
    cdef double v
    for r in range(rows):
        s = seg[r]
        for c in range(cols):
            v = values[r, c]
            if v > out[s, c]:
                out[s, c] = v
    return out_arr

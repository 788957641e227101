# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled propagation kernels.

Every row is reduced in stored neighbor order, one column at a time, so
results do not depend on block width or on which thread runs the call.
"""
import numpy as np

from libc.math cimport fabs
from libc.stdint cimport int32_t, int64_t

NAME = "cython"


cdef void _spmm(const int64_t[::1] indptr, const int32_t[::1] indices,
                const double[:, ::1] Z, double[:, ::1] Y) noexcept nogil:
    cdef Py_ssize_t n = Y.shape[0], B = Y.shape[1]
    cdef Py_ssize_t r, k, b
    cdef double acc
    cdef double* y
    cdef const double* z
    cdef const double* z0 = &Z[0, 0]
    cdef const int32_t* idx = &indices[0] if indices.shape[0] else NULL
    if B == 1:
        for r in range(n):
            acc = 0.0
            for k in range(indptr[r], indptr[r + 1]):
                acc = acc + z0[idx[k]]
            Y[r, 0] = acc
        return
    for r in range(n):
        y = &Y[r, 0]
        for b in range(B):
            y[b] = 0.0
        for k in range(indptr[r], indptr[r + 1]):
            z = &Z[indices[k], 0]
            for b in range(B):
                y[b] = y[b] + z[b]


cdef void _spmm_w(const int64_t[::1] indptr, const int32_t[::1] indices,
                  const double[::1] w, const double[:, ::1] Z,
                  double[:, ::1] Y) noexcept nogil:
    cdef Py_ssize_t n = Y.shape[0], B = Y.shape[1]
    cdef Py_ssize_t r, k, b
    cdef double wk, acc
    cdef double* y
    cdef const double* z
    cdef const double* z0 = &Z[0, 0]
    cdef const int32_t* idx = &indices[0] if indices.shape[0] else NULL
    cdef const double* wp = &w[0] if w.shape[0] else NULL
    if B == 1:
        for r in range(n):
            acc = 0.0
            for k in range(indptr[r], indptr[r + 1]):
                acc = acc + wp[k] * z0[idx[k]]
            Y[r, 0] = acc
        return
    for r in range(n):
        y = &Y[r, 0]
        for b in range(B):
            y[b] = 0.0
        for k in range(indptr[r], indptr[r + 1]):
            z = &Z[indices[k], 0]
            wk = w[k]
            for b in range(B):
                y[b] = y[b] + wk * z[b]


def spmm(const int64_t[::1] indptr, const int32_t[::1] indices, weights,
         const double[:, ::1] Z, double[:, ::1] Y):
    """``Y = A @ Z`` for a CSR pattern ``A`` (unit weights when ``weights`` is None)."""
    cdef const double[::1] w
    if weights is None:
        with nogil:
            _spmm(indptr, indices, Z, Y)
    else:
        w = weights
        with nogil:
            _spmm_w(indptr, indices, w, Z, Y)


def abs_diff_colsum(const double[:, ::1] A, const double[:, ::1] B):
    """Per-column L1 distance between two equally shaped blocks."""
    cdef Py_ssize_t n = A.shape[0], m = A.shape[1], r, b
    out = np.zeros(m)
    cdef double[::1] o = out
    with nogil:
        for r in range(n):
            for b in range(m):
                o[b] += fabs(A[r, b] - B[r, b])
    return out


def colsum(const double[:, ::1] A):
    cdef Py_ssize_t n = A.shape[0], m = A.shape[1], r, b
    out = np.zeros(m)
    cdef double[::1] o = out
    with nogil:
        for r in range(n):
            for b in range(m):
                o[b] += A[r, b]
    return out


def pair_abs_sum(const int64_t[::1] rows, const int64_t[::1] cols,
                 const double[:, ::1] C, const double[:, ::1] D):
    """Per column: sum over k of |C[rows[k], b] + D[cols[k], b]|."""
    cdef Py_ssize_t n = rows.shape[0], m = C.shape[1], k, b
    out = np.zeros(m)
    cdef double[::1] o = out
    cdef const double* c
    cdef const double* d
    with nogil:
        for k in range(n):
            c = &C[rows[k], 0]
            d = &D[cols[k], 0]
            for b in range(m):
                o[b] += fabs(c[b] + d[b])
    return out

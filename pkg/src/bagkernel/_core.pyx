# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled row-sum kernel for the Gaussian patch kernel.

Dot products come from BLAS one tile at a time; the exponential and the
per-row accumulation run in C with the GIL released, so callers may fan
pairs out over a thread pool.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _rowsums(const double* x, const double* y, const double* nx,
                   const double* ny, Py_ssize_t n, Py_ssize_t m, Py_ssize_t d,
                   double scale, Py_ssize_t tile, double* gram,
                   double* out) noexcept nogil:
    cdef Py_ssize_t i0, j0, i1, j1, i, j, ti, tj
    cdef double s, acc, xi
    cdef double* row
    cdef int bm, bn, bk, lda, ldb, ldc
    cdef double one = 1.0, zero = 0.0
    cdef char trans_t = b'T'
    cdef char trans_n = b'N'
    for i in range(n):
        out[i] = 0.0
    i0 = 0
    while i0 < n:
        i1 = i0 + tile if i0 + tile < n else n
        ti = i1 - i0
        j0 = 0
        while j0 < m:
            j1 = j0 + tile if j0 + tile < m else m
            tj = j1 - j0
            # column-major view: gram[tj x ti] = Y_tile (tj x d) . X_tile^T
            bm = <int>tj
            bn = <int>ti
            bk = <int>d
            lda = <int>d
            ldb = <int>d
            ldc = <int>tj
            dgemm(&trans_t, &trans_n, &bm, &bn, &bk, &one,
                  <double*>(y + j0 * d), &lda, <double*>(x + i0 * d), &ldb,
                  &zero, gram, &ldc)
            for i in range(ti):
                row = gram + i * tj
                xi = nx[i0 + i]
                for j in range(tj):
                    s = xi + ny[j0 + j] - 2.0 * row[j]
                    row[j] = -scale * (s if s > 0.0 else 0.0)
                for j in range(tj):
                    row[j] = exp(row[j])
                acc = out[i0 + i]
                for j in range(tj):
                    acc = acc + row[j]
                out[i0 + i] = acc
            j0 = j1
        i0 = i1


def kernel_rowsums(x, y, double scale, Py_ssize_t tile=1024):
    """Row sums of ``exp(-scale * ||x_i - y_j||^2)`` over ``j``.

    ``x`` is ``(n, d)``, ``y`` is ``(m, d)``; both are converted to
    C-contiguous float64. Squared distances are clamped at zero before the
    exponential. The result is a pure function of the inputs and ``tile``;
    changing ``tile`` moves the last few bits only.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] ya = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = xa.shape[0], m = ya.shape[0], d = xa.shape[1]
    if ya.shape[1] != d:
        raise ValueError(f"dimension mismatch: {d} vs {ya.shape[1]}")
    if tile < 1:
        raise ValueError("tile must be positive")
    if n == 0 or m == 0 or d == 0:
        raise ValueError("empty input")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] nx = np.einsum("ij,ij->i", xa, xa)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ny = np.einsum("ij,ij->i", ya, ya)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t t = tile
    if t > n and t > m:
        t = n if n > m else m
    cdef double* gram = <double*>malloc(t * t * sizeof(double))
    if gram == NULL:
        raise MemoryError(f"cannot allocate a {t}x{t} tile")
    try:
        with nogil:
            _rowsums(&xa[0, 0], &ya[0, 0], &nx[0], &ny[0], n, m, d, scale, t,
                     gram, &out[0])
    finally:
        free(gram)
    return out

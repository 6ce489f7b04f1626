# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled sign-select GEMV kernels over bit-packed {-1,+1} factors.

Bit convention: bit=1 encodes +1, bit=0 encodes -1, LSB-first within each
64-bit word, ceil(cols/64) words per row, pad bits zero.

Each output accumulates in float64 in a fixed ascending order. The sum
over a +/-1 row is computed as 2*(sum over set bits) - (sum over all
entries), which visits indices in ascending order and therefore keeps
results reproducible run to run.
"""

import numpy as np

cdef extern from *:
    """
    #include <stdint.h>
    static inline int lb_ctz64(uint64_t x) { return __builtin_ctzll(x); }
    """
    int lb_ctz64(unsigned long long x) nogil


def gemv_right(const double[::1] x, const unsigned long long[:, ::1] words, Py_ssize_t cols):
    """y_j = sum_i x_i * sign_ij for a packed (rows x cols) factor."""
    cdef Py_ssize_t rows = words.shape[0]
    cdef Py_ssize_t wpr = words.shape[1]
    cdef Py_ssize_t i, wi, joff
    cdef unsigned long long w
    cdef double xi, total = 0.0
    out = np.zeros(cols, dtype=np.float64)
    cdef double[::1] t = out
    with nogil:
        for i in range(rows):
            xi = x[i]
            total += xi
            for wi in range(wpr):
                w = words[i, wi]
                joff = wi * 64
                while w:
                    t[joff + lb_ctz64(w)] += xi
                    w &= w - 1
        for wi in range(cols):
            t[wi] = 2.0 * t[wi] - total
    return out


def gemv_left(const double[::1] z, const unsigned long long[:, ::1] words, Py_ssize_t cols):
    """y_i = sum_j z_j * sign_ij for a packed (rows x cols) factor."""
    cdef Py_ssize_t rows = words.shape[0]
    cdef Py_ssize_t wpr = words.shape[1]
    cdef Py_ssize_t i, wi, joff
    cdef unsigned long long w
    cdef double acc, ztot = 0.0
    out = np.empty(rows, dtype=np.float64)
    cdef double[::1] y = out
    with nogil:
        for wi in range(cols):
            ztot += z[wi]
        for i in range(rows):
            acc = 0.0
            for wi in range(wpr):
                w = words[i, wi]
                joff = wi * 64
                while w:
                    acc += z[joff + lb_ctz64(w)]
                    w &= w - 1
            y[i] = 2.0 * acc - ztot
    return out

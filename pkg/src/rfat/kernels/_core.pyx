# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: complex IIR recurrence and ARVTDNN feature build.

Implements the same arithmetic as the NumPy/SciPy fallback in ``_ref``
(transposed direct form II with the same update order as scipy's lfilter),
so the two backends agree to floating-point round-off.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def iir_filter(double[::1] b, double[::1] a, double complex[::1] x):
    """Transposed direct form II filter over a complex sequence, zero state."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t order = b.shape[0] - 1
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] y = out
    cdef double complex[::1] z = np.zeros(order, dtype=np.complex128)
    cdef double complex xn, yn
    cdef Py_ssize_t i, k

    if order == 0:
        for i in range(n):
            y[i] = b[0] * x[i]
        return out

    for i in range(n):
        xn = x[i]
        yn = b[0] * xn + z[0]
        for k in range(order - 1):
            z[k] = b[k + 1] * xn + z[k + 1] - a[k + 1] * yn
        z[order - 1] = b[order] * xn - a[order] * yn
        y[i] = yn
    return out


def arvtdnn_features(double complex[::1] x, int memory_depth, int envelope_order):
    """Per-sample delayed I/Q + envelope-power features, shape (N, (M+1)*(2+K))."""
    cdef Py_ssize_t n = x.shape[0]
    cdef int m_taps = memory_depth + 1
    cdef int k_ord = envelope_order
    cdef int width = m_taps * (2 + k_ord)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, width), dtype=np.float64)
    cdef double[:, ::1] feats = out
    cdef Py_ssize_t i
    cdef int m, k, base
    cdef double re, im, env, power

    for i in range(n):
        for m in range(m_taps):
            if i - m >= 0:
                re = x[i - m].real
                im = x[i - m].imag
            else:
                re = 0.0
                im = 0.0
            feats[i, 2 * m] = re
            feats[i, 2 * m + 1] = im
            env = sqrt(re * re + im * im)
            base = 2 * m_taps + m * k_ord
            power = env
            for k in range(k_ord):
                if k > 0:
                    power = power * env
                feats[i, base + k] = power
    return out

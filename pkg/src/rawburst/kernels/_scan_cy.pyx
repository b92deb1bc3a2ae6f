# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scan kernels.

Same contracts as the numpy fallback: [L, D, N] arrays, each (d, n) lane
an independent first-order linear recurrence evaluated strictly in step
order.
"""

import numpy as np

cimport cython
from cython cimport floating

BACKEND = "compiled"


cdef void _fwd_seq(floating[:, :, :] abar, floating[:, :, :] bu,
                   floating[:, :, :] h) noexcept nogil:
    cdef Py_ssize_t length = abar.shape[0]
    cdef Py_ssize_t d = abar.shape[1]
    cdef Py_ssize_t n = abar.shape[2]
    cdef Py_ssize_t t, i, j
    cdef floating state
    for i in range(d):
        for j in range(n):
            state = 0
            for t in range(length):
                state = abar[t, i, j] * state + bu[t, i, j]
                h[t, i, j] = state


cdef void _bwd_seq(floating[:, :, :] abar, floating[:, :, :] g,
                   floating[:, :, :] dh) noexcept nogil:
    cdef Py_ssize_t length = abar.shape[0]
    cdef Py_ssize_t d = abar.shape[1]
    cdef Py_ssize_t n = abar.shape[2]
    cdef Py_ssize_t t, i, j
    cdef floating state
    for i in range(d):
        for j in range(n):
            state = 0
            for t in range(length - 1, -1, -1):
                if t == length - 1:
                    state = g[t, i, j]
                else:
                    state = g[t, i, j] + abar[t + 1, i, j] * state
                dh[t, i, j] = state


cdef void _chunk_local(floating[:, :, :, :] abar, floating[:, :, :, :] bu,
                       floating[:, :, :, :] local, floating[:, :, :, :] aprod) noexcept nogil:
    cdef Py_ssize_t n_chunks = abar.shape[0]
    cdef Py_ssize_t k = abar.shape[1]
    cdef Py_ssize_t d = abar.shape[2]
    cdef Py_ssize_t n = abar.shape[3]
    cdef Py_ssize_t c, t, i, j
    cdef floating state, prod
    for c in range(n_chunks):
        for i in range(d):
            for j in range(n):
                state = 0
                prod = 1
                for t in range(k):
                    state = abar[c, t, i, j] * state + bu[c, t, i, j]
                    local[c, t, i, j] = state
                    prod = prod * abar[c, t, i, j]
                    aprod[c, t, i, j] = prod


def scan_fwd_seq(abar, bu):
    """h[t] = abar[t] * h[t-1] + bu[t], h[-1] = 0, strictly in order."""
    h = np.empty_like(bu)
    if abar.dtype == np.float32:
        _fwd_seq[float](abar, bu, h)
    else:
        _fwd_seq[double](abar, bu, h)
    return h


def scan_bwd_seq(abar, g):
    """Adjoint recurrence dh[t] = g[t] + abar[t+1] * dh[t+1], in reverse."""
    dh = np.empty_like(g)
    if abar.dtype == np.float32:
        _bwd_seq[float](abar, g, dh)
    else:
        _bwd_seq[double](abar, g, dh)
    return dh


def chunk_local_scan(abar, bu):
    """Within-chunk zero-start scans plus running abar products."""
    local = np.empty_like(bu)
    aprod = np.empty_like(abar)
    if abar.dtype == np.float32:
        _chunk_local[float](abar, bu, local, aprod)
    else:
        _chunk_local[double](abar, bu, local, aprod)
    return local, aprod

# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled adaptation kernel: sequential GSC-LMS weight recursions.

Same contract as _kernel_py; see kernel.py for the dispatch and the
precomputation of yq (quiescent output) and V (blocked projections).
"""

import numpy as np

from scipy.linalg.cython_blas cimport dgemv

DIVERGENCE_LIMIT = 1e6

cdef double _LIMIT = 1e6


def run_split(double[::1] u_pad, double[::1] yq, double[:, ::1] V,
              double[::1] psi, Py_ssize_t n_aec, double mu_aec, double mu_bf,
              Py_ssize_t n0, Py_ssize_t n1, double[::1] d_out):
    """Split-step recursion; returns the first divergent sample or -1."""
    cdef Py_ssize_t n, k, j
    cdef Py_ssize_t n_b = V.shape[1]
    cdef Py_ssize_t diverged = -1
    cdef double d, acc, scale
    with nogil:
        for n in range(n0, n1):
            acc = yq[n]
            for k in range(n_aec):
                acc -= u_pad[n + n_aec - 1 - k] * psi[k]
            for j in range(n_b):
                acc -= V[n, j] * psi[n_aec + j]
            d = acc
            d_out[n] = d
            if not (d <= _LIMIT and d >= -_LIMIT):
                diverged = n
                break
            scale = mu_aec * d
            for k in range(n_aec):
                psi[k] += scale * u_pad[n + n_aec - 1 - k]
            scale = mu_bf * d
            for j in range(n_b):
                psi[n_aec + j] += scale * V[n, j]
    return diverged


def run_general(double[::1] u_pad, double[::1] yq, double[:, ::1] V,
                double[::1] psi, Py_ssize_t n_aec, double[:, ::1] m_matrix,
                Py_ssize_t n0, Py_ssize_t n1, double[::1] d_out):
    """General positive-definite step-matrix recursion."""
    cdef Py_ssize_t n, k, j, i
    cdef Py_ssize_t n_b = V.shape[1]
    cdef Py_ssize_t n_psi = psi.shape[0]
    cdef Py_ssize_t diverged = -1
    cdef double d, acc
    cdef int bn = <int> n_psi, inc = 1
    cdef double one = 1.0, zero = 0.0
    cdef char trans = b'N'
    g_arr = np.empty(n_psi)
    step_arr = np.empty(n_psi)
    cdef double[::1] g = g_arr
    cdef double[::1] step = step_arr
    with nogil:
        for n in range(n0, n1):
            for k in range(n_aec):
                g[k] = u_pad[n + n_aec - 1 - k]
            for j in range(n_b):
                g[n_aec + j] = V[n, j]
            acc = yq[n]
            for i in range(n_psi):
                acc -= g[i] * psi[i]
            d = acc
            d_out[n] = d
            if not (d <= _LIMIT and d >= -_LIMIT):
                diverged = n
                break
            # step = M @ g; the row-major buffer is the column-major
            # transpose, which is fine: M is symmetric
            dgemv(&trans, &bn, &bn, &one, &m_matrix[0, 0], &bn,
                  &g[0], &inc, &zero, &step[0], &inc)
            for i in range(n_psi):
                psi[i] += d * step[i]
    return diverged

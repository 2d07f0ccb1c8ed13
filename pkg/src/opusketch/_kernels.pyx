"""Compiled accumulation kernel for multi-scale RFF sketching.

Built with -ffast-math so gcc maps the inner ``cos``/``sin`` calls onto
glibc's vectorised libmvec routines (<= 4 ulp).
"""
from libc.math cimport cos, sin


def accumulate_phases(double[:, ::1] proj, double[::1] scales,
                      double[:, ::1] acc_re, double[:, ::1] acc_im):
    """Add sum_i exp(-i * scales[k] * proj[i, m]) into ``acc_re + 1j*acc_im``.

    ``proj`` is (n, M) and must be writeable (it is only read); the
    accumulators are (S, M) and updated in place.
    """
    cdef Py_ssize_t n = proj.shape[0]
    cdef Py_ssize_t M = proj.shape[1]
    cdef Py_ssize_t S = scales.shape[0]
    cdef Py_ssize_t i, k, m
    cdef double s
    cdef double* row
    cdef double* out_re
    cdef double* out_im

    if acc_re.shape[0] != S or acc_im.shape[0] != S:
        raise ValueError("accumulator rows must equal the number of scales")
    if acc_re.shape[1] != M or acc_im.shape[1] != M:
        raise ValueError("accumulator width must equal the projection width")
    if n == 0 or M == 0:
        return

    with nogil:
        for i in range(n):
            row = &proj[i, 0]
            for k in range(S):
                s = scales[k]
                out_re = &acc_re[k, 0]
                out_im = &acc_im[k, 0]
                for m in range(M):
                    out_re[m] += cos(s * row[m])
                    out_im[m] -= sin(s * row[m])

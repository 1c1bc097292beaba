# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled assembly kernel; see _assembly_py for the reference semantics."""

import numpy as np


def element_matrices(coef, smat):
    """Accumulate weighted element matrices.

    out[e, j, i] = sum_q coef[e, q] * smat[q, j, i]

    The (j, i) block is flattened so the inner loop runs over one contiguous
    span per quadrature point, which the C compiler vectorizes.
    """
    coef = np.ascontiguousarray(coef, dtype=np.float64)
    smat = np.ascontiguousarray(smat, dtype=np.float64)
    cdef Py_ssize_t ne = coef.shape[0]
    cdef Py_ssize_t nq = coef.shape[1]
    cdef Py_ssize_t nr = smat.shape[1]
    cdef Py_ssize_t nc = smat.shape[2]
    cdef Py_ssize_t nrc = nr * nc
    cdef const double[:, ::1] c = coef
    cdef const double[:, ::1] s = smat.reshape(nq, nrc)
    out_arr = np.zeros((ne, nrc), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t e, q, k
    cdef double cq
    for e in range(ne):
        for q in range(nq):
            cq = c[e, q]
            for k in range(nrc):
                out[e, k] += cq * s[q, k]
    return out_arr.reshape(ne, nr, nc)

"""Numpy fallback for the assembly kernel."""

import numpy as np


def element_matrices(coef, smat):
    """Accumulate weighted element matrices.

    out[e, j, i] = sum_q coef[e, q] * smat[q, j, i]

    coef holds the coefficient values at the quadrature points of each
    element; smat holds the quadrature-weighted products of test/trial basis
    gradients (shared by all elements of a uniform mesh).
    """
    coef = np.ascontiguousarray(coef, dtype=np.float64)
    smat = np.ascontiguousarray(smat, dtype=np.float64)
    nq, nr, nc = smat.shape
    out = coef @ smat.reshape(nq, nr * nc)
    return out.reshape(coef.shape[0], nr, nc)

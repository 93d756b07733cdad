# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 7-band stencil matvec. See _stencil_np for the reference semantics."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def stencil_matvec(
    cnp.float64_t[:, :, ::1] diag,
    cnp.float64_t[:, :, ::1] cxm,
    cnp.float64_t[:, :, ::1] cxp,
    cnp.float64_t[:, :, ::1] cym,
    cnp.float64_t[:, :, ::1] cyp,
    cnp.float64_t[:, :, ::1] czm,
    cnp.float64_t[:, :, ::1] czp,
    cnp.float64_t[:, :, ::1] x,
    cnp.float64_t[:, :, ::1] out,
):
    cdef Py_ssize_t nz = x.shape[0]
    cdef Py_ssize_t ny = x.shape[1]
    cdef Py_ssize_t nx = x.shape[2]
    cdef Py_ssize_t i, j, k
    cdef double acc

    with nogil:
        for k in range(nz):
            for j in range(ny):
                for i in range(nx):
                    acc = diag[k, j, i] * x[k, j, i]
                    if i > 0:
                        acc += cxm[k, j, i] * x[k, j, i - 1]
                    if i < nx - 1:
                        acc += cxp[k, j, i] * x[k, j, i + 1]
                    if j > 0:
                        acc += cym[k, j, i] * x[k, j - 1, i]
                    if j < ny - 1:
                        acc += cyp[k, j, i] * x[k, j + 1, i]
                    if k > 0:
                        acc += czm[k, j, i] * x[k - 1, j, i]
                    if k < nz - 1:
                        acc += czp[k, j, i] * x[k + 1, j, i]
                    out[k, j, i] = acc
    return np.asarray(out)

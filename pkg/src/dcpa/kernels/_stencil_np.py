"""Pure-numpy stencil matvec, the fallback backend.

Semantics match dcpa.kernels._stencil exactly: coefficient arrays pointing
outside the grid must be zero in their boundary slabs (the operator builders
guarantee this), so shifted slices never wrap values into the result.
"""

import numpy as np


def stencil_matvec(diag, cxm, cxp, cym, cyp, czm, czp, x, out):
    """out[k,j,i] = diag*x[k,j,i] + sum of six neighbor terms.

    cxm multiplies x[k,j,i-1], cxp multiplies x[k,j,i+1], and so on for
    y and z. All arrays are (nz, ny, nx) float64, C-contiguous.
    """
    np.multiply(diag, x, out=out)
    out[:, :, 1:] += cxm[:, :, 1:] * x[:, :, :-1]
    out[:, :, :-1] += cxp[:, :, :-1] * x[:, :, 1:]
    out[:, 1:, :] += cym[:, 1:, :] * x[:, :-1, :]
    out[:, :-1, :] += cyp[:, :-1, :] * x[:, 1:, :]
    out[1:, :, :] += czm[1:, :, :] * x[:-1, :, :]
    out[:-1, :, :] += czp[:-1, :, :] * x[1:, :, :]
    return out

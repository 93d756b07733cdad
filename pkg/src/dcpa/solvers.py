"""Matrix-free Krylov solvers over the 7-band stencil operator.

Conjugate gradient handles the symmetric potential-flow system (semidefinite
with a constant null space on the fluid region, deflated by mean projection);
Jacobi-preconditioned BiCGStab handles the nonsymmetric transport system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConvergenceError


@dataclass
class StencilOperator:
    """y = diag*x + six one-sided neighbor terms; arrays are (nz, ny, nx)."""

    diag: np.ndarray
    cxm: np.ndarray
    cxp: np.ndarray
    cym: np.ndarray
    cyp: np.ndarray
    czm: np.ndarray
    czp: np.ndarray

    def matvec(self, x, out=None):
        if out is None:
            out = np.empty_like(x)
        kernels.stencil_matvec(self.diag, self.cxm, self.cxp, self.cym,
                               self.cyp, self.czm, self.czp, x, out)
        return out

    @classmethod
    def zeros(cls, shape):
        return cls(*[np.zeros(shape, dtype=np.float64) for _ in range(7)])


def _dot(a, b):
    return float(np.dot(a.ravel(), b.ravel()))


def cg(op, b, x0=None, tol_rel=1e-8, abs_cap=None, max_iter=None, project=None):
    """Preconditioned CG. Returns (x, final_rel_residual, iterations).

    project, if given, removes the operator null-space component from a
    vector in place (used to deflate the constant mode of the pure-Neumann
    potential system).
    """
    n = b.size
    if max_iter is None:
        max_iter = 50 * n
    x = np.zeros_like(b) if x0 is None else x0.copy()
    if project is not None:
        project(b)
    inv_diag = np.where(op.diag != 0.0, 1.0 / np.where(op.diag == 0.0, 1.0, op.diag), 0.0)

    r = b - op.matvec(x)
    if project is not None:
        project(r)
    b_norm = np.linalg.norm(b.ravel())
    if b_norm == 0.0:
        return x, 0.0, 0
    z = inv_diag * r
    p = z.copy()
    rz = _dot(r, z)
    q = np.empty_like(b)
    for it in range(1, max_iter + 1):
        op.matvec(p, out=q)
        alpha = rz / _dot(p, q)
        x += alpha * p
        r -= alpha * q
        if project is not None and it % 25 == 0:
            project(r)
        r_norm = np.linalg.norm(r.ravel())
        ok_rel = r_norm <= tol_rel * b_norm
        ok_abs = abs_cap is None or np.abs(r).max() <= abs_cap
        if ok_rel and ok_abs:
            return x, r_norm / b_norm, it
        z = inv_diag * r
        rz_new = _dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"CG failed to reach {tol_rel:g} in {max_iter} iterations "
        f"(relative residual {np.linalg.norm(r.ravel()) / b_norm:.3e})")


def bicgstab(op, b, x0=None, tol_rel=1e-8, max_iter=None):
    """Jacobi-preconditioned BiCGStab. Returns (x, final_rel_residual, iters)."""
    n = b.size
    if max_iter is None:
        max_iter = 50 * n
    x = np.zeros_like(b) if x0 is None else x0.copy()
    inv_diag = np.where(op.diag != 0.0, 1.0 / np.where(op.diag == 0.0, 1.0, op.diag), 1.0)

    r = b - op.matvec(x)
    b_norm = np.linalg.norm(b.ravel())
    if b_norm == 0.0:
        b_norm = 1.0
    if np.linalg.norm(r.ravel()) <= tol_rel * b_norm:
        return x, np.linalg.norm(r.ravel()) / b_norm, 0

    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    t = np.empty_like(b)
    for it in range(1, max_iter + 1):
        rho_new = _dot(r_hat, r)
        if abs(rho_new) < 1e-300:
            r_hat = r.copy()
            rho_new = _dot(r_hat, r)
            if abs(rho_new) < 1e-300:
                break
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        phat = inv_diag * p
        op.matvec(phat, out=v)
        alpha = rho / _dot(r_hat, v)
        s = r - alpha * v
        x += alpha * phat
        if np.linalg.norm(s.ravel()) <= tol_rel * b_norm:
            return x, np.linalg.norm(s.ravel()) / b_norm, it
        shat = inv_diag * s
        op.matvec(shat, out=t)
        tt = _dot(t, t)
        if tt == 0.0:
            r = s
            break
        omega = _dot(t, s) / tt
        x += omega * shat
        r = s - omega * t
        if np.linalg.norm(r.ravel()) <= tol_rel * b_norm:
            return x, np.linalg.norm(r.ravel()) / b_norm, it
        if omega == 0.0:
            break
    rel = np.linalg.norm((b - op.matvec(x)).ravel()) / b_norm
    if rel <= tol_rel:
        return x, rel, max_iter
    raise ConvergenceError(
        f"BiCGStab failed to reach {tol_rel:g} in {max_iter} iterations "
        f"(relative residual {rel:.3e})")

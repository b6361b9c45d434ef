"""Conjugate gradient kernel used by every implicit substep.

All implicit operators in this package are assembled in quadrature-weighted
form, which makes them symmetric positive definite in the ordinary dot
product, so a single plain CG routine serves the scalar diffusion solves,
the elasticity solves and the damage Newton steps alike.
"""
import math

import numpy as np

from .errors import SolverError


def cg_solve(A, b, x0=None, rtol=1e-10, maxiter=None, label="cg", precond=None):
    """Solve A x = b for symmetric positive definite A.

    Parameters
    ----------
    A : scipy sparse matrix or object with a matvec-compatible ``@``
    b : right-hand side vector
    x0 : optional warm start
    rtol : convergence threshold on ||r|| / ||b||
    maxiter : iteration cap, defaults to 10 * sqrt(len(b))
    label : name used in the non-convergence error
    precond : optional callable applying an SPD approximate inverse of A

    Returns
    -------
    (x, iterations)
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    if maxiter is None:
        maxiter = int(math.ceil(10.0 * math.sqrt(b.size)))
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    resid = np.linalg.norm(r)
    if resid <= rtol * bnorm:
        return x, 0
    z = r if precond is None else precond(r)
    p = z.copy()
    rz = float(r @ z)
    history = [resid / bnorm]
    for k in range(1, maxiter + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise SolverError(
                f"{label}: operator lost positive definiteness (p.Ap = {pAp:.3e})",
                history,
            )
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        resid = np.linalg.norm(r)
        history.append(resid / bnorm)
        if resid <= rtol * bnorm:
            return x, k
        z = r if precond is None else precond(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"{label}: no convergence in {maxiter} iterations "
        f"(relative residual {resid / bnorm:.3e})",
        history,
    )

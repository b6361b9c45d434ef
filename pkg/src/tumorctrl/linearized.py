"""Tangent dynamics of the forward solver.

solve_linearized marches the exact Frechet derivative of the discrete
scheme: every substep differentiates the corresponding state substep at
the stored trajectory, keeping the same implicit operators and the same
staggering of old and new fields.  Because the tangent is exact up to the
inner solver tolerances, comparing one linearized solve against finite
differences of two nonlinear solves is a two-sided consistency check on
both solvers; taylor_test packages that comparison.

assemble_coefficients exposes the frozen-coefficient view of the same
derivative: thirteen per-node fields, one for each way a perturbation of
(tumor, lactate, damage, displacement, doses) enters the four equations.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from . import model as mdl
from .grid import stress_from_strain, tensor_dot
from .state import (
    Control,
    StateTrajectory,
    _scalar_precond,
    _scalar_system,
    _viscous_matrix,
    solve_state,
    u_operator,
)
from .linalg import cg_solve


@dataclass
class LinearizedCoefficients:
    """Per-node coefficient fields of the linearized system at one time.

    Scalars multiply scalar perturbations; the c and d2 entries are
    symmetric tensors in (t11, t22, t12) storage and act through the
    double-dot product.
    """

    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    a4: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray
    b4: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray

    def validate(self):
        for name in ("a1", "a2", "a3", "a4", "b1", "b2", "b3", "b4", "c1", "c2", "d1", "d2", "d3"):
            arr = getattr(self, name)
            bad = ~np.isfinite(arr)
            if bad.any():
                node = tuple(
                    int(v) for v in np.unravel_index(int(np.flatnonzero(bad)[0]), arr.shape)
                )
                raise ValueError(f"coefficient {name} non-finite at node {node}")
        return self


def assemble_coefficients(phi, sigma, z, eps, chi1, chi2, spec) -> LinearizedCoefficients:
    """Evaluate all thirteen linearization coefficients at one time level."""
    p = spec.p.value(sigma, z)
    g_ = spec.g.value(sigma, z)
    logi = phi * (1.0 - phi / spec.N)
    a1 = (p - chi1) * (1.0 - 2.0 * phi / spec.N) - g_
    a2 = spec.p.d1(sigma, z) * logi - phi * spec.g.d1(sigma, z)
    a3 = spec.p.d2(sigma, z) * logi - phi * spec.g.d2(sigma, z)
    a4 = -logi

    k1 = spec.k1.value(phi, z)
    k2 = spec.k2.value(phi, z)
    den = k2 + sigma
    b1 = -spec.k1.d1(phi, z) * sigma / den + k1 * sigma * spec.k2.d1(phi, z) / den**2
    b1 = b1 + chi2 * spec.S.d1(phi, z)
    b2 = -k1 / den + k1 * sigma / den**2
    b3 = -spec.k1.d2(phi, z) * sigma / den + k1 * sigma * spec.k2.d2(phi, z) / den**2
    b3 = b3 + chi2 * spec.S.d2(phi, z)
    b4 = spec.S.value(phi, z)

    c1 = -stress_from_strain(spec.B_mu.d1(phi, z), spec.B_lam.d1(phi, z), eps)
    c2 = -stress_from_strain(spec.B_mu.d2(phi, z), spec.B_lam.d2(phi, z), eps)

    d1 = -spec.psi.d_phi(phi, eps)
    d2 = -spec.psi.d_eps(phi, eps)
    d3 = -(mdl.beta_prime(z, spec) + mdl.pi_prime(z, spec))
    return LinearizedCoefficients(a1, a2, a3, a4, b1, b2, b3, b4, c1, c2, d1, d2, d3).validate()


@dataclass
class LinearizedTrajectory:
    """Tangent fields along a stored state trajectory."""

    grid: object
    times: np.ndarray
    xi: np.ndarray
    rho: np.ndarray
    omega: np.ndarray
    eps_omega: np.ndarray
    zeta: np.ndarray

    @property
    def n_steps(self):
        return len(self.times) - 1


def solve_linearized(traj: StateTrajectory, direction: Control, spec) -> LinearizedTrajectory:
    """Differentiate the forward march along a dose perturbation.

    Substeps mirror the state solver: the tumor and lactate tangents take
    their coefficients from the old time level, the displacement tangent
    sees the moduli at (new tumor, old damage) contracted with the new
    strain, and the damage tangent is implicit in its own slope.
    """
    g = spec.grid
    direction.validate()
    K = traj.n_steps
    if direction.n_steps != K:
        raise ValueError("direction defined on a different number of steps")
    if traj.control is None:
        raise ValueError("trajectory carries no control; solve_state stores it")
    chi1, chi2 = traj.control.chi1, traj.control.chi2
    tau = traj.tau
    w = g.quad_weights
    shape = g.shape

    xi = np.zeros((K + 1,) + shape)
    rho = np.zeros_like(xi)
    zeta = np.zeros_like(xi)
    omega = np.zeros((K + 1, 2) + shape)
    eps_omega = np.zeros((K + 1, 3) + shape)

    A_n = _scalar_system(g, float(tau), False)
    A_r = _scalar_system(g, float(tau), True)
    P_n = _scalar_precond(g, float(tau), False)
    P_r = _scalar_precond(g, float(tau), True)
    K_A = _viscous_matrix(g, spec.A_mu, spec.A_lam)
    idx = g.interior_vector_indices
    gtw = g.sym_grad_weighted_transpose
    M0_int = u_operator(spec, traj.phi[1], traj.z[0], tau)[idx][:, idx]
    precond = splu(M0_int.tocsc()).solve

    for n in range(K):
        ph, sg, zz = traj.phi[n], traj.sigma[n], traj.z[n]
        p = spec.p.value(sg, zz)
        g_ = spec.g.value(sg, zz)
        logi = ph * (1.0 - ph / spec.N)

        # tumor tangent, all coefficients at level n
        a1 = (p - chi1[n]) * (1.0 - 2.0 * ph / spec.N) - g_
        a2 = spec.p.d1(sg, zz) * logi - ph * spec.g.d1(sg, zz)
        a3 = spec.p.d2(sg, zz) * logi - ph * spec.g.d2(sg, zz)
        rhs = w * (xi[n] + tau * (a1 * xi[n] + a2 * rho[n] + a3 * zeta[n] - logi * direction.chi1[n])).ravel()
        sol, _ = cg_solve(A_n, rhs, x0=xi[n].ravel(), label="xi-step", precond=P_n)
        xi[n + 1] = sol.reshape(shape)

        # lactate tangent, same old-level staggering as the state solver
        k1 = spec.k1.value(ph, zz)
        k2 = spec.k2.value(ph, zz)
        den = k2 + sg
        b1 = -spec.k1.d1(ph, zz) * sg / den + k1 * sg * spec.k2.d1(ph, zz) / den**2
        b1 = b1 + chi2[n] * spec.S.d1(ph, zz)
        b2 = -k1 / den + k1 * sg / den**2
        b3 = -spec.k1.d2(ph, zz) * sg / den + k1 * sg * spec.k2.d2(ph, zz) / den**2
        b3 = b3 + chi2[n] * spec.S.d2(ph, zz)
        b4 = spec.S.value(ph, zz)
        rhs = w * (rho[n] + tau * (b1 * xi[n] + b2 * rho[n] + b3 * zeta[n] + b4 * direction.chi2[n])).ravel()
        sol, _ = cg_solve(A_r, rhs, x0=rho[n].ravel(), label="rho-step", precond=P_r)
        rho[n + 1] = sol.reshape(shape)

        # displacement tangent: moduli derivatives at (new tumor, old damage)
        # contracted with the new strain, exactly as the state substep sees them
        ph_new = traj.phi[n + 1]
        c1 = -stress_from_strain(
            spec.B_mu.d1(ph_new, zz), spec.B_lam.d1(ph_new, zz), traj.eps_u[n + 1]
        )
        c2 = -stress_from_strain(
            spec.B_mu.d2(ph_new, zz), spec.B_lam.d2(ph_new, zz), traj.eps_u[n + 1]
        )
        M = u_operator(spec, ph_new, zz, tau)
        M_int = M[idx][:, idx]
        load = gtw @ (c1 * xi[n + 1] + c2 * zeta[n]).reshape(3, -1).ravel()
        rhs = ((K_A / tau) @ omega[n].reshape(2, -1).ravel() + load)[idx]
        sol, _ = cg_solve(
            M_int, rhs, x0=omega[n].reshape(2, -1).ravel()[idx], label="omega-step", precond=precond
        )
        full = np.zeros(2 * g.n_nodes)
        full[idx] = sol
        omega[n + 1] = full.reshape((2,) + shape)
        eps_omega[n + 1] = g.sym_grad(omega[n + 1])

        # damage tangent, implicit in its own slope at the new iterate
        z_new = traj.z[n + 1]
        d1 = -spec.psi.d_phi(ph_new, traj.eps_u[n + 1])
        d2 = -spec.psi.d_eps(ph_new, traj.eps_u[n + 1])
        slope = mdl.beta_prime(z_new, spec) + mdl.pi_prime(z_new, spec)
        J = (sps.diags(w * (1.0 + tau * slope).ravel()) - tau * g.wl_neumann).tocsr()
        rhs = w * (
            zeta[n] + tau * (d1 * xi[n + 1] + tensor_dot(d2, eps_omega[n + 1]))
        ).ravel()
        sol, _ = cg_solve(J, rhs, x0=zeta[n].ravel(), label="zeta-step", precond=P_n)
        zeta[n + 1] = sol.reshape(shape)

    return LinearizedTrajectory(
        grid=g, times=traj.times.copy(), xi=xi, rho=rho, omega=omega, eps_omega=eps_omega, zeta=zeta
    )


def trajectory_distance(a: StateTrajectory, b, lin: LinearizedTrajectory = None, scale=1.0):
    """Sup over time of the combined field distance between two solves.

    With lin given, measures || b - a - scale*lin || instead, which is the
    Taylor remainder when scale is the perturbation size.
    """
    g = a.grid
    d = 0.0
    for n in range(a.n_steps + 1):
        if lin is None:
            dphi = b.phi[n] - a.phi[n]
            dsig = b.sigma[n] - a.sigma[n]
            dz = b.z[n] - a.z[n]
            du = b.u[n] - a.u[n]
        else:
            dphi = b.phi[n] - a.phi[n] - scale * lin.xi[n]
            dsig = b.sigma[n] - a.sigma[n] - scale * lin.rho[n]
            dz = b.z[n] - a.z[n] - scale * lin.zeta[n]
            du = b.u[n] - a.u[n] - scale * lin.omega[n]
        d = max(
            d,
            g.norm_l2(dphi) + g.norm_l2(dsig) + g.norm_l2(dz) + g.norm_h1_vec(du),
        )
    return d


def taylor_test(control: Control, direction: Control, spec, epsilons=None):
    """Remainder ladder for the tangent solver.

    For each epsilon, solves the nonlinear system at the perturbed dose and
    measures the first-order Taylor remainder against the linearized
    prediction.  Returns the epsilons, first-order distances, remainders
    and the fitted remainder slope; slope 2 means the tangent is exact.
    """
    if not (np.any(direction.chi1) or np.any(direction.chi2)):
        raise ValueError("perturbation direction must be nonzero")
    if epsilons is None:
        epsilons = [0.01 * 0.5**k for k in range(5)]
    epsilons = np.asarray(list(epsilons), dtype=float)
    base = solve_state(control, spec)
    lin = solve_linearized(base, direction, spec)
    first, remainder = [], []
    for eps in epsilons:
        pert = solve_state(
            Control(control.chi1 + eps * direction.chi1, control.chi2 + eps * direction.chi2),
            spec,
        )
        first.append(trajectory_distance(base, pert))
        remainder.append(trajectory_distance(base, pert, lin=lin, scale=eps))
    first = np.array(first)
    remainder = np.array(remainder)
    floor = 1e-12 * max(1.0, float(first.max()))
    keep = remainder > floor
    if keep.sum() >= 2:
        slope = float(np.polyfit(np.log(epsilons[keep]), np.log(remainder[keep]), 1)[0])
    else:
        slope = 2.0
    return {"epsilons": epsilons, "first_order": first, "remainder": remainder, "slope": slope}

"""Cost functional and its adjoint system.

The objective combines nine weighted addends: running and terminal
tracking for tumor and lactate, terminal tumor and damage mass, a strain
burden weighted by a tumor-dependent density, running damage tracking,
and a quadratic dose effort.  solve_adjoint marches the dual system
backward from the terminal payoffs with implicit diffusion and explicit
cross couplings taken from the later time level, mirroring the forward
splitting in reverse.  The dual fields weight how a dose perturbation at
each node propagates into the objective; duality_residual measures how
closely that transfer matches the tangent solver, which is the committed
discretization gap of the gradient (first order in the step).
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from . import model as mdl
from .grid import stress_from_strain, tensor_dot
from .linalg import cg_solve
from .state import (
    StateTrajectory,
    _scalar_precond,
    _scalar_system,
    _viscous_matrix,
    u_operator,
)


_PART_NAMES = (
    "phi-tracking",
    "phi-final-tracking",
    "phi-final-mass",
    "sigma-tracking",
    "sigma-final-tracking",
    "strain-burden",
    "z-tracking",
    "z-final-mass",
    "dose-effort",
)


@dataclass(frozen=True)
class CostWeights:
    """Nonnegative weights of the nine cost addends, not all zero."""

    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 0.0
    alpha4: float = 0.0
    alpha5: float = 0.0
    alpha6: float = 0.0
    alpha7: float = 0.0
    alpha8: float = 0.0
    alpha9: float = 1e-3

    def as_array(self):
        return np.array(
            [
                self.alpha1,
                self.alpha2,
                self.alpha3,
                self.alpha4,
                self.alpha5,
                self.alpha6,
                self.alpha7,
                self.alpha8,
                self.alpha9,
            ]
        )

    def validate(self):
        a = self.as_array()
        if not np.all(np.isfinite(a)) or (a < 0).any():
            raise ValueError("cost weights must be finite and nonnegative")
        if not (a > 0).any():
            raise ValueError("at least one cost weight must be positive")
        return self


@dataclass
class Targets:
    """Spatial target profiles; running targets are held fixed in time."""

    phi_track: np.ndarray
    phi_final: np.ndarray
    sigma_track: np.ndarray
    sigma_final: np.ndarray
    z_track: np.ndarray

    @classmethod
    def zeros(cls, grid):
        z = np.zeros(grid.shape)
        return cls(z.copy(), z.copy(), z.copy(), z.copy(), z.copy())

    @classmethod
    def resting(cls, spec):
        """Tumor-free, boundary-level lactate, initial damage held."""
        g = spec.grid
        return cls(
            phi_track=np.zeros(g.shape),
            phi_final=np.zeros(g.shape),
            sigma_track=np.array(spec.sigma_gamma, dtype=float).copy(),
            sigma_final=np.array(spec.sigma_gamma, dtype=float).copy(),
            z_track=np.array(spec.z0, dtype=float).copy(),
        )

    def validate(self, grid):
        for name in ("phi_track", "phi_final", "sigma_track", "sigma_final", "z_track"):
            arr = getattr(self, name)
            if arr.shape != grid.shape:
                raise ValueError(f"target {name} has shape {arr.shape}, grid wants {grid.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"target {name} contains non-finite values")
        return self


def time_weights(n_steps, tau):
    """Trapezoid weights over the time nodes 0..K."""
    w = np.full(n_steps + 1, tau)
    w[0] = w[-1] = tau / 2.0
    return w


def eval_cost(traj: StateTrajectory, weights: CostWeights, targets: Targets, spec):
    """Evaluate the objective along a trajectory; returns (total, parts)."""
    weights.validate()
    g = traj.grid
    targets.validate(g)
    if traj.control is None:
        raise ValueError("trajectory carries no control")
    a = weights.as_array()
    tw = time_weights(traj.n_steps, traj.tau)

    def run_quad(values):
        return float(np.dot(tw, values))

    sq = lambda f: g.inner(f, f)
    phi_T, sigma_T, z_T = traj.phi[-1], traj.sigma[-1], traj.z[-1]
    gam = np.array([g.integrate(spec.gamma.value(traj.phi[n]) * tensor_dot(traj.eps_u[n], traj.eps_u[n]))
                    for n in range(traj.n_steps + 1)])
    parts = {
        "phi-tracking": 0.5 * a[0] * run_quad([sq(traj.phi[n] - targets.phi_track) for n in range(traj.n_steps + 1)]),
        "phi-final-tracking": 0.5 * a[1] * sq(phi_T - targets.phi_final),
        "phi-final-mass": a[2] * g.integrate(phi_T),
        "sigma-tracking": 0.5 * a[3] * run_quad([sq(traj.sigma[n] - targets.sigma_track) for n in range(traj.n_steps + 1)]),
        "sigma-final-tracking": 0.5 * a[4] * sq(sigma_T - targets.sigma_final),
        "strain-burden": 0.5 * a[5] * run_quad(gam),
        "z-tracking": 0.5 * a[6] * run_quad([sq(traj.z[n] - targets.z_track) for n in range(traj.n_steps + 1)]),
        "z-final-mass": a[7] * g.integrate(z_T),
        "dose-effort": 0.5 * a[8] * run_quad(
            [sq(traj.control.chi1[n]) + sq(traj.control.chi2[n]) for n in range(traj.n_steps + 1)]
        ),
    }
    return sum(parts.values()), parts


@dataclass
class AdjointTrajectory:
    """Dual fields on the state time nodes, marched backward from T."""

    grid: object
    times: np.ndarray
    q: np.ndarray
    r: np.ndarray
    v: np.ndarray
    eps_v: np.ndarray
    s: np.ndarray

    @property
    def n_steps(self):
        return len(self.times) - 1


def solve_adjoint(traj: StateTrajectory, weights: CostWeights, targets: Targets, spec):
    """March the dual system backward along a stored trajectory.

    Terminal payoffs seed the dual fields at T; each backward step takes
    implicit diffusion (and the implicit damage slope) at the earlier
    level while every cross coupling and tracking source is evaluated at
    the later one.
    """
    weights.validate()
    g = traj.grid
    targets.validate(g)
    if traj.control is None:
        raise ValueError("trajectory carries no control")
    chi1, chi2 = traj.control.chi1, traj.control.chi2
    a = weights.as_array()
    K = traj.n_steps
    tau = traj.tau
    w = g.quad_weights
    shape = g.shape

    q = np.zeros((K + 1,) + shape)
    r = np.zeros_like(q)
    s = np.zeros_like(q)
    v = np.zeros((K + 1, 2) + shape)
    eps_v = np.zeros((K + 1, 3) + shape)
    q[K] = a[1] * (traj.phi[K] - targets.phi_final) + a[2]
    r[K] = a[4] * (traj.sigma[K] - targets.sigma_final)
    s[K] = a[7]

    A_n = _scalar_system(g, float(tau), False)
    A_r = _scalar_system(g, float(tau), True)
    P_n = _scalar_precond(g, float(tau), False)
    P_r = _scalar_precond(g, float(tau), True)
    K_A = _viscous_matrix(g, spec.A_mu, spec.A_lam)
    idx = g.interior_vector_indices
    gtw = g.sym_grad_weighted_transpose
    MK_int = u_operator(spec, traj.phi[K], traj.z[K - 1], tau)[idx][:, idx]
    precond = splu(MK_int.tocsc()).solve

    for m in range(K, 0, -1):
        ph, sg, zz, ee = traj.phi[m], traj.sigma[m], traj.z[m], traj.eps_u[m]
        p = spec.p.value(sg, zz)
        g_ = spec.g.value(sg, zz)
        logi = ph * (1.0 - ph / spec.N)
        a1 = (p - chi1[m]) * (1.0 - 2.0 * ph / spec.N) - g_
        a2 = spec.p.d1(sg, zz) * logi - ph * spec.g.d1(sg, zz)
        a3 = spec.p.d2(sg, zz) * logi - ph * spec.g.d2(sg, zz)
        k1 = spec.k1.value(ph, zz)
        k2 = spec.k2.value(ph, zz)
        den = k2 + sg
        b1 = -spec.k1.d1(ph, zz) * sg / den + k1 * sg * spec.k2.d1(ph, zz) / den**2
        b1 = b1 + chi2[m] * spec.S.d1(ph, zz)
        b2 = -k1 / den + k1 * sg / den**2
        b3 = -spec.k1.d2(ph, zz) * sg / den + k1 * sg * spec.k2.d2(ph, zz) / den**2
        b3 = b3 + chi2[m] * spec.S.d2(ph, zz)
        c1 = -stress_from_strain(spec.B_mu.d1(ph, zz), spec.B_lam.d1(ph, zz), ee)
        c2 = -stress_from_strain(spec.B_mu.d2(ph, zz), spec.B_lam.d2(ph, zz), ee)
        d1 = -spec.psi.d_phi(ph, ee)
        d2 = -spec.psi.d_eps(ph, ee)

        f_q = (
            a1 * q[m]
            + b1 * r[m]
            + d1 * s[m]
            - tensor_dot(c1, eps_v[m])
            + a[0] * (ph - targets.phi_track)
            + 0.5 * a[5] * spec.gamma.d(ph) * tensor_dot(ee, ee)
        )
        sol, _ = cg_solve(
            A_n, w * (q[m] + tau * f_q).ravel(), x0=q[m].ravel(), label="q-step", precond=P_n
        )
        q[m - 1] = sol.reshape(shape)

        f_r = a2 * q[m] + b2 * r[m] + a[3] * (sg - targets.sigma_track)
        sol, _ = cg_solve(
            A_r, w * (r[m] + tau * f_r).ravel(), x0=r[m].ravel(), label="r-step", precond=P_r
        )
        r[m - 1] = sol.reshape(shape)

        M = u_operator(spec, ph, traj.z[m - 1], tau)
        M_int = M[idx][:, idx]
        load = gtw @ (d2 * s[m] + a[5] * spec.gamma.value(ph) * ee).reshape(3, -1).ravel()
        rhs = ((K_A / tau) @ v[m].reshape(2, -1).ravel() + load)[idx]
        sol, _ = cg_solve(
            M_int, rhs, x0=v[m].reshape(2, -1).ravel()[idx], label="v-step", precond=precond
        )
        full = np.zeros(2 * g.n_nodes)
        full[idx] = sol
        v[m - 1] = full.reshape((2,) + shape)
        eps_v[m - 1] = g.sym_grad(v[m - 1])

        slope = mdl.beta_prime(zz, spec) + mdl.pi_prime(zz, spec)
        J = (sps.diags(w * (1.0 + tau * slope).ravel()) - tau * g.wl_neumann).tocsr()
        f_s = a3 * q[m] + b3 * r[m] - tensor_dot(c2, eps_v[m]) + a[6] * (zz - targets.z_track)
        sol, _ = cg_solve(
            J, w * (s[m] + tau * f_s).ravel(), x0=s[m].ravel(), label="s-step", precond=P_n
        )
        s[m - 1] = sol.reshape(shape)

    return AdjointTrajectory(grid=g, times=traj.times.copy(), q=q, r=r, v=v, eps_v=eps_v, s=s)


def duality_residual(traj, lin, adj, direction, weights: CostWeights, targets: Targets, spec):
    """Gap between the dual dose pairing and the tangent cost derivative.

    The two sides agree for the continuous problem; their discrete gap is
    first order in the step and bounds the committed gradient error.
    Returns the two sides, the gap, and the gap relative to their scale.
    """
    g = traj.grid
    a = weights.as_array()
    K = traj.n_steps
    tw = time_weights(K, traj.tau)

    lhs = 0.0
    for n in range(K + 1):
        a4 = -traj.phi[n] * (1.0 - traj.phi[n] / spec.N)
        b4 = spec.S.value(traj.phi[n], traj.z[n])
        lhs += tw[n] * (
            g.inner(a4 * direction.chi1[n], adj.q[n]) + g.inner(b4 * direction.chi2[n], adj.r[n])
        )

    rhs = (
        a[1] * g.inner(traj.phi[K] - targets.phi_final, lin.xi[K])
        + a[2] * g.integrate(lin.xi[K])
        + a[4] * g.inner(traj.sigma[K] - targets.sigma_final, lin.rho[K])
        + a[7] * g.integrate(lin.zeta[K])
    )
    for n in range(K + 1):
        running = (
            a[0] * g.inner(traj.phi[n] - targets.phi_track, lin.xi[n])
            + a[3] * g.inner(traj.sigma[n] - targets.sigma_track, lin.rho[n])
            + a[6] * g.inner(traj.z[n] - targets.z_track, lin.zeta[n])
            + 0.5 * a[5] * g.integrate(
                spec.gamma.d(traj.phi[n]) * tensor_dot(traj.eps_u[n], traj.eps_u[n]) * lin.xi[n]
            )
            + a[5] * g.integrate(
                spec.gamma.value(traj.phi[n]) * tensor_dot(traj.eps_u[n], lin.eps_omega[n])
            )
        )
        rhs += tw[n] * running
    gap = abs(lhs - rhs)
    scale = max(abs(lhs), abs(rhs), 1e-30)
    return {"lhs": lhs, "rhs": rhs, "gap": gap, "rel": gap / scale}

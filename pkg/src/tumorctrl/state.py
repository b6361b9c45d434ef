"""Forward solver for the coupled tumor system.

One time step advances the four fields in the order phi -> sigma -> u -> z
with an implicit-explicit splitting: diffusion, elasticity and the damage
barrier are implicit (each a symmetric positive definite solve), while the
cross couplings enter explicitly with the freshest fields available.  The
damage substep keeps its logarithmic barrier inside the Newton iteration,
which is what preserves 0 < z < 1 without any projection.

Tumor and lactate updates clamp to their physical windows afterwards and
log the pre-clamp excess; the excess is O(tau) and halving the step about
halves it, so the committed error is measurable and refinable.  The
lactate cap is a monitored heuristic, not a proven constant: it combines
the data cap with the worst-case production the control can drive.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from . import model as mdl
from .errors import SolverError
from .linalg import cg_solve
from .snapshots import write_manifest, write_snapshot_bin, write_snapshot_csv


@dataclass(frozen=True)
class Control:
    """Dose pair on the state time grid, shape (K+1, ny+1, nx+1) each."""

    chi1: np.ndarray
    chi2: np.ndarray

    @property
    def n_steps(self):
        return self.chi1.shape[0] - 1

    @classmethod
    def zeros(cls, grid, n_steps):
        shape = (n_steps + 1,) + grid.shape
        return cls(np.zeros(shape), np.zeros(shape))

    @classmethod
    def constant(cls, grid, n_steps, c1, c2):
        shape = (n_steps + 1,) + grid.shape
        return cls(np.full(shape, float(c1)), np.full(shape, float(c2)))

    def validate(self):
        if self.chi1.shape != self.chi2.shape or self.chi1.ndim != 3:
            raise ValueError("control components need matching (K+1, ny+1, nx+1) shapes")
        if not (np.all(np.isfinite(self.chi1)) and np.all(np.isfinite(self.chi2))):
            raise ValueError("control contains non-finite entries")
        return self


@dataclass
class Diagnostics:
    """Per-step solver health indicators collected by solve_state."""

    phi_clamp: np.ndarray
    sigma_clamp: np.ndarray
    newton_iters: np.ndarray
    cg_phi: np.ndarray
    cg_sigma: np.ndarray
    cg_u: np.ndarray
    sigma_cap: float
    sigma_cap_heuristic: bool
    z_window: Optional[tuple]
    z_excess: float

    def summary(self):
        return {
            "phi_clamp_max": f"{self.phi_clamp.max() if self.phi_clamp.size else 0.0:.6e}",
            "sigma_clamp_max": f"{self.sigma_clamp.max() if self.sigma_clamp.size else 0.0:.6e}",
            "newton_iters_max": str(int(self.newton_iters.max()) if self.newton_iters.size else 0),
            "cg_iters_max": str(
                int(max(self.cg_phi.max(), self.cg_sigma.max(), self.cg_u.max()))
                if self.cg_phi.size
                else 0
            ),
            "sigma_cap": f"{self.sigma_cap:.6e}",
            "sigma_cap_heuristic": str(self.sigma_cap_heuristic).lower(),
            "z_excess": f"{self.z_excess:.3e}",
        }


@dataclass
class StateTrajectory:
    """Dense record of one forward solve; treated as immutable once built."""

    grid: object
    times: np.ndarray
    phi: np.ndarray
    sigma: np.ndarray
    u: np.ndarray
    eps_u: np.ndarray
    z: np.ndarray
    diagnostics: Optional[Diagnostics] = None
    control: Optional[Control] = None

    @property
    def n_steps(self):
        return len(self.times) - 1

    @property
    def tau(self):
        return float(self.times[1] - self.times[0])


@lru_cache(maxsize=16)
def _scalar_system(grid, tau, robin):
    w = sps.diags(grid.quad_weights)
    wl = grid.wl_robin if robin else grid.wl_neumann
    return (w - tau * wl).tocsr()


@lru_cache(maxsize=16)
def _scalar_precond(grid, tau, robin):
    """Factorized diffusion system reused as a CG preconditioner.

    Exact for the implicit diffusion solves themselves and still strong
    for the damage Jacobian, which only adds a positive diagonal.
    """
    return splu(_scalar_system(grid, tau, robin).tocsc()).solve


def u_operator(spec, phi, z, tau):
    """Weighted elasticity operator of the displacement substep.

    Viscous part over tau plus the state-dependent elastic part; symmetric
    positive definite once restricted to interior degrees of freedom.
    """
    g = spec.grid
    mu_b, lam_b = mdl.eval_B(phi, z, spec)
    K_A = _viscous_matrix(g, spec.A_mu, spec.A_lam)
    return (K_A / tau + g.elastic_matrix(mu_b, lam_b)).tocsr()


@lru_cache(maxsize=16)
def _viscous_cached(grid, a_mu, a_lam):
    return grid.elastic_matrix(a_mu, a_lam)


def _viscous_matrix(grid, a_mu, a_lam):
    return _viscous_cached(grid, float(a_mu), float(a_lam))


def step_phi(phi, sigma, z, chi1, tau, spec, x0=None):
    """Implicit diffusion, explicit reaction; clamp to [0, N] with a log."""
    g = spec.grid
    U = mdl.eval_U(phi, sigma, z, chi1, spec)
    rhs = g.quad_weights * (phi + tau * U).ravel()
    A = _scalar_system(g, float(tau), False)
    sol, iters = cg_solve(
        A,
        rhs,
        x0=(phi if x0 is None else x0).ravel(),
        label="phi-step",
        precond=_scalar_precond(g, float(tau), False),
    )
    excess = max(float(-sol.min()), float(sol.max() - spec.N), 0.0)
    return np.clip(sol, 0.0, spec.N).reshape(g.shape), excess, iters


def step_sigma(sigma, phi, z, chi2, sigma_cap, tau, spec, x0=None):
    """Implicit diffusion and Robin exchange, explicit kinetics."""
    g = spec.grid
    react = chi2 * spec.S.value(phi, z) - mdl.eval_K(phi, sigma, z, spec)
    rhs = g.quad_weights * (
        (sigma + tau * react).ravel() + tau * g.robin_source(spec.sigma_gamma).ravel()
    )
    A = _scalar_system(g, float(tau), True)
    sol, iters = cg_solve(
        A,
        rhs,
        x0=(sigma if x0 is None else x0).ravel(),
        label="sigma-step",
        precond=_scalar_precond(g, float(tau), True),
    )
    excess = max(float(-sol.min()), float(sol.max() - sigma_cap), 0.0)
    return np.clip(sol, 0.0, sigma_cap).reshape(g.shape), excess, iters


def step_u(u, phi_new, z, f, tau, spec, precond=None, x0=None):
    """Quasi-static viscoelastic update on Dirichlet-zero displacements."""
    g = spec.grid
    idx = g.interior_vector_indices
    M = u_operator(spec, phi_new, z, tau)
    M_int = M[idx][:, idx]
    K_A = _viscous_matrix(g, spec.A_mu, spec.A_lam)
    rhs = (g.vector_weights * f.reshape(2, -1).ravel() + (K_A / tau) @ u.reshape(2, -1).ravel())[
        idx
    ]
    if precond is None:
        lu = splu(M_int.tocsc())
        precond = lu.solve
    start = (u if x0 is None else x0).reshape(2, -1).ravel()[idx]
    sol, iters = cg_solve(M_int, rhs, x0=start, label="u-step", precond=precond)
    full = np.zeros(2 * g.n_nodes)
    full[idx] = sol
    u_new = full.reshape((2,) + g.shape)
    return u_new, g.sym_grad(u_new), iters


def step_z(z, phi_new, eps_new, tau, spec):
    """Fully implicit damage update; the log barrier stays inside Newton.

    Residual F(v) = v - tau*lap(v) + tau*(beta + pi)(v) - rhs, solved by
    damped Newton with an SPD weighted Jacobian; step lengths halve until
    the iterate stays strictly inside (0, 1).
    """
    g = spec.grid
    rhs = z + tau * (spec.iota - mdl.eval_Psi(phi_new, eps_new, spec))
    w = g.quad_weights
    v = z.copy()
    history = []
    for it in range(50):
        res = (
            v
            - tau * g.laplacian_neumann(v)
            + tau * (mdl.beta(v, spec) + mdl.pi(v, spec))
            - rhs
        )
        sup = float(np.abs(res).max())
        history.append(sup)
        if sup <= 1e-10:
            return v, it
        slope = 1.0 + tau * (mdl.beta_prime(v, spec) + mdl.pi_prime(v, spec))
        if slope.min() <= 0.0:
            raise SolverError(
                "z-step Jacobian lost positivity; time step too large for the "
                f"concave slope (min diagonal {slope.min():.3e})",
                history,
            )
        J = (sps.diags(w * slope.ravel()) - tau * g.wl_neumann).tocsr()
        delta, _ = cg_solve(
            J, -(w * res.ravel()), label="z-newton", precond=_scalar_precond(g, float(tau), False)
        )
        delta = delta.reshape(g.shape)
        alpha = 1.0
        for _ in range(60):
            trial = v + alpha * delta
            if trial.min() > 0.0 and trial.max() < 1.0:
                break
            alpha *= 0.5
        else:
            raise SolverError("z-step line search could not stay inside (0, 1)", history)
        v = v + alpha * delta
    raise SolverError("z-step Newton did not converge in 50 iterations", history)


def sigma_cap_for(spec, control) -> float:
    """Monitored lactate bound: data cap plus worst-case driven production."""
    drive = float(np.maximum(control.chi2, 0.0).max()) if control.chi2.size else 0.0
    return max(spec.M0, float(spec.sigma0.max())) + spec.T * drive * spec.bounds.S_star


def solve_state(control: Control, spec, grid=None, n_steps=None) -> StateTrajectory:
    """March the four-field system from the initial data to time T."""
    g = spec.grid if grid is None else grid
    if g != spec.grid:
        raise ValueError("grid does not match the one the model was built on")
    control.validate()
    K = control.n_steps if n_steps is None else int(n_steps)
    if control.n_steps != K:
        raise ValueError("control defined on a different number of steps")
    tau = spec.T / K
    shape = g.shape

    times = np.linspace(0.0, spec.T, K + 1)
    phi = np.empty((K + 1,) + shape)
    sigma = np.empty_like(phi)
    z = np.empty_like(phi)
    u = np.empty((K + 1, 2) + shape)
    eps_u = np.empty((K + 1, 3) + shape)
    phi[0], sigma[0], z[0] = spec.phi0, spec.sigma0, spec.z0
    u[0] = spec.u0
    eps_u[0] = g.sym_grad(spec.u0)

    cap = sigma_cap_for(spec, control)
    try:
        sep = mdl.separation_bounds(spec)
        window = (sep.r_low, sep.r_high)
    except Exception:
        window = None

    d = Diagnostics(
        phi_clamp=np.zeros(K),
        sigma_clamp=np.zeros(K),
        newton_iters=np.zeros(K, dtype=int),
        cg_phi=np.zeros(K, dtype=int),
        cg_sigma=np.zeros(K, dtype=int),
        cg_u=np.zeros(K, dtype=int),
        sigma_cap=cap,
        sigma_cap_heuristic=True,
        z_window=window,
        z_excess=0.0,
    )

    idx = g.interior_vector_indices
    M0_int = u_operator(spec, spec.phi0, spec.z0, tau)[idx][:, idx]
    precond = splu(M0_int.tocsc()).solve

    for n in range(K):
        phi[n + 1], d.phi_clamp[n], d.cg_phi[n] = step_phi(
            phi[n], sigma[n], z[n], control.chi1[n], tau, spec
        )
        sigma[n + 1], d.sigma_clamp[n], d.cg_sigma[n] = step_sigma(
            sigma[n], phi[n], z[n], control.chi2[n], cap, tau, spec
        )
        u[n + 1], eps_u[n + 1], d.cg_u[n] = step_u(
            u[n], phi[n + 1], z[n], spec.f, tau, spec, precond=precond
        )
        z[n + 1], d.newton_iters[n] = step_z(z[n], phi[n + 1], eps_u[n + 1], tau, spec)
        if window is not None:
            d.z_excess = max(
                d.z_excess,
                float(window[0] - z[n + 1].min()),
                float(z[n + 1].max() - window[1]),
            )

    return StateTrajectory(
        grid=g,
        times=times,
        phi=phi,
        sigma=sigma,
        u=u,
        eps_u=eps_u,
        z=z,
        diagnostics=d,
        control=control,
    )


def save_trajectory(traj: StateTrajectory, outdir, fmt="csv", every=1):
    """Write per-node field snapshots plus a run manifest."""
    from pathlib import Path

    from .grid import ScalarField

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write = write_snapshot_csv if fmt == "csv" else write_snapshot_bin
    ext = "csv" if fmt == "csv" else "tcf"
    for n in range(0, traj.n_steps + 1, every):
        t = float(traj.times[n])
        for name, arr in (("phi", traj.phi[n]), ("sigma", traj.sigma[n]), ("z", traj.z[n])):
            write(out / f"{name}_{n:05d}.{ext}", ScalarField(traj.grid, arr), t)
        for comp, arr in (("ux", traj.u[n, 0]), ("uy", traj.u[n, 1])):
            write(out / f"{comp}_{n:05d}.{ext}", ScalarField(traj.grid, arr), t)
    info = {
        "n_steps": str(traj.n_steps),
        "tau": f"{traj.tau:.17g}",
        "nx": str(traj.grid.nx),
        "ny": str(traj.grid.ny),
        "hx": f"{traj.grid.hx:.17g}",
        "hy": f"{traj.grid.hy:.17g}",
        "format": fmt,
    }
    if traj.diagnostics is not None:
        info.update(traj.diagnostics.summary())
    write_manifest(out / "run.manifest", info)
    return out

"""Dose optimization: admissible set, reduced gradient, projected descent.

The reduced gradient pairs the dual tumor and lactate fields with the
dose sensitivities of their equations and adds the quadratic effort
term.  Minimization runs projected gradient descent with an Armijo line
search; the projection clamps to the dose boxes and then rescales the
first dose into its smoothness ball, re-clamping once.  That composite
is the exact projection whenever the boxes contain zero, which the
shipped admissible sets do.

vi_residual probes the first-order optimality of a candidate from two
independent routes: directional pairings against admissible probes and
the fixed-point residual of the projection map.  Both are reported; a
negative directional value beyond tolerance disproves optimality no
matter what the projection residual says.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adjoint import (
    AdjointTrajectory,
    CostWeights,
    Targets,
    eval_cost,
    solve_adjoint,
    time_weights,
)
from .state import Control, StateTrajectory, solve_state


@dataclass(frozen=True)
class AdmissibleSet:
    """Pointwise dose boxes plus a smoothness ball on the first dose."""

    chi1_low: float = 0.0
    chi1_high: float = 1.0
    chi2_low: float = 0.0
    chi2_high: float = 1.0
    c_ad: float = np.inf

    def validate(self):
        if not (self.chi1_low <= self.chi1_high and self.chi2_low <= self.chi2_high):
            raise ValueError("admissible boxes are empty")
        if not self.c_ad > 0:
            raise ValueError("smoothness radius must be positive")
        return self


def control_inner(a: Control, b: Control, grid, T):
    """Space-time inner product of dose pairs, trapezoid in time."""
    tw = time_weights(a.n_steps, T / a.n_steps)
    total = 0.0
    for n in range(a.n_steps + 1):
        total += tw[n] * (
            grid.inner(a.chi1[n], b.chi1[n]) + grid.inner(a.chi2[n], b.chi2[n])
        )
    return total


def control_norm(a: Control, grid, T):
    return float(np.sqrt(max(control_inner(a, a, grid, T), 0.0)))


def smoothness_norm(chi1, grid, T):
    """Time-quadrature of the spatial first-order norm of one dose."""
    K = chi1.shape[0] - 1
    tw = time_weights(K, T / K)
    total = sum(tw[n] * grid.norm_h1(chi1[n]) ** 2 for n in range(K + 1))
    return float(np.sqrt(max(total, 0.0)))


def project_admissible(control: Control, adm: AdmissibleSet, grid, T):
    """Clamp to the boxes, rescale into the smoothness ball, re-clamp.

    Returns the projected control and whether the ball was active.
    """
    adm.validate()
    chi1 = np.clip(control.chi1, adm.chi1_low, adm.chi1_high)
    chi2 = np.clip(control.chi2, adm.chi2_low, adm.chi2_high)
    ball_active = False
    if np.isfinite(adm.c_ad):
        nb = smoothness_norm(chi1, grid, T)
        if nb > adm.c_ad:
            ball_active = True
            chi1 = chi1 * (adm.c_ad / nb)
            chi1 = np.clip(chi1, adm.chi1_low, adm.chi1_high)
    return Control(chi1, chi2), ball_active


def reduced_gradient(traj: StateTrajectory, adj: AdjointTrajectory, weights: CostWeights, spec):
    """Gradient of the reduced objective in the dose metric.

    The first component pairs the dual tumor field with the dose
    sensitivity of the growth law, the second pairs the dual lactate
    field with the supply map; both add the weighted dose itself.
    """
    a9 = weights.alpha9
    K = traj.n_steps
    g1 = np.empty_like(traj.control.chi1)
    g2 = np.empty_like(traj.control.chi2)
    for n in range(K + 1):
        ph = traj.phi[n]
        g1[n] = -ph * (1.0 - ph / spec.N) * adj.q[n] + a9 * traj.control.chi1[n]
        g2[n] = spec.S.value(ph, traj.z[n]) * adj.r[n] + a9 * traj.control.chi2[n]
    return Control(g1, g2)


def fd_directional(control: Control, direction: Control, weights, targets, spec, eps=1e-4):
    """Central difference of the reduced objective along a direction."""
    up = Control(control.chi1 + eps * direction.chi1, control.chi2 + eps * direction.chi2)
    dn = Control(control.chi1 - eps * direction.chi1, control.chi2 - eps * direction.chi2)
    j_up, _ = eval_cost(solve_state(up, spec), weights, targets, spec)
    j_dn, _ = eval_cost(solve_state(dn, spec), weights, targets, spec)
    return (j_up - j_dn) / (2.0 * eps)


@dataclass
class OptimizeResult:
    control: Control
    cost: float
    parts: dict
    stationarity: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    trajectory: Optional[StateTrajectory] = None


def optimize(
    spec,
    weights: CostWeights,
    targets: Targets,
    adm: AdmissibleSet,
    control0: Control,
    max_iters=100,
    tol=1e-6,
    step0=1.0,
    armijo=1e-4,
    max_backtracks=30,
):
    """Projected gradient descent with Armijo backtracking.

    The accepted step doubles into the next iteration but never beyond
    the initial step.  Stationarity is the norm of the projected gradient
    step at unit length, relative to the dose size.  History records
    (iteration, cost, stationarity, step, ball_active) per iteration.
    """
    g = spec.grid
    T = spec.T
    weights.validate()
    adm.validate()
    current, _ = project_admissible(control0, adm, g, T)
    traj = solve_state(current, spec)
    cost, parts = eval_cost(traj, weights, targets, spec)
    history = []
    lam = step0
    stat = np.inf
    converged = False
    it = 0

    for it in range(1, max_iters + 1):
        adj = solve_adjoint(traj, weights, targets, spec)
        grad = reduced_gradient(traj, adj, weights, spec)

        probe, _ = project_admissible(
            Control(current.chi1 - grad.chi1, current.chi2 - grad.chi2), adm, g, T
        )
        stat_abs = control_norm(
            Control(current.chi1 - probe.chi1, current.chi2 - probe.chi2), g, T
        )
        stat = stat_abs / max(1.0, control_norm(current, g, T))
        if stat <= tol:
            converged = True
            history.append((it, cost, stat, 0.0, 0))
            break

        accepted = False
        ball_active = False
        for _ in range(max_backtracks):
            cand, ball_active = project_admissible(
                Control(current.chi1 - lam * grad.chi1, current.chi2 - lam * grad.chi2),
                adm,
                g,
                T,
            )
            move = Control(cand.chi1 - current.chi1, cand.chi2 - current.chi2)
            move_sq = control_inner(move, move, g, T)
            if move_sq == 0.0:
                break
            cand_traj = solve_state(cand, spec)
            cand_cost, cand_parts = eval_cost(cand_traj, weights, targets, spec)
            if cand_cost <= cost - (armijo / lam) * move_sq:
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            history.append((it, cost, stat, lam, int(ball_active)))
            break
        current, traj, cost, parts = cand, cand_traj, cand_cost, cand_parts
        history.append((it, cost, stat, lam, int(ball_active)))
        lam = min(2.0 * lam, step0)

    return OptimizeResult(
        control=current,
        cost=cost,
        parts=parts,
        stationarity=stat,
        iterations=it,
        converged=converged,
        history=history,
        trajectory=traj,
    )


@dataclass
class VIReport:
    """First-order optimality evidence for a candidate dose pair.

    scale is the largest Cauchy-Schwarz bound |<grad, probe - candidate>|
    over the probe set, the right yardstick for judging how negative a
    pairing is allowed to be at a discrete minimizer.
    """

    worst_pairing: float
    worst_probe: str
    projection_residual: float
    n_probes: int
    scale: float

    def __str__(self):
        return (
            f"worst directional pairing {self.worst_pairing:+.6e} ({self.worst_probe}) "
            f"at scale {self.scale:.6e}; projection residual "
            f"{self.projection_residual:.6e} over {self.n_probes} probes"
        )


def vi_residual(
    candidate: Control,
    spec,
    weights: CostWeights,
    targets: Targets,
    adm: AdmissibleSet,
    n_random=8,
    seed=0,
):
    """Probe the variational inequality at a candidate minimizer.

    Pairs the reduced gradient with admissible directions (box corners,
    random admissible draws) and reports the most negative pairing; a
    minimizer keeps every pairing nonnegative.  Also reports the
    projection fixed-point residual as an independent route.
    """
    g = spec.grid
    T = spec.T
    traj = solve_state(candidate, spec)
    adj = solve_adjoint(traj, weights, targets, spec)
    grad = reduced_gradient(traj, adj, weights, spec)
    K = candidate.n_steps

    probes = {}
    hi1 = adm.chi1_high if np.isfinite(adm.chi1_high) else 1.0
    hi2 = adm.chi2_high if np.isfinite(adm.chi2_high) else 1.0
    for name, c1, c2 in (
        ("corner-low-low", adm.chi1_low, adm.chi2_low),
        ("corner-low-high", adm.chi1_low, hi2),
        ("corner-high-low", hi1, adm.chi2_low),
        ("corner-high-high", hi1, hi2),
    ):
        probes[name], _ = project_admissible(Control.constant(g, K, c1, c2), adm, g, T)
    rng = np.random.default_rng(seed)
    shape = (K + 1,) + g.shape
    for j in range(n_random):
        draw = Control(
            rng.uniform(adm.chi1_low, hi1, shape), rng.uniform(adm.chi2_low, hi2, shape)
        )
        probes[f"random-{j}"], _ = project_admissible(draw, adm, g, T)

    worst, worst_name = np.inf, "none"
    gnorm = control_norm(grad, g, T)
    scale = 0.0
    for name, probe in probes.items():
        d = Control(probe.chi1 - candidate.chi1, probe.chi2 - candidate.chi2)
        val = control_inner(grad, d, g, T)
        scale = max(scale, gnorm * control_norm(d, g, T))
        if val < worst:
            worst, worst_name = val, name

    proj, _ = project_admissible(
        Control(candidate.chi1 - grad.chi1, candidate.chi2 - grad.chi2), adm, g, T
    )
    resid = control_norm(
        Control(candidate.chi1 - proj.chi1, candidate.chi2 - proj.chi2), g, T
    )
    return VIReport(
        worst_pairing=float(worst),
        worst_probe=worst_name,
        projection_residual=resid,
        n_probes=len(probes),
        scale=max(scale, 1e-30),
    )

"""Forward solver tests: substep oracles, invariants, convergence orders."""
import numpy as np
import pytest

from tumorctrl.grid import Grid
from tumorctrl import model as mdl
from tumorctrl.presets import bounds_stress_scenario, ode_rhs, ode_scenario, smooth_scenario
from tumorctrl.state import (
    Control,
    save_trajectory,
    sigma_cap_for,
    solve_state,
    step_phi,
    step_sigma,
    step_u,
    step_z,
    u_operator,
)


@pytest.fixture(scope="module")
def small_spec():
    return mdl.DefaultLogisticFamily().build(Grid.unit(8, 8))


def const(grid, v):
    return np.full(grid.shape, float(v))


# -- tumor substep -----------------------------------------------------------


def test_phi_zero_stays_zero(small_spec):
    g = small_spec.grid
    out, excess, iters = step_phi(const(g, 0), const(g, 0.4), const(g, 0.5), const(g, 0.2), 0.01, small_spec)
    assert np.all(out == 0.0)
    assert excess == 0.0


def test_phi_constant_matches_explicit_euler(small_spec):
    g = small_spec.grid
    c, sc, zc, x1 = 0.3, 0.6, 0.45, 0.1
    tau = 0.02
    out, excess, _ = step_phi(const(g, c), const(g, sc), const(g, zc), const(g, x1), tau, small_spec)
    expected = c + tau * float(mdl.eval_U(c, sc, zc, x1, small_spec))
    assert np.abs(out - expected).max() < 1e-10
    assert excess == 0.0


def test_phi_clamp_excess_halves_with_tau():
    # constant data keep the diffusion inert, so the excess follows the
    # scalar prediction tau*|U| - phi0 and its halving ratio exactly
    e = {}
    for K in (10, 20):
        sc = bounds_stress_scenario(n_steps=K)
        traj = solve_state(sc.control, sc.spec)
        e[K] = traj.diagnostics.phi_clamp.max()
    spec = bounds_stress_scenario(10).spec
    tau = spec.T / 10
    U0 = float(mdl.eval_U(0.3, 0.5, 0.45, 800.0, spec))
    assert e[10] == pytest.approx(-(0.3 + tau * U0), rel=1e-8)
    assert 1.7 < e[10] / e[20] < 2.3


# -- lactate substep ---------------------------------------------------------


def test_sigma_zero_stays_zero(small_spec):
    g = small_spec.grid
    spec = small_spec.with_fields(sigma_gamma=const(g, 0.0))
    out, excess, _ = step_sigma(const(g, 0), const(g, 0.2), const(g, 0.5), const(g, 0.0), 1.0, 0.01, spec)
    assert np.all(out == 0.0)
    assert excess == 0.0


def test_sigma_constant_steady_state(small_spec):
    g = small_spec.grid
    spec = small_spec.with_fields(
        k1=mdl.constant_map(0.0), sigma_gamma=const(g, spec_m0 := small_spec.M0)
    )
    out, excess, _ = step_sigma(
        const(g, spec_m0), const(g, 0.3), const(g, 0.5), const(g, 0.0), 2.0, 0.05, spec
    )
    assert np.abs(out - spec_m0).max() < 1e-10
    assert excess == 0.0


def test_sigma_tracks_scalar_recursion_for_small_tau(small_spec):
    # boundary exchange pollutes a constant profile only at O(tau^2/h)
    g = small_spec.grid
    c, tau = 0.5, 1e-4
    spec = small_spec.with_fields(sigma_gamma=const(g, c))
    chi2 = const(g, 0.4)
    out, _, _ = step_sigma(const(g, c), const(g, 0.3), const(g, 0.5), chi2, 2.0, tau, spec)
    react = 0.4 * float(spec.S.value(0.3, 0.5)) - float(mdl.eval_K(0.3, c, 0.5, spec))
    assert np.abs(out - (c + tau * react)).max() < 1e-6


# -- displacement substep ----------------------------------------------------


def test_u_zero_data_zero_solution(small_spec):
    g = small_spec.grid
    z2 = np.zeros((2,) + g.shape)
    u_new, eps_new, _ = step_u(z2, const(g, 0.3), const(g, 0.5), z2, 0.02, small_spec)
    assert np.all(u_new == 0.0)
    assert np.all(eps_new == 0.0)


def test_u_operator_positive_definite(small_spec):
    g = small_spec.grid
    M = u_operator(small_spec, const(g, 0.4), const(g, 0.5), 0.02)
    idx = g.interior_vector_indices
    M_int = M[idx][:, idx]
    rng = np.random.default_rng(13)
    for _ in range(20):
        w = rng.standard_normal(len(idx))
        assert float(w @ (M_int @ w)) > 0.0


def test_u_one_step_manufactured_second_order():
    import sympy as sp

    x, y = sp.symbols("x y")
    tau = 0.02
    fam = mdl.DefaultLogisticFamily()
    phis = 0.5 + sp.Rational(3, 10) * sp.sin(sp.pi * x) * sp.sin(sp.pi * y)
    zs = sp.Rational(4, 10) + sp.Rational(1, 10) * sp.cos(sp.pi * x) * sp.cos(sp.pi * y)
    logistic = 1 / (1 + sp.exp(-(fam.a_B - fam.b_B * phis / fam.N - fam.c_B * zs)))
    mu = fam.mu_min + (fam.mu_max - fam.mu_min) * logistic + fam.A_mu / tau
    lam = fam.lam_min + (fam.lam_max - fam.lam_min) * logistic + fam.A_lam / tau
    u1 = sp.Rational(1, 100) * sp.sin(sp.pi * x) * sp.sin(sp.pi * y)
    u2 = sp.Rational(1, 100) * sp.sin(2 * sp.pi * x) * sp.sin(sp.pi * y)
    e11, e22 = sp.diff(u1, x), sp.diff(u2, y)
    e12 = (sp.diff(u1, y) + sp.diff(u2, x)) / 2
    s11 = 2 * mu * e11 + lam * (e11 + e22)
    s22 = 2 * mu * e22 + lam * (e11 + e22)
    s12 = 2 * mu * e12
    f1 = -(sp.diff(s11, x) + sp.diff(s12, y))
    f2 = -(sp.diff(s12, x) + sp.diff(s22, y))
    fns = [sp.lambdify((x, y), e, "numpy") for e in (f1, f2, u1, u2, phis, zs)]

    errs = []
    for n in (16, 32, 64):
        g = Grid.unit(n, n)
        X, Y = g.meshes
        spec = mdl.DefaultLogisticFamily().build(g)
        f = np.stack([fns[0](X, Y), fns[1](X, Y)])
        exact = np.stack([fns[2](X, Y), fns[3](X, Y)])
        u_new, _, _ = step_u(
            np.zeros((2,) + g.shape), fns[4](X, Y), fns[5](X, Y), f, tau, spec
        )
        errs.append(np.abs(u_new - exact).max())
    assert 1.8 < np.log2(errs[0] / errs[1]) < 2.2
    assert 1.8 < np.log2(errs[1] / errs[2]) < 2.2


# -- damage substep ----------------------------------------------------------


def scalar_z_newton(z0, rhs, tau, spec):
    v = z0
    for _ in range(60):
        F = v + tau * (spec.C1 * np.log(v / (1 - v)) - 2 * spec.C2 * v) - rhs
        if abs(F) <= 1e-13:
            break
        J = 1 + tau * (spec.C1 / (v * (1 - v)) - 2 * spec.C2)
        d = -F / J
        a = 1.0
        while not 0.0 < v + a * d < 1.0:
            a *= 0.5
        v += a * d
    return v


def test_z_matches_scalar_newton(small_spec):
    g = small_spec.grid
    tau, zc, phc = 0.02, 0.45, 0.3
    eps0 = np.zeros((3,) + g.shape)
    out, iters = step_z(const(g, zc), const(g, phc), eps0, tau, small_spec)
    iota = float(small_spec.iota.flat[0])
    psi = float(small_spec.psi.value(np.array([phc]), np.zeros((3, 1)))[0])
    rhs = zc + tau * (iota - psi)
    ref = scalar_z_newton(zc, rhs, tau, small_spec)
    assert np.abs(out - ref).max() < 1e-9
    assert iters <= 10


def test_z_stationary_fixed_point(small_spec):
    g = small_spec.grid
    zbar, phc = 0.45, 0.3
    psi = float(small_spec.psi.value(np.array([phc]), np.zeros((3, 1)))[0])
    iota = float(mdl.beta(zbar, small_spec) + mdl.pi(zbar, small_spec)) + psi
    spec = small_spec.with_fields(iota=const(g, iota))
    out, _ = step_z(const(g, zbar), const(g, phc), np.zeros((3,) + g.shape), 0.05, spec)
    assert np.abs(out - zbar).max() < 1e-9


def test_z_output_strictly_inside_unit_interval(small_spec):
    g = small_spec.grid
    rng = np.random.default_rng(17)
    for _ in range(100):
        z = rng.uniform(0.1, 0.9) + 0.05 * rng.standard_normal(g.shape)
        z = np.clip(z, 0.05, 0.95)
        ph = rng.uniform(0.0, small_spec.N, g.shape)
        eps = 0.1 * rng.standard_normal((3,) + g.shape)
        out, _ = step_z(z, ph, eps, 0.02, small_spec)
        assert out.min() > 0.0
        assert out.max() < 1.0


# -- full solve --------------------------------------------------------------


def test_fixed_point_trajectory(small_spec):
    g = small_spec.grid
    zbar = 0.45
    iota = float(mdl.beta(zbar, small_spec) + mdl.pi(zbar, small_spec))
    spec = small_spec.with_fields(
        phi0=const(g, 0.0),
        sigma0=const(g, 0.0),
        sigma_gamma=const(g, 0.0),
        z0=const(g, zbar),
        u0=np.zeros((2,) + g.shape),
        f=np.zeros((2,) + g.shape),
        iota=const(g, iota),
    )
    traj = solve_state(Control.zeros(g, 12), spec)
    assert np.abs(traj.phi).max() < 1e-9
    assert np.abs(traj.sigma).max() < 1e-9
    assert np.abs(traj.u).max() < 1e-9
    assert np.abs(traj.z - zbar).max() < 1e-8


def test_ode_reduction_first_order():
    from scipy.integrate import solve_ivp

    errs = {}
    for K in (40, 80):
        sc = ode_scenario(n_steps=K)
        traj = solve_state(sc.control, sc.spec)
        spread = max(
            (traj.phi.max(axis=(1, 2)) - traj.phi.min(axis=(1, 2))).max(),
            (traj.z.max(axis=(1, 2)) - traj.z.min(axis=(1, 2))).max(),
            (traj.sigma.max(axis=(1, 2)) - traj.sigma.min(axis=(1, 2))).max(),
        )
        assert spread < 1e-9
        rhs = ode_rhs(sc.spec, sc.extras["sigma_level"], sc.extras["chi1"])
        sol = solve_ivp(
            rhs,
            (0.0, sc.spec.T),
            [sc.spec.phi0.flat[0], sc.spec.z0.flat[0]],
            t_eval=traj.times,
            rtol=1e-11,
            atol=1e-13,
            method="LSODA",
        )
        errs[K] = max(
            np.abs(traj.phi[:, 0, 0] - sol.y[0]).max(),
            np.abs(traj.z[:, 0, 0] - sol.y[1]).max(),
        )
        assert np.abs(traj.sigma - sc.extras["sigma_level"]).max() < 1e-9
        assert np.abs(traj.u).max() == 0.0
    assert 1.6 < errs[40] / errs[80] < 2.4


def traj_distance(a, b):
    # b has twice the step count of a; compare on the shared nodes
    g = a.grid
    stride = b.n_steps // a.n_steps
    d = 0.0
    for n in range(a.n_steps + 1):
        m = n * stride
        d = max(
            d,
            g.norm_l2(a.phi[n] - b.phi[m])
            + g.norm_l2(a.sigma[n] - b.sigma[m])
            + g.norm_l2(a.z[n] - b.z[m])
            + g.norm_h1_vec(a.u[n] - b.u[m]),
        )
    return d


def test_time_refinement_first_order():
    # the splitting error carries sizable second-order terms, so the
    # first-order ratio only settles once the step is reasonably small
    runs = {}
    for K in (128, 256, 512):
        sc = smooth_scenario(nx=12, n_steps=K)
        runs[K] = solve_state(sc.control, sc.spec)
    d1 = traj_distance(runs[128], runs[256])
    d2 = traj_distance(runs[256], runs[512])
    assert 1.7 < d1 / d2 < 2.3


def test_continuous_dependence_ratio_stable():
    sc = smooth_scenario(nx=12, n_steps=16)
    base = solve_state(sc.control, sc.spec)
    g = sc.spec.grid
    x, y = g.meshes
    direction = np.sin(np.pi * x) * np.cos(np.pi * y)
    tau = sc.spec.T / sc.n_steps
    tw = np.full(sc.n_steps + 1, tau)
    tw[0] = tw[-1] = tau / 2
    dir_norm = np.sqrt(2.0 * tw.sum() * g.inner(direction, direction))
    ratios = []
    for k in range(6):
        delta = 0.02 * 0.5**k
        ctrl = Control(sc.control.chi1 + delta * direction, sc.control.chi2 + delta * direction)
        pert = solve_state(ctrl, sc.spec)
        dist = 0.0
        for n in range(sc.n_steps + 1):
            dist = max(
                dist,
                g.norm_l2(pert.phi[n] - base.phi[n])
                + g.norm_l2(pert.sigma[n] - base.sigma[n])
                + g.norm_l2(pert.z[n] - base.z[n])
                + g.norm_h1_vec(pert.u[n] - base.u[n]),
            )
        ratios.append(dist / (delta * dir_norm))
    ratios = np.array(ratios)
    assert (ratios.max() - ratios.min()) / ratios.mean() < 0.25


def test_invariants_under_stress():
    sc = bounds_stress_scenario(n_steps=10)
    traj = solve_state(sc.control, sc.spec)
    d = traj.diagnostics
    assert traj.phi.min() >= -1e-9
    assert traj.phi.max() <= sc.spec.N + 1e-9
    assert traj.sigma.min() >= -1e-9
    assert traj.sigma.max() <= d.sigma_cap + 1e-9
    assert d.z_window is not None
    lo, hi = d.z_window
    assert traj.z.min() >= lo - 1e-12
    assert traj.z.max() <= hi + 1e-12
    assert np.abs(traj.u[:, :, traj.grid.boundary_mask]).max() == 0.0
    assert np.array_equal(traj.phi[0], sc.spec.phi0)
    assert np.array_equal(traj.z[0], sc.spec.z0)


def test_sigma_cap_uses_actual_drive(small_spec):
    g = small_spec.grid
    weak = Control.constant(g, 4, 0.0, 0.1)
    strong = Control.constant(g, 4, 0.0, 5.0)
    assert sigma_cap_for(small_spec, strong) > sigma_cap_for(small_spec, weak)


def test_save_trajectory_round_trip(tmp_path):
    from tumorctrl.snapshots import read_manifest, read_snapshot_csv

    sc = smooth_scenario(nx=8, n_steps=4)
    traj = solve_state(sc.control, sc.spec)
    out = save_trajectory(traj, tmp_path / "run", fmt="csv")
    info = read_manifest(out / "run.manifest")
    assert info["n_steps"] == "4"
    assert info["sigma_cap_heuristic"] == "true"
    f, t = read_snapshot_csv(out / "phi_00004.csv")
    assert t == pytest.approx(traj.times[-1])
    assert np.array_equal(f.values, traj.phi[4])


def test_control_validation():
    g = Grid.unit(6, 6)
    c = Control.zeros(g, 3)
    c.validate()
    bad = Control(c.chi1, c.chi2[:, :-1])
    with pytest.raises(ValueError):
        bad.validate()
    nan = Control(c.chi1.copy(), c.chi2.copy())
    nan.chi1[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        nan.validate()


def test_solve_state_rejects_mismatched_grid(small_spec):
    other = Grid.unit(10, 10)
    with pytest.raises(ValueError):
        solve_state(Control.zeros(other, 4), small_spec, grid=other)

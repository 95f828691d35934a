import math

import numpy as np
import pytest

from vkdelay.delay_force import DelayConfig, DelayHistory
from vkdelay.discretization import Grid, ScalarField, bilaplacian
from vkdelay.dynamics import (
    SERIES_COLUMNS,
    PhysicsConfig,
    PlateState,
    energy,
    energy_identity_defects,
    f_nonlinear,
    lipschitz_gap,
    lyapunov,
    qt_bound_ratios,
    rhs,
    simulate,
    step,
)
from vkdelay.errors import DataError, SequencingError, SingularFlowError
from vkdelay.fields import bump, clamped_mode, random_clamped_field


def setup(grid, U=0.0, n_theta=8, **phys_kw):
    # dt = h / max(1, U) rounded so that t*/dt is an integer
    t_star = grid.diameter() / abs(1 - U)
    M = math.ceil(t_star * max(1.0, U) / grid.h)
    cfg = DelayConfig.for_grid(grid, U, n_theta, M)
    return PhysicsConfig(u_flow=U, **phys_kw), cfg


def test_physics_validation(grid15):
    with pytest.raises(SingularFlowError):
        PhysicsConfig(0.1, 1.0)
    with pytest.raises(DataError):
        PhysicsConfig(-0.1, 0.0)
    with pytest.raises(DataError):
        PhysicsConfig(0.1, 0.0, forcing_omega=-1.0)
    assert PhysicsConfig(0.5, 0.0, use_reduced_damping=True).k_eff == 1.5


def test_rest_is_fixed_point(grid15):
    phys, cfg = setup(grid15, U=0.5, k=0.5)
    st = PlateState.rest(grid15)
    traj = simulate(st, DelayHistory.frozen(grid15, cfg, st.u), phys, cfg, 10)
    assert np.all(traj.u == 0.0) and np.all(traj.ut == 0.0)
    assert np.all(traj.series["V"] == 0.0)


def test_linear_energy_conserved(grid15, rng):
    phys, cfg = setup(grid15, k=0.0, nonlinear=False, delay_coeff=0.0)
    u0 = random_clamped_field(grid15, rng)
    traj = simulate(PlateState(u0, grid15.field()), DelayHistory.frozen(grid15, cfg, u0), phys, cfg, 50,
                    tol=1e-13, mu=0.0, nu=0.0)
    e = traj.series["full"]
    assert np.ptp(e) <= 1e-10 * e[0]


def test_single_mode_matches_trapezoid_recurrence():
    # along an eigenvector of the stiffness matrix the scheme is the
    # trapezoid rule for y' = A y with A = [[0, 1], [-lam, -k]]
    g = Grid.square(7)
    n = g.size
    B = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        B[:, j] = bilaplacian(ScalarField(g, e.reshape(g.shape))).values.ravel()
    lam, vec = np.linalg.eigh(0.5 * (B + B.T))
    mode = 3
    k = 0.3
    phys, cfg = setup(g, k=k, nonlinear=False, delay_coeff=0.0)
    u0 = ScalarField(g, vec[:, mode].reshape(g.shape))
    n_steps = 40
    traj = simulate(PlateState(u0, g.field()), DelayHistory.frozen(g, cfg, u0), phys, cfg, n_steps,
                    tol=1e-14, diagnostics=False)
    A = np.array([[0.0, 1.0], [-lam[mode], -k]])
    dt = cfg.dt
    T = np.linalg.solve(np.eye(2) - 0.5 * dt * A, np.eye(2) + 0.5 * dt * A)
    y = np.linalg.matrix_power(T, n_steps) @ np.array([1.0, 0.0])
    amp = traj.u[-1].ravel() @ vec[:, mode]
    vel = traj.ut[-1].ravel() @ vec[:, mode]
    assert amp == pytest.approx(y[0], rel=1e-8, abs=1e-10)
    assert vel == pytest.approx(y[1], rel=1e-8, abs=1e-10 * math.sqrt(lam[mode]))


def test_rhs_linear_in_damping(grid15, rng):
    u = random_clamped_field(grid15, rng)
    ut = random_clamped_field(grid15, rng)
    st = PlateState(u, ut)
    p0, cfg = setup(grid15, U=0.5, k=0.0)
    p1, _ = setup(grid15, U=0.5, k=0.7)
    hist = DelayHistory.frozen(grid15, cfg, u)
    r0 = rhs(st, hist, p0, cfg).values
    diff = rhs(st, hist, p1, cfg).values - r0
    # cancellation against the stiff bending term sets the tolerance
    assert np.allclose(diff, -0.7 * ut.values, rtol=0, atol=1e-13 * np.abs(r0).max())


def test_von_karman_force_is_odd_cubic(grid15, rng):
    u = random_clamped_field(grid15, rng)
    f = f_nonlinear(u, tol=1e-13).values
    scale = np.abs(f).max()
    assert np.allclose(f_nonlinear(u * -1.0, tol=1e-13).values, -f, atol=1e-9 * scale)
    assert np.allclose(f_nonlinear(u * 2.0, tol=1e-13).values, 8 * f, atol=1e-8 * scale)


def test_energy_homogeneity(grid15, rng):
    u = random_clamped_field(grid15, rng)
    ut = random_clamped_field(grid15, rng)
    e1 = energy(PlateState(u, ut), tol=1e-13)
    e2 = energy(PlateState(u * 2.0, ut * 2.0), tol=1e-13)
    assert e2.kinetic == pytest.approx(4 * e1.kinetic, rel=1e-12)
    assert e2.bending == pytest.approx(4 * e1.bending, rel=1e-12)
    assert e2.airy == pytest.approx(16 * e1.airy, rel=1e-8)
    assert energy(PlateState(u, ut), nonlinear=False).airy == 0.0


def test_lyapunov_reduces_to_energy(grid15, rng):
    phys, cfg = setup(grid15, k=0.5, delay_coeff=0.0)
    u = random_clamped_field(grid15, rng)
    st = PlateState(u, random_clamped_field(grid15, rng))
    hist = DelayHistory.frozen(grid15, cfg, u)
    rep = lyapunov(st, hist, phys, cfg, mu=0.0, nu=0.0)
    assert rep.value == pytest.approx(energy(st).full, rel=1e-12)
    with pytest.raises(DataError):
        lyapunov(st, hist, phys, cfg, mu=0.0, nu=0.9)


def test_step_errors(grid15):
    phys, cfg = setup(grid15, U=0.5, k=0.5)
    st = PlateState.rest(grid15)
    hist = DelayHistory.frozen(grid15, cfg, st.u)
    with pytest.raises(DataError):
        step(st, hist, phys, cfg, 0.5 * cfg.dt)
    with pytest.raises(SequencingError):
        step(PlateState.rest(grid15, t=1.0), hist, phys, cfg, cfg.dt)
    other, _ = setup(grid15, U=0.0, k=0.5)
    with pytest.raises(DataError):
        step(st, hist, other, cfg, cfg.dt)
    coarse = DelayConfig.for_grid(grid15, 0.5, 8, 4)
    with pytest.raises(DataError):
        step(st, DelayHistory.frozen(grid15, coarse, st.u), phys, coarse, coarse.dt)
    new = step(st, hist, phys, cfg, cfg.dt)
    assert new.t == pytest.approx(cfg.dt) and hist.t_head == pytest.approx(cfg.dt)


def test_simulate_records(grid15):
    phys, cfg = setup(grid15, U=0.5, k=0.5, p0=bump(grid15, 1.0, 0.5, 0.5, 0.3))
    st = PlateState.rest(grid15)
    traj = simulate(st, DelayHistory.frozen(grid15, cfg, st.u), phys, cfg, 10, stride=3)
    assert len(traj.times) == 4
    assert set(traj.series) == set(SERIES_COLUMNS[1:])
    np.testing.assert_allclose(traj.times, 3 * cfg.dt * np.arange(4))
    assert traj.prehistory.shape == (cfg.n_lags + 1,) + grid15.shape


def test_energy_identity_defects_start_at_zero():
    # a large plate keeps the lowest modes resolved at dt ~ h
    g = Grid.square(15, 8.0)
    phys, cfg = setup(g, k=0.5, nonlinear=False, delay_coeff=0.0)
    u0 = clamped_mode(g, 1, 1)
    traj = simulate(PlateState(u0, g.field()), DelayHistory.frozen(g, cfg, u0), phys, cfg, 20)
    d = energy_identity_defects(traj)
    assert d[0] == 0.0
    assert np.max(np.abs(d)) <= 0.05 * energy(PlateState(u0, g.field())).full


def test_lipschitz_gap(grid15, rng):
    phys, cfg = setup(grid15, U=0.5, k=0.5)
    u0 = random_clamped_field(grid15, rng) * 1e-2
    st = PlateState(u0, grid15.field())
    a = simulate(st, DelayHistory.frozen(grid15, cfg, u0), phys, cfg, 10, diagnostics=False)
    b = simulate(st, DelayHistory.frozen(grid15, cfg, u0), phys, cfg, 10, diagnostics=False)
    fit = lipschitz_gap(a, b)
    assert fit.C == 0.0 and fit.a == 0.0
    u1 = u0 + random_clamped_field(grid15, rng) * 1e-5
    c = simulate(PlateState(u1, grid15.field()), DelayHistory.frozen(grid15, cfg, u1), phys, cfg, 10,
                 diagnostics=False)
    fit = lipschitz_gap(a, c)
    assert math.isfinite(fit.a) and fit.C >= 1.0
    assert np.all(fit.gap <= fit.C * np.exp(fit.a * fit.times) * fit.gap[0] * (1 + 1e-12))


def test_qt_monitor_bounded_under_refinement():
    # the ratio of the q_t proxy to its bound should not blow up as dt shrinks
    g = Grid.square(15, 8.0)
    u0 = clamped_mode(g, 1, 1) * 0.1
    peaks = []
    for M in (46, 92):
        cfg = DelayConfig.for_grid(g, 0.5, 8, M)
        phys = PhysicsConfig(0.5, 0.5, use_reduced_damping=True)
        traj = simulate(PlateState(u0, g.field()), DelayHistory.frozen(g, cfg, u0), phys, cfg,
                        round(10 / cfg.dt), diagnostics=False)
        r = qt_bound_ratios(traj)
        assert np.all(np.isfinite(r)) and np.all(r >= 0)
        peaks.append(r.max())
    assert peaks[1] <= 2.0 * peaks[0]


def test_lyapunov_bounded_below_by_energy():
    # V >= c0 (kinetic + pi_star) - c with a fitted c0 > 0 over random states
    g = Grid.square(15, 8.0)
    phys, cfg = setup(g, U=0.5, k=0.5, use_reduced_damping=True)
    rng = np.random.default_rng(8)
    V, E = [], []
    for amp in np.logspace(-2, 0.5, 12):
        fields = [random_clamped_field(g, rng) * amp for _ in range(cfg.n_lags + 1)]
        hist = DelayHistory.from_fields(g, cfg, fields, 0.0)
        st = PlateState(fields[-1], random_clamped_field(g, rng) * amp)
        rep = lyapunov(st, hist, phys, cfg)
        V.append(rep.value)
        E.append(rep.energy.kinetic + rep.energy.pi_star)
    V, E = np.array(V), np.array(E)
    c0 = float(np.min(V[E > 0] / E[E > 0]))
    assert c0 > 0


def test_rhs_at_rest_is_the_load(grid15):
    p0 = bump(grid15, 2.0, 0.5, 0.5, 0.3)
    phys, cfg = setup(grid15, U=0.5, k=0.5, p0=p0)
    st = PlateState.rest(grid15)
    acc = rhs(st, DelayHistory.frozen(grid15, cfg, st.u), phys, cfg)
    assert np.array_equal(acc.values, p0.values)

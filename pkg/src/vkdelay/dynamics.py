"""Time evolution of the clamped plate with retarded aerodynamic load.

The semi-discrete system is

    u_tt + Delta^2 u + k_eff u_t = -f(u) - U u_x + p0(t) + c_q q(u^t, t)

with ``f(u) = -[u, v(u) + F0]``.  Stepping is Crank-Nicolson on the linear
stiff part and explicit on the rest, so the discrete linear energy
``1/2 ||u_t||^2 + 1/2 <Delta^2 u, u>`` is conserved exactly when the
explicit load vanishes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .delay_force import DelayConfig, DelayHistory, q_delay
from .discretization import (
    Grid,
    ScalarField,
    _bilap,
    _bracket,
    _h2_sq,
    airy,
    dx,
    inner,
    sobolev_norm,
    solve_shifted_bilaplacian,
)
from .errors import DataError, GridMismatchError, SequencingError

log = logging.getLogger(__name__)

__all__ = [
    "PhysicsConfig",
    "PlateState",
    "EnergyReport",
    "LyapunovReport",
    "Trajectory",
    "LipschitzFit",
    "f_nonlinear",
    "energy",
    "rhs",
    "step",
    "simulate",
    "energy_identity_defects",
    "energy_identity_residual",
    "qt_bound_ratios",
    "default_mu_nu",
    "lyapunov",
    "lipschitz_gap",
]


@dataclass(frozen=True, eq=False)
class PhysicsConfig:
    """Physical parameters.

    Parameters
    ----------
    k : float
        Viscous damping coefficient, ``>= 0``.
    u_flow : float
        Flow speed U (``!= 1``).
    f0, p0 : ScalarField or None
        In-plane load F0 and transverse load p0; None means zero.
    use_reduced_damping : bool
        Absorb the downwash term ``-u_t`` into the damping: ``k_eff = k + 1``.
    nonlinear : bool
        Include the Airy part ``v(u)`` of the von Karman force.
    delay_coeff : float
        Factor ``c_q`` on the retarded potential.  The flow reduction enters
        with ``-q``; 0 switches the delay force off.
    forcing_omega : float
        When positive the transverse load is ``p0 cos(omega t)``.
    """

    k: float
    u_flow: float
    f0: ScalarField | None = None
    p0: ScalarField | None = None
    use_reduced_damping: bool = False
    nonlinear: bool = True
    delay_coeff: float = -1.0
    forcing_omega: float = 0.0

    def __post_init__(self):
        if not (self.k >= 0 and math.isfinite(self.k)):
            raise DataError(f"damping k must be finite and >= 0, got {self.k}")
        if not (self.u_flow >= 0 and math.isfinite(self.u_flow)):
            raise DataError(f"flow speed must be finite and >= 0, got {self.u_flow}")
        if abs(self.u_flow - 1.0) < 1e-12:
            from .errors import SingularFlowError

            raise SingularFlowError("singular flow speed U = 1 (Mach 1) is excluded from the model")
        if not (self.forcing_omega >= 0 and math.isfinite(self.forcing_omega)):
            raise DataError("forcing_omega must be finite and >= 0")
        if not math.isfinite(self.delay_coeff):
            raise DataError("delay_coeff must be finite")
        for name in ("f0", "p0"):
            f = getattr(self, name)
            if f is not None:
                f.check_finite()
        if self.f0 is not None and self.p0 is not None and self.f0.grid != self.p0.grid:
            raise GridMismatchError("f0 and p0 live on different grids")

    @property
    def k_eff(self) -> float:
        return self.k + 1.0 if self.use_reduced_damping else self.k

    def forcing_scale(self, t: float) -> float:
        return math.cos(self.forcing_omega * t) if self.forcing_omega > 0 else 1.0

    def p0_at(self, grid: Grid, t: float) -> np.ndarray:
        if self.p0 is None:
            return np.zeros(grid.shape)
        _check_grid(self.p0, grid)
        return self.forcing_scale(t) * self.p0.values

    def f0_values(self, grid: Grid) -> np.ndarray | None:
        if self.f0 is None:
            return None
        _check_grid(self.f0, grid)
        return self.f0.values


def _check_grid(f: ScalarField, grid: Grid):
    if f.grid != grid:
        raise GridMismatchError("load field grid does not match the state grid")


@dataclass(frozen=True, eq=False)
class PlateState:
    """Displacement ``u``, velocity ``ut`` and time ``t``."""

    u: ScalarField
    ut: ScalarField
    t: float = 0.0

    def __post_init__(self):
        if self.u.grid != self.ut.grid:
            raise GridMismatchError("u and ut live on different grids")
        self.u.check_finite()
        self.ut.check_finite()
        if not math.isfinite(self.t):
            raise DataError("state time must be finite")

    @property
    def grid(self) -> Grid:
        return self.u.grid

    @classmethod
    def rest(cls, grid: Grid, t: float = 0.0) -> "PlateState":
        return cls(grid.field(), grid.field(), t)


@dataclass(frozen=True)
class EnergyReport:
    """Energy components; ``full`` may be negative."""

    kinetic: float
    bending: float
    airy: float
    coupling: float

    @property
    def pi_star(self) -> float:
        return self.bending + self.airy

    @property
    def full(self) -> float:
        return self.kinetic + self.coupling + self.pi_star


def f_nonlinear(u: ScalarField, f0: ScalarField | None = None, tol: float = 1e-10,
                v: ScalarField | None = None) -> ScalarField:
    """von Karman force ``-[u, v(u) + F0]``; ``v`` may be passed if known."""
    g = u.grid
    if v is None:
        v = airy(u, u, tol)
    s = v.values if f0 is None else v.values + f0.values
    if f0 is not None:
        _check_grid(f0, g)
    return ScalarField(g, -_bracket(u.values, s, g.h))


def energy(state: PlateState, f0: ScalarField | None = None, tol: float = 1e-10,
           nonlinear: bool = True, v: ScalarField | None = None) -> EnergyReport:
    """Discrete energy of a state.

    ``bending = 1/2 <Delta^2 u, u>`` and ``airy = 1/4 <Delta^2 v, v>`` use the
    clamped trapezoid norm, which matches the stepping operator.
    """
    g = state.grid
    h = g.h
    u = state.u.values
    kinetic = 0.5 * inner(state.ut, state.ut)
    bending = 0.5 * _h2_sq(u, h)
    airy_e = 0.0
    if nonlinear:
        if v is None:
            v = airy(state.u, state.u, tol)
        airy_e = 0.25 * _h2_sq(v.values, h)
    coupling = 0.0
    if f0 is not None:
        _check_grid(f0, g)
        coupling = -0.5 * h * h * float(np.sum(_bracket(u, f0.values, h) * u))
    rep = EnergyReport(kinetic, bending, airy_e, coupling)
    if rep.pi_star < 0:
        raise DataError(f"negative potential energy {rep.pi_star}")
    return rep


# ---------------------------------------------------------------------------
# force assembly

@dataclass
class _Parts:
    total: np.ndarray  # explicit load: -f - U u_x + p0 + c_q q
    q: np.ndarray  # applied delay force c_q q
    v: ScalarField | None


def _check_sync(state: PlateState, history: DelayHistory):
    if history.grid != state.grid:
        raise GridMismatchError("history grid does not match the state grid")
    t_head = history.t_head
    if abs(t_head - state.t) > 1e-9 * max(1.0, abs(state.t)):
        raise SequencingError(f"history head t={t_head!r} does not match state t={state.t!r}")


def _explicit(state: PlateState, history: DelayHistory, phys: PhysicsConfig,
              cfg: DelayConfig, tol: float) -> _Parts:
    _check_sync(state, history)
    g = state.grid
    u = state.u
    v = None
    if phys.nonlinear:
        newest = history.newest
        if np.array_equal(newest.u, u.values):
            v = newest.airy(g, tol)
        else:
            v = airy(u, u, tol)
    f0 = phys.f0_values(g)
    if v is None and f0 is None:
        force = np.zeros(g.shape)
    else:
        s = (v.values if v is not None else 0.0) + (f0 if f0 is not None else 0.0)
        force = _bracket(u.values, s, g.h)  # -f(u)
    if phys.u_flow != 0.0:
        force = force - phys.u_flow * dx(u).values
    force = force + phys.p0_at(g, state.t)
    if phys.delay_coeff != 0.0:
        q = phys.delay_coeff * q_delay(history, cfg).values
        force = force + q
    else:
        q = np.zeros(g.shape)
    return _Parts(force, q, v)


def rhs(state: PlateState, history: DelayHistory, phys: PhysicsConfig, cfg: DelayConfig,
        tol: float = 1e-10) -> ScalarField:
    """Acceleration ``u_tt`` prescribed by the equation of motion."""
    parts = _explicit(state, history, phys, cfg, tol)
    h = state.grid.h
    acc = -_bilap(state.u.values, h) - phys.k_eff * state.ut.values + parts.total
    return ScalarField(state.grid, acc)


def _check_dt(grid: Grid, phys: PhysicsConfig, cfg: DelayConfig, dt: float):
    if not dt > 0:
        raise DataError("dt must be positive")
    if abs(dt - cfg.dt) > 1e-12 * cfg.dt:
        raise DataError(f"dt={dt!r} does not match the delay sampling dt={cfg.dt!r}")
    if abs(cfg.u_flow - phys.u_flow) > 1e-15:
        raise DataError("delay config and physics disagree on the flow speed")
    limit = grid.h / max(1.0, phys.u_flow)
    if dt > limit * (1 + 1e-12):
        raise DataError(f"dt={dt:.6g} violates the transport limit h/max(1, U) = {limit:.6g}")


def _advance(state: PlateState, load: np.ndarray, phys: PhysicsConfig, dt: float,
             tol: float) -> PlateState:
    g = state.grid
    h = g.h
    u, w = state.u.values, state.ut.values
    alpha = 1.0 + 0.5 * phys.k_eff * dt
    beta = 0.25 * dt * dt
    b = dt * w - 0.5 * dt * dt * _bilap(u, h) + 0.5 * dt * dt * load
    if not np.any(b):
        delta = np.zeros(g.shape)
    else:
        delta = solve_shifted_bilaplacian(ScalarField(g, b), alpha, beta, tol=tol,
                                          x0=ScalarField(g, dt * w)).values
    u_new = u + delta
    w_new = 2.0 * delta / dt - w
    return PlateState(ScalarField(g, u_new), ScalarField(g, w_new), state.t + dt)


def step(state: PlateState, history: DelayHistory, phys: PhysicsConfig, cfg: DelayConfig,
         dt: float, tol: float = 1e-10) -> PlateState:
    """Advance one step and push the new displacement onto ``history``."""
    _check_dt(state.grid, phys, cfg, dt)
    if phys.delay_coeff != 0.0 and not history.is_full():
        raise SequencingError("history is not full")
    parts = _explicit(state, history, phys, cfg, tol)
    new = _advance(state, parts.total, phys, dt, tol)
    history.push(new.u, new.t)
    return new


# ---------------------------------------------------------------------------
# Lyapunov function

@dataclass(frozen=True)
class LyapunovReport:
    value: float
    energy: EnergyReport
    q_term: float  # -<c_q q, u>
    nu_term: float  # nu (<u_t, u> + k_eff/2 ||u||^2)
    window: float  # mu int_{t-t*}^t Pi*
    double_window: float  # mu int_0^{t*} ds int_{t-s}^t Pi*


def default_mu_nu(phys: PhysicsConfig, cfg: DelayConfig) -> tuple[float, float]:
    """``nu = min(1, k_eff)/4`` and ``mu = nu / (2 (1 + t*))``."""
    nu = min(1.0, phys.k_eff) / 4.0
    return nu / (2.0 * (1.0 + cfg.t_star)), nu


def _check_mu_nu(phys, mu, nu):
    if mu < 0 or nu < 0:
        raise DataError("mu and nu must be nonnegative")
    if nu > 0 and nu >= min(1.0, phys.k_eff):
        raise DataError(f"nu={nu} must be below min(1, k_eff)={min(1.0, phys.k_eff)}")


def _lyapunov(state, history, phys, cfg, mu, nu, tol, q, v) -> LyapunovReport:
    g = state.grid
    if not history.is_full():
        raise SequencingError("history is not full")
    e = energy(state, phys.f0, tol, phys.nonlinear, v=v)
    q_term = -g.h**2 * float(np.sum(q * state.u.values))
    nu_term = 0.0
    if nu:
        nu_term = nu * (inner(state.ut, state.u) + 0.5 * phys.k_eff * inner(state.u, state.u))
    window = double = 0.0
    if mu:
        w = cfg.s_weights()
        pis = np.array([s.pi_star(g, tol, phys.nonlinear) for s in history.lags()])
        s = cfg.dt * np.arange(cfg.n_lags + 1)
        window = mu * float(np.dot(w, pis))
        # int_0^{t*} ds int_{t-s}^t Pi* = int_{t-t*}^t (t* - (t - tau)) Pi*(tau) dtau
        double = mu * float(np.dot(w * (cfg.t_star - s), pis))
    value = e.full + q_term + nu_term + window + double
    return LyapunovReport(value, e, q_term, nu_term, window, double)


def lyapunov(state: PlateState, history: DelayHistory, phys: PhysicsConfig, cfg: DelayConfig,
             mu: float | None = None, nu: float | None = None, tol: float = 1e-10) -> LyapunovReport:
    """Lyapunov functional with trapezoid quadrature over the history.

    ``mu``/``nu`` default to :func:`default_mu_nu`.
    """
    dmu, dnu = default_mu_nu(phys, cfg)
    mu = dmu if mu is None else mu
    nu = dnu if nu is None else nu
    _check_mu_nu(phys, mu, nu)
    parts = _explicit(state, history, phys, cfg, tol)
    return _lyapunov(state, history, phys, cfg, mu, nu, tol, parts.q, parts.v)


# ---------------------------------------------------------------------------
# trajectories

SERIES_COLUMNS = ("t", "kinetic", "bending", "airy", "coupling", "full", "V", "q_norm")


@dataclass(eq=False)
class Trajectory:
    """Recorded run.

    ``u``, ``ut``, ``q`` have shape ``(n_records, ny, nx)`` when fields are
    stored; ``q`` is the applied delay force.  ``series`` maps the
    diagnostic column names to arrays.  ``prehistory`` holds the initial
    history displacements, oldest first.
    """

    grid: Grid
    phys: PhysicsConfig
    cfg: DelayConfig
    stride: int
    times: np.ndarray
    u: np.ndarray | None = None
    ut: np.ndarray | None = None
    q: np.ndarray | None = None
    series: dict = field(default_factory=dict)
    observable: np.ndarray | None = None
    prehistory: np.ndarray | None = None
    final_state: PlateState | None = None

    @property
    def dt(self) -> float:
        return self.cfg.dt * self.stride

    def state(self, i: int) -> PlateState:
        return PlateState(ScalarField(self.grid, self.u[i]), ScalarField(self.grid, self.ut[i]),
                          float(self.times[i]))


def simulate(state: PlateState, history: DelayHistory, phys: PhysicsConfig, cfg: DelayConfig,
             n_steps: int, *, tol: float = 1e-10, stride: int = 1, store_fields: bool = True,
             diagnostics: bool = True, mu: float | None = None, nu: float | None = None,
             observe=None, on_record=None) -> Trajectory:
    """Run ``n_steps`` steps, recording every ``stride``-th state.

    ``history`` is advanced in place.  ``observe(state) -> float`` adds a
    scalar observable; ``on_record(index, state)`` is called after each
    record (used for snapshot output).
    """
    if n_steps < 0 or stride < 1:
        raise DataError("need n_steps >= 0 and stride >= 1")
    dt = cfg.dt
    _check_dt(state.grid, phys, cfg, dt)
    if phys.delay_coeff != 0.0 and not history.is_full():
        raise SequencingError("history is not full")
    if diagnostics:
        dmu, dnu = default_mu_nu(phys, cfg)
        mu = dmu if mu is None else mu
        nu = dnu if nu is None else nu
        _check_mu_nu(phys, mu, nu)
    pre = np.array([s.u for s in reversed(list(history.lags()))])
    times, us, uts, qs, obs = [], [], [], [], []
    series = {c: [] for c in SERIES_COLUMNS[1:]}
    g = state.grid
    for n in range(n_steps + 1):
        parts = _explicit(state, history, phys, cfg, tol)
        if n % stride == 0:
            times.append(state.t)
            if store_fields:
                us.append(state.u.values)
                uts.append(state.ut.values)
                qs.append(parts.q)
            if diagnostics:
                rep = _lyapunov(state, history, phys, cfg, mu, nu, tol, parts.q, parts.v)
                e = rep.energy
                for key, val in (("kinetic", e.kinetic), ("bending", e.bending), ("airy", e.airy),
                                 ("coupling", e.coupling), ("full", e.full), ("V", rep.value),
                                 ("q_norm", g.h * float(np.linalg.norm(parts.q)))):
                    series[key].append(val)
            if observe is not None:
                obs.append(float(observe(state)))
            if on_record is not None:
                on_record(len(times) - 1, state)
        if n == n_steps:
            break
        state = _advance(state, parts.total, phys, dt, tol)
        history.push(state.u, state.t)
    return Trajectory(
        grid=g,
        phys=phys,
        cfg=cfg,
        stride=stride,
        times=np.array(times),
        u=np.array(us) if store_fields else None,
        ut=np.array(uts) if store_fields else None,
        q=np.array(qs) if store_fields else None,
        series={k: np.array(v) for k, v in series.items()} if diagnostics else {},
        observable=np.array(obs) if observe is not None else None,
        prehistory=pre,
        final_state=state,
    )


def _trapz(y, dt):
    y = np.asarray(y, dtype=float)
    if len(y) < 2:
        return 0.0
    return float(dt * (np.sum(y) - 0.5 * (y[0] + y[-1])))


def energy_identity_defects(traj: Trajectory, s_idx: int = 0, tol: float = 1e-10) -> np.ndarray:
    """Signed energy-balance defects from record ``s_idx`` to every later record.

    Entry ``j`` is ``E(t_j) + k_eff int ||u_t||^2 - E(s) - int <q, u_t>
    - int <p0 - U u_x, u_t>`` over ``[t_s, t_j]`` with cumulative trapezoid
    quadrature; entry 0 is zero.
    """
    if traj.u is None:
        raise DataError("trajectory has no stored fields")
    n = len(traj.times)
    if not 0 <= s_idx < n:
        raise DataError(f"s_idx={s_idx} out of range for {n} records")
    g, phys = traj.grid, traj.phys
    h2 = g.h**2
    sl = slice(s_idx, n)
    u, ut = traj.u[sl], traj.ut[sl]
    energies = np.array([energy(traj.state(i), phys.f0, tol, phys.nonlinear).full for i in range(s_idx, n)])
    power = phys.k_eff * h2 * np.sum(ut * ut, axis=(1, 2)) - h2 * np.sum(traj.q[sl] * ut, axis=(1, 2))
    for j, (ui, uti, ti) in enumerate(zip(u, ut, traj.times[sl])):
        load = phys.p0_at(g, ti)
        if phys.u_flow != 0.0:
            load = load - phys.u_flow * dx(ScalarField(g, ui)).values
        power[j] -= h2 * np.sum(load * uti)
    work = np.concatenate([[0.0], np.cumsum(0.5 * traj.dt * (power[1:] + power[:-1]))])
    return energies - energies[0] + work


def energy_identity_residual(traj: Trajectory, s_idx: int, t_idx: int, tol: float = 1e-10) -> float:
    """Defect of the energy balance between records ``s_idx`` and ``t_idx``.

    ``|E(t) + k_eff int ||u_t||^2 - E(s) - int <q, u_t> - int <p0 - U u_x, u_t>|``
    with trapezoid quadrature over the recorded samples.
    """
    n = 0 if traj.times is None else len(traj.times)
    if not (0 <= s_idx < t_idx < n):
        raise DataError(f"need 0 <= s_idx < t_idx < {n}, got {s_idx}, {t_idx}")
    sub = Trajectory(traj.grid, traj.phys, traj.cfg, traj.stride, traj.times[: t_idx + 1],
                     u=traj.u[: t_idx + 1] if traj.u is not None else None,
                     ut=traj.ut[: t_idx + 1] if traj.ut is not None else None,
                     q=traj.q[: t_idx + 1] if traj.q is not None else None)
    return float(abs(energy_identity_defects(sub, s_idx, tol)[-1]))


def qt_bound_ratios(traj: Trajectory) -> np.ndarray:
    """Monitor for the time derivative of the delay force.

    For consecutive records ``n, n + 1`` returns
    ``||(q^{n+1} - q^n) / dt||_{-1}`` divided by
    ``||u(t)||_1 + ||u(t - t*)||_1 + int_{t-t*}^t ||u||_2`` at ``t = t_n``.
    The force is taken without the factor ``delay_coeff``.  Needs stored
    fields recorded with stride 1; entries with a zero bound are NaN.
    """
    if traj.u is None or traj.q is None or traj.prehistory is None:
        raise DataError("trajectory has no stored fields")
    if traj.stride != 1:
        raise DataError("the monitor needs stride 1")
    c = traj.phys.delay_coeff
    if c == 0.0:
        raise DataError("delay force is switched off")
    g, cfg = traj.grid, traj.cfg
    M = cfg.n_lags
    u_all = np.concatenate([traj.prehistory[:-1], traj.u])
    h1 = np.array([sobolev_norm(ScalarField(g, ui), 1.0) for ui in u_all])
    h2 = np.sqrt([_h2_sq(ui, g.h) for ui in u_all])
    cs = np.concatenate([[0.0], np.cumsum(0.5 * cfg.dt * (h2[1:] + h2[:-1]))])
    n = len(traj.times) - 1
    out = np.full(n, np.nan)
    for j in range(n):
        k = M + j  # index of record j in u_all
        bound = h1[k] + h1[k - M] + cs[k] - cs[k - M]
        if bound > 0.0:
            dq = ScalarField(g, (traj.q[j + 1] - traj.q[j]) / (c * cfg.dt))
            out[j] = sobolev_norm(dq, -1.0) / bound
    return out


@dataclass(frozen=True)
class LipschitzFit:
    C: float
    a: float
    times: np.ndarray
    gap: np.ndarray


def lipschitz_gap(traj1: Trajectory, traj2: Trajectory) -> LipschitzFit:
    """Fit ``g(t) <= C exp(a t) g(0)`` for ``g = ||z_t||^2 + ||Delta z||^2``.

    The slope ``a`` is the least-squares slope of ``log(g/g(0))``; ``C`` is
    the smallest constant making the bound hold at every sample.
    Identical trajectories give ``(0, 0)``.
    """
    if traj1.u is None or traj2.u is None:
        raise DataError("trajectories need stored fields")
    if traj1.grid != traj2.grid:
        raise GridMismatchError("trajectories live on different grids")
    if traj1.dt != traj2.dt or traj1.u.shape != traj2.u.shape:
        raise DataError("trajectories differ in dt or length")
    g = traj1.grid
    h = g.h
    zt = traj1.ut - traj2.ut
    z = traj1.u - traj2.u
    gap = h * h * np.sum(zt * zt, axis=(1, 2)) + np.array([_h2_sq(zi, h) for zi in z])
    t = traj1.times - traj1.times[0]
    if not np.any(gap):
        return LipschitzFit(0.0, 0.0, t, gap)
    if gap[0] == 0.0:
        raise DataError("gap vanishes initially but not later")
    pos = gap > 0
    y = np.log(gap[pos] / gap[0])
    tp = t[pos]
    if len(tp) >= 2 and np.ptp(tp) > 0:
        a = float(np.polyfit(tp, y, 1)[0])
    else:
        a = 0.0
    logc = float(np.max(y - a * tp))
    return LipschitzFit(math.exp(logc), a, t, gap)

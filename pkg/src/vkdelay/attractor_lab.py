"""Long-time experiments: absorbing sets, quasistability fits, dimension."""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy.optimize import linprog

from .delay_force import DelayConfig, DelayHistory
from .discretization import Grid, ScalarField, _h2_sq, sobolev_norm
from .dynamics import PhysicsConfig, PlateState, Trajectory, simulate
from .errors import DataError, VKError
from .fields import random_clamped_field

log = logging.getLogger(__name__)

__all__ = [
    "EnsembleSpec",
    "MemberResult",
    "EnsembleResult",
    "AbsorbingReport",
    "GronwallFit",
    "QuasiFit",
    "DimensionEstimate",
    "random_initial_data",
    "run_ensemble",
    "absorbing_report",
    "gronwall_fit",
    "quasistability_fit",
    "correlation_dimension",
    "center_displacement",
]


# ---------------------------------------------------------------------------
# ensembles

@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    """Random-initial-data ensemble.

    ``ic_radius`` is the radius in the phase norm
    ``sqrt(||Delta u0||^2 (1 + t*) + ||u1||^2)``; the frozen prehistory
    contributes ``t* ||Delta u0||^2``.  Members start on the sphere of that
    radius.
    """

    grid: Grid
    phys: PhysicsConfig
    cfg: DelayConfig
    n_members: int
    ic_radius: float
    seed: int
    horizon: float
    stride: int = 1
    tol: float = 1e-10
    n_modes: int = 4

    def __post_init__(self):
        if self.n_members < 1:
            raise DataError("n_members must be >= 1")
        if not self.ic_radius >= 0:
            raise DataError("ic_radius must be >= 0")
        if not self.horizon > 2 * self.cfg.t_star:
            raise DataError(f"horizon {self.horizon} must exceed 2 t* = {2 * self.cfg.t_star}")
        if self.stride < 1:
            raise DataError("stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.horizon / self.cfg.dt - 1e-9))


@dataclass
class MemberResult:
    index: int
    times: np.ndarray
    series: dict
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class EnsembleResult:
    spec: EnsembleSpec
    members: list = field(default_factory=list)


def random_initial_data(grid: Grid, cfg: DelayConfig, radius: float, rng: np.random.Generator,
                        n_modes: int = 4) -> tuple[ScalarField, ScalarField]:
    """Smooth random ``(u0, u1)`` with phase norm exactly ``radius``."""
    u0 = random_clamped_field(grid, rng, n_modes).values
    u1 = random_clamped_field(grid, rng, n_modes).values
    share = rng.uniform(0.0, 1.0)  # fraction of the squared norm in u0
    a0 = _h2_sq(u0, grid.h) * (1.0 + cfg.t_star)
    a1 = grid.h**2 * float(np.sum(u1 * u1))
    u0 = u0 * math.sqrt(share / a0) * radius
    u1 = u1 * math.sqrt((1.0 - share) / a1) * radius
    return ScalarField(grid, u0), ScalarField(grid, u1)


def _run_member(spec: EnsembleSpec, index: int, seq: np.random.SeedSequence) -> MemberResult:
    rng = np.random.default_rng(seq)
    grid, cfg = spec.grid, spec.cfg
    u0, u1 = random_initial_data(grid, cfg, spec.ic_radius, rng, spec.n_modes)
    state = PlateState(u0, u1, 0.0)
    hist = DelayHistory.frozen(grid, cfg, u0)
    try:
        with np.errstate(over="raise", invalid="raise"):
            traj = simulate(state, hist, spec.phys, cfg, spec.n_steps, tol=spec.tol, stride=spec.stride,
                            store_fields=False)
    except (VKError, FloatingPointError) as exc:
        log.warning("member %d failed: %s", index, exc)
        return MemberResult(index, np.array([]), {}, error=f"{type(exc).__name__}: {exc}")
    return MemberResult(index, traj.times, traj.series)


def run_ensemble(spec: EnsembleSpec) -> EnsembleResult:
    """Run all members sequentially; each member has its own spawned seed.

    Failures are recorded per member and do not stop the ensemble.
    """
    seqs = np.random.SeedSequence(spec.seed).spawn(spec.n_members)
    res = EnsembleResult(spec)
    for i, seq in enumerate(seqs):
        res.members.append(_run_member(spec, i, seq))
    return res


@dataclass(frozen=True)
class AbsorbingReport:
    radii: tuple
    late_sup: tuple  # per radius, sup of kinetic + pi_star over late times and members
    spread: float  # (max - min) / max of late_sup
    absorbing: bool
    failures: int


def absorbing_report(results: dict, late_fraction: float = 0.5, rel_tol: float = 0.2) -> AbsorbingReport:
    """Compare late-time energy sups across ensembles of different radius.

    ``results`` maps radius to :class:`EnsembleResult`.  The flag is set when
    every member succeeded and the sups agree within ``rel_tol``.
    """
    if not 0 < late_fraction <= 1:
        raise DataError("late_fraction must lie in (0, 1]")
    radii = tuple(sorted(results))
    sups = []
    failures = 0
    for r in radii:
        best = 0.0
        for m in results[r].members:
            if not m.ok:
                failures += 1
                continue
            t = m.times
            late = t >= t[-1] - late_fraction * (t[-1] - t[0])
            e = m.series["kinetic"][late] + m.series["bending"][late] + m.series["airy"][late]
            best = max(best, float(np.max(e)))
        sups.append(best)
    top = max(sups) if sups else 0.0
    spread = 0.0 if top == 0.0 else (top - min(sups)) / top
    return AbsorbingReport(radii, tuple(sups), spread, failures == 0 and spread <= rel_tol, failures)


@dataclass(frozen=True)
class GronwallFit:
    """``V(t) <= V(0) exp(-beta t) + C / beta`` on every sample."""

    beta: float
    C: float
    min_slack: float
    ok: bool


def gronwall_fit(times, values, betas=None) -> GronwallFit:
    """Fit the decay-then-plateau bound.

    For each trial ``beta`` the smallest admissible ``C >= 0`` is taken; the
    ``beta`` with the smallest mean slack wins.
    """
    t = np.asarray(times, dtype=float) - float(times[0])
    v = np.asarray(values, dtype=float)
    if len(t) < 2 or not np.all(np.isfinite(v)):
        raise DataError("need at least two finite samples")
    span = t[-1] if t[-1] > 0 else 1.0
    if betas is None:
        betas = np.logspace(-2, 3, 101) / span
    best = None
    for b in betas:
        decay = v[0] * np.exp(-b * t)
        c = b * max(0.0, float(np.max(v - decay)))
        slack = decay + c / b - v
        score = float(np.mean(slack))
        if best is None or score < best[0]:
            best = (score, b, c, float(np.min(slack)))
    _, b, c, ms = best
    # rounding in the bound can leave slack of order eps * |V|
    ok = b > 0 and ms >= -1e-12 * max(1.0, float(np.max(np.abs(v))))
    return GronwallFit(float(b), float(c), ms, bool(ok))


# ---------------------------------------------------------------------------
# quasistability

@dataclass(frozen=True)
class QuasiFit:
    """``g(t) <= c1 exp(-omega t) g(0) + c2 m(t)`` with nonnegative slack."""

    c1: float
    omega: float
    c2: float
    residual: float  # smallest relative slack over all samples
    success: bool
    trivial: bool = False


def _window_h2(traj: Trajectory, z_all: np.ndarray, h: float) -> np.ndarray:
    """``int_{t-t*}^t ||Delta z||^2`` at each record, trapezoid over dt samples."""
    M = traj.cfg.n_lags
    dt = traj.cfg.dt
    n2 = np.array([_h2_sq(zi, h) for zi in z_all])
    cs = np.concatenate([[0.0], np.cumsum(0.5 * dt * (n2[1:] + n2[:-1]))])
    # z_all[M + j] is the state at record j (stride 1)
    idx = M + np.arange(len(traj.times))
    return cs[idx] - cs[idx - M]


def _pair_series(t1: Trajectory, t2: Trajectory, eta: float):
    if t1.u is None or t2.u is None or t1.prehistory is None or t2.prehistory is None:
        raise DataError("quasistability pairs need stored fields and prehistory")
    if t1.grid != t2.grid or t1.u.shape != t2.u.shape or t1.cfg.dt != t2.cfg.dt:
        raise DataError("pair members differ in grid, length or dt")
    if t1.stride != 1 or t2.stride != 1:
        raise DataError("quasistability pairs must be recorded with stride 1")
    g = t1.grid
    h = g.h
    z = t1.u - t2.u
    zt = t1.ut - t2.ut
    zpre = t1.prehistory - t2.prehistory
    z_all = np.concatenate([zpre[:-1], z])
    gap = (h * h * np.sum(zt * zt, axis=(1, 2)) + np.array([_h2_sq(zi, h) for zi in z])
           + _window_h2(t1, z_all, h))
    s = 2.0 - eta
    low = np.array([sobolev_norm(ScalarField(g, zi), s) ** 2 for zi in z])
    m = np.maximum.accumulate(low)
    return t1.times - t1.times[0], gap, m


def _lp(a, b, gap, use_lower):
    # minimize the summed relative slack subject to c1 a + c2 b >= gap, c >= 0;
    # rows are divided by gap so the solver's absolute tolerances are relative
    an, bn = a / gap, b / gap
    if use_lower:
        cost = [np.sum(an), np.sum(bn)]
        A = -np.column_stack([an, bn])
        bounds = [(0, None), (0, None)]
    else:
        cost = [np.sum(an)]
        A = -an[:, None]
        bounds = [(0, None)]
    res = linprog(cost, A_ub=A, b_ub=-np.ones_like(gap), bounds=bounds, method="highs")
    if res.status != 0:
        return None
    c = list(res.x) + ([0.0] if not use_lower else [])
    slack = c[0] * an + c[1] * bn - 1.0
    worst = float(np.min(slack))
    if worst < 0.0:
        # lift the solver's tolerance-level violations
        c = [ci / (1.0 + worst) * (1.0 + 4 * np.finfo(float).eps) for ci in c]
        slack = c[0] * an + c[1] * bn - 1.0
    return c[0], c[1], float(np.mean(slack)), float(np.min(slack))


def quasistability_fit(traj_pairs, eta_norm_exponent: float = 2.0, omegas=None,
                       use_lower_order: bool = True) -> QuasiFit:
    """Fit shared constants of the quasistability estimate over all pairs.

    ``g = ||z_t||^2 + ||Delta z||^2 + int_{t-t*}^t ||Delta z||^2`` and
    ``m(t) = sup_{tau <= t} ||z(tau)||_{2 - eta}^2`` (``eta = 2`` gives the
    discrete l2 norm).  For each trial ``omega`` a linear program minimizes
    the total relative slack; the best ``omega`` is returned.
    """
    if not 0.0 <= eta_norm_exponent <= 2.0:
        raise DataError("eta_norm_exponent must lie in [0, 2]")
    pairs = list(traj_pairs)
    if not pairs:
        raise DataError("need at least one trajectory pair")
    g0s, ts, ms, gaps = [], [], [], []
    span = 0.0
    for t1, t2 in pairs:
        t, gap, m = _pair_series(t1, t2, eta_norm_exponent)
        if not np.any(gap):
            continue
        if gap[0] == 0.0:
            raise DataError("pair gap vanishes initially but not later")
        keep = gap > 0
        g0s.append(np.full(keep.sum(), gap[0]))
        ts.append(t[keep])
        ms.append(m[keep])
        gaps.append(gap[keep])
        span = max(span, float(t[-1]))
    if not gaps:
        return QuasiFit(0.0, math.inf, 0.0, 0.0, True, trivial=True)
    g0 = np.concatenate(g0s)
    tt = np.concatenate(ts)
    m = np.concatenate(ms)
    gap = np.concatenate(gaps)
    if omegas is None:
        omegas = np.logspace(-3, 2, 81) / max(span, 1e-12)
    best = None
    for om in omegas:
        out = _lp(g0 * np.exp(-om * tt), m, gap, use_lower_order)
        if out is None:
            continue
        c1, c2, mean_slack, min_slack = out
        if best is None or mean_slack < best[0]:
            best = (mean_slack, om, c1, c2, min_slack)
    if best is None:
        return QuasiFit(math.nan, math.nan, math.nan, math.nan, False)
    _, om, c1, c2, ms = best
    ok = om > 0 and ms >= 0.0
    return QuasiFit(float(c1), float(om), float(c2), ms, bool(ok))


# ---------------------------------------------------------------------------
# correlation dimension

def center_displacement(state: PlateState) -> float:
    """Default observable: displacement at the node nearest the plate center."""
    ny, nx = state.u.values.shape
    return float(state.u.values[ny // 2, nx // 2])


@dataclass(frozen=True)
class DimensionEstimate:
    embed_dims: tuple
    slopes: tuple
    value: float
    plateau: bool
    lag: int

    def __float__(self):
        return self.value


def _first_zero_autocorr(x, max_lag):
    x = x - x.mean()
    for lag in range(1, max_lag):
        if float(np.dot(x[:-lag], x[lag:])) <= 0.0:
            return lag
    return max_lag


def _corr_sums(points, radii, theiler, chunk=512):
    n = len(points)
    counts = np.zeros(len(radii))
    pairs = 0
    r2 = np.asarray(radii) ** 2
    idx = np.arange(n)
    for start in range(0, n, chunk):
        blk = points[start:start + chunk]
        d2 = np.sum((blk[:, None, :] - points[None, :, :]) ** 2, axis=-1)
        bi = idx[start:start + chunk]
        valid = idx[None, :] > bi[:, None] + theiler
        d = d2[valid]
        pairs += d.size
        counts += np.searchsorted(np.sort(d), r2, side="left")
    return counts / max(pairs, 1)


def _scaling_slope(radii, c, min_points=5):
    ok = (c > 0) & (c < 0.5)
    lr, lc = np.log(radii[ok]), np.log(c[ok])
    if len(lr) < min_points:
        return None
    local = np.diff(lc) / np.diff(lr)
    best = None
    for i in range(len(local) - min_points + 2):
        win = local[i:i + min_points - 1]
        # flat stretches of C(r) come from repeated points, not from scaling
        if np.min(win) <= 0.0:
            continue
        spread = float(np.std(win))
        if best is None or spread < best[0]:
            best = (spread, i)
    if best is None:
        return None
    i = best[1]
    sl = slice(i, i + min_points)
    return float(np.polyfit(lr[sl], lc[sl], 1)[0])


def correlation_dimension(series, embed_dims=(2, 3, 4, 5, 6), radii=None, lag: int | None = None,
                          theiler: int | None = None, max_points: int = 2000,
                          min_length: int = 10_000, plateau_tol: float = 0.1) -> DimensionEstimate:
    """Correlation dimension of a scalar series via delay embedding.

    The slope of ``log C(r)`` against ``log r`` is taken over the most
    nearly linear window of the radii.  The plateau value is the mean of the
    last two embedding dimensions when they differ by less than
    ``plateau_tol`` relatively.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or len(x) < min_length:
        raise DataError(f"series too short: need at least {min_length} samples")
    if not np.all(np.isfinite(x)):
        raise DataError("series has non-finite samples")
    dims = tuple(int(d) for d in embed_dims)
    if not dims or min(dims) < 1:
        raise DataError("embedding dimensions must be positive")
    if np.ptp(x) == 0.0:
        return DimensionEstimate(dims, tuple(0.0 for _ in dims), 0.0, True, 0)
    if lag is None:
        lag = _first_zero_autocorr(x, len(x) // 10)
    if theiler is None:
        theiler = lag
    slopes = []
    for d in dims:
        n_vec = len(x) - (d - 1) * lag
        if n_vec < 100:
            raise DataError("series too short for the embedding")
        emb = np.stack([x[i * lag:i * lag + n_vec] for i in range(d)], axis=1)
        step_ = max(1, n_vec // max_points)
        pts = emb[::step_]
        th = max(0, int(math.ceil(theiler / step_)))
        r = radii
        if r is None:
            scale = float(np.max(np.ptp(pts, axis=0)))
            r = scale * np.logspace(-3, 0, 40)
        r = np.asarray(r, dtype=float)
        c = _corr_sums(pts, r, th)
        s = _scaling_slope(r, c)
        if s is None:
            raise DataError(f"no scaling region detected at embedding dimension {d}")
        slopes.append(s)
    plateau = False
    value = slopes[-1]
    if len(slopes) >= 2:
        a, b = slopes[-2], slopes[-1]
        if abs(b - a) <= plateau_tol * max(abs(a), abs(b)):
            plateau = True
            value = 0.5 * (a + b)
    return DimensionEstimate(dims, tuple(slopes), float(value), plateau, int(lag))

"""Retarded aerodynamic potential: delay horizon, history and quadrature.

The force at an interior node x is

    q(x, t) = 1/(2 pi) int_0^{t*} ds int_0^{2 pi} dtheta
              [M_theta^2 u](x - (U + sin theta) s, y - s cos theta, t - s)

with ``M_theta = sin theta d/dx + cos theta d/dy`` and u extended by zero
outside the plate.  Quadrature nodes in s coincide with history snapshots
(composite trapezoid), theta uses the periodic trapezoid rule, and the
snapshot derivative fields are interpolated bilinearly at the foot points.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
import logging
import math

import numpy as np
from scipy import sparse

from .discretization import Grid, ScalarField, _second_derivatives_full, _h2_sq, airy, sobolev_norm
from .errors import DataError, SequencingError, SingularFlowError

log = logging.getLogger(__name__)

__all__ = [
    "DelayConfig",
    "DerivSnapshot",
    "DelayHistory",
    "compute_t_star",
    "verify_t_star",
    "push_snapshot",
    "q_delay",
    "bound_ratio_qnegest2",
    "bound_ratio_sigma",
]

# kernels larger than this many stored entries are not assembled
MAX_KERNEL_ENTRIES = 80_000_000


def _check_flow(u_flow):
    if not math.isfinite(u_flow) or u_flow < 0:
        raise DataError(f"flow speed must be finite and >= 0, got {u_flow}")
    if abs(1.0 - u_flow) < 1e-12:
        raise SingularFlowError("singular flow speed U = 1 (Mach 1) is excluded from the model")


def compute_t_star(u_flow: float, grid: Grid) -> float:
    """Certified delay horizon ``diam(grid) / |1 - U|``.

    The characteristic speed ``sqrt(1 + U^2 + 2 U sin theta)`` is at least
    ``|1 - U|``, so every foot point has left the rectangle once s exceeds
    this value.
    """
    _check_flow(u_flow)
    return grid.diameter() / abs(1.0 - u_flow)


def verify_t_star(u_flow: float, grid: Grid, t: float, n_samples: int = 20000, seed: int = 0) -> bool:
    """Brute-force check that foot points for s in (t, 2t] all leave the plate.

    Samples random (x, theta, s) triples plus the corners of the rectangle
    against the slowest direction theta = -pi/2.
    """
    _check_flow(u_flow)
    if not t > 0:
        raise DataError("t must be positive")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, grid.lx, n_samples)
    y = rng.uniform(0.0, grid.ly, n_samples)
    theta = rng.uniform(0.0, 2 * np.pi, n_samples)
    s = t * (1.0 + rng.uniform(0.0, 1.0, n_samples))
    s[rng.uniform(size=n_samples) < 0.1] = t * (1 + 1e-12)  # crowd the lower end
    cx = np.array([0.0, grid.lx, 0.0, grid.lx])
    cy = np.array([0.0, 0.0, grid.ly, grid.ly])
    x = np.concatenate([x, cx, cx])
    y = np.concatenate([y, cy, cy])
    theta = np.concatenate([theta, np.full(4, -np.pi / 2), np.full(4, np.pi / 2)])
    s = np.concatenate([s, np.full(8, t * (1 + 1e-12))])
    xf = x - (u_flow + np.sin(theta)) * s
    yf = y - s * np.cos(theta)
    inside = (xf > 0) & (xf < grid.lx) & (yf > 0) & (yf < grid.ly)
    return not bool(np.any(inside))


@dataclass(frozen=True)
class DelayConfig:
    """Quadrature parameters of the retarded potential.

    ``t_star / dt`` must be an integer: the s-nodes are the history times.
    """

    u_flow: float
    t_star: float
    n_theta: int
    dt: float

    def __post_init__(self):
        _check_flow(self.u_flow)
        if not (self.t_star > 0 and math.isfinite(self.t_star)):
            raise DataError("t_star must be positive")
        if not self.dt > 0:
            raise DataError("dt must be positive")
        if int(self.n_theta) != self.n_theta or self.n_theta < 8:
            raise DataError("n_theta must be an integer >= 8")
        m = round(self.t_star / self.dt)
        if m < 1 or abs(m * self.dt - self.t_star) > 1e-9 * self.t_star:
            raise DataError(f"t_star/dt = {self.t_star / self.dt!r} is not an integer")

    @classmethod
    def for_grid(cls, grid: Grid, u_flow: float, n_theta: int = 16, n_lags: int = 32,
                 t_star: float | None = None) -> "DelayConfig":
        """Build a config with ``dt = t_star / n_lags``; t_star defaults to the certified bound."""
        if t_star is None:
            t_star = compute_t_star(u_flow, grid)
        return cls(u_flow, t_star, n_theta, t_star / n_lags)

    @property
    def n_lags(self) -> int:
        """M = t_star / dt; the history holds M + 1 snapshots."""
        return round(self.t_star / self.dt)

    def s_weights(self):
        """Composite trapezoid weights over s = m dt, m = 0..M."""
        w = np.full(self.n_lags + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


@dataclass(frozen=True, eq=False)
class DerivSnapshot:
    """Stored state at one history time.

    ``uxx``, ``uxy``, ``uyy`` are given on all nodes of the closed rectangle
    (shape ``grid.full_shape``); boundary values use the clamped ghosts.
    Outside the rectangle the extension is zero.
    """

    t: float
    u: np.ndarray
    uxx: np.ndarray
    uxy: np.ndarray
    uyy: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_field(cls, u: ScalarField, t: float) -> "DerivSnapshot":
        u.check_finite()
        uxx, uxy, uyy = _second_derivatives_full(u.values, u.grid.h)
        return cls(float(t), u.values.copy(), uxx, uxy, uyy)

    def h2_sq(self, h):
        if "h2" not in self._cache:
            self._cache["h2"] = _h2_sq(self.u, h)
        return self._cache["h2"]

    def airy(self, grid: Grid, tol: float, x0=None) -> ScalarField:
        """Cached Airy stress function v(u) of the stored displacement."""
        v = self._cache.get("v")
        if v is None or self._cache.get("v_tol", np.inf) > tol:
            u = ScalarField(grid, self.u)
            v = airy(u, u, tol, x0=x0)
            self._cache["v"] = v
            self._cache["v_tol"] = tol
        return v

    def pi_star(self, grid: Grid, tol: float, nonlinear: bool = True) -> float:
        """Potential energy ``(||Delta u||^2 + ||Delta v(u)||^2 / 2) / 2``."""
        bend = self.h2_sq(grid.h)
        if not nonlinear:
            return 0.5 * bend
        v = self.airy(grid, tol)
        return 0.5 * (bend + 0.5 * _h2_sq(v.values, grid.h))


class DelayHistory:
    """Ring buffer of the last M + 1 snapshots, newest at lag 0."""

    def __init__(self, grid: Grid, cfg: DelayConfig):
        self.grid = grid
        self.cfg = cfg
        self._buf: deque[DerivSnapshot] = deque(maxlen=cfg.n_lags + 1)

    def __len__(self):
        return len(self._buf)

    @property
    def capacity(self) -> int:
        return self._buf.maxlen

    def is_full(self) -> bool:
        return len(self._buf) == self._buf.maxlen

    @property
    def t_head(self) -> float:
        if not self._buf:
            raise SequencingError("history is empty")
        return self._buf[-1].t

    @property
    def newest(self) -> DerivSnapshot:
        return self._buf[-1]

    def lag(self, m: int) -> DerivSnapshot:
        """Snapshot at time ``t_head - m dt``."""
        return self._buf[-1 - m]

    def lags(self):
        """Snapshots ordered by lag 0..M (newest first)."""
        return reversed(self._buf)

    def push(self, u: ScalarField, t: float):
        if u.grid != self.grid:
            raise DataError("field grid does not match history grid")
        if self._buf:
            expected = self.t_head + self.cfg.dt
            if abs(t - expected) > 1e-9 * max(1.0, abs(expected)):
                raise SequencingError(f"push at t={t!r}, expected t_head + dt = {expected!r}")
            t = expected
        self._buf.append(DerivSnapshot.from_field(u, t))

    def push_snapshot(self, snap: DerivSnapshot):
        """Append an already differentiated snapshot (same timing rule as :meth:`push`)."""
        if self._buf:
            expected = self.t_head + self.cfg.dt
            if abs(snap.t - expected) > 1e-9 * max(1.0, abs(expected)):
                raise SequencingError(f"push at t={snap.t!r}, expected {expected!r}")
        self._buf.append(snap)

    @classmethod
    def frozen(cls, grid: Grid, cfg: DelayConfig, u0: ScalarField, t0: float = 0.0) -> "DelayHistory":
        """Full history with the constant prehistory u(t0 + s) = u0, s in [-t*, 0]."""
        hist = cls(grid, cfg)
        snap = DerivSnapshot.from_field(u0, t0)
        M = cfg.n_lags
        for m in range(M, -1, -1):
            hist._buf.append(DerivSnapshot(t0 - m * cfg.dt, snap.u, snap.uxx, snap.uxy, snap.uyy, snap._cache))
        return hist

    @classmethod
    def from_fields(cls, grid: Grid, cfg: DelayConfig, fields, t_head: float) -> "DelayHistory":
        """History from M + 1 fields ordered oldest to newest."""
        fields = list(fields)
        if len(fields) != cfg.n_lags + 1:
            raise DataError(f"need {cfg.n_lags + 1} fields, got {len(fields)}")
        hist = cls(grid, cfg)
        M = cfg.n_lags
        for k, f in enumerate(fields):
            hist._buf.append(DerivSnapshot.from_field(f, t_head - (M - k) * cfg.dt))
        return hist

    def fields(self):
        """Stored displacements, oldest first."""
        return [ScalarField(self.grid, s.u) for s in self._buf]

    def times(self):
        return np.array([s.t for s in self._buf])

    def copy(self) -> "DelayHistory":
        # snapshots are immutable apart from their caches
        other = DelayHistory(self.grid, self.cfg)
        other._buf.extend(self._buf)
        return other

    def perturbed(self, phi: ScalarField) -> "DelayHistory":
        """Copy with every stored displacement shifted by ``phi``."""
        return DelayHistory.from_fields(self.grid, self.cfg, [f + phi for f in self.fields()], self.t_head)

    def h2_integral(self) -> float:
        """Trapezoid approximation of the integral of ||Delta u||^2 over the window."""
        w = self.cfg.s_weights()
        h = self.grid.h
        return float(sum(wm * s.h2_sq(h) for wm, s in zip(w, self.lags())))


def push_snapshot(history: DelayHistory, u: ScalarField, t: float) -> None:
    history.push(u, t)


# ---------------------------------------------------------------------------
# quadrature geometry

def _foot_stencil(grid: Grid, cfg: DelayConfig, s: float):
    """Bilinear interpolation data for all (node, theta) foot points at lag s.

    Returns ``idx`` (N, n_theta, 4) flat indices into the full node array and
    ``w`` (N, n_theta, 4) bilinear weights, zero for points outside.
    """
    h = grid.h
    n = cfg.n_theta
    theta = 2 * np.pi * np.arange(n) / n
    X, Y = grid.coords
    xf = X.ravel()[:, None] - (cfg.u_flow + np.sin(theta))[None, :] * s
    yf = Y.ravel()[:, None] - s * np.cos(theta)[None, :]
    # tolerate rounding at the edges: a foot point within 1e-12 h of the
    # boundary is treated as on it
    eps = 1e-12 * h
    inside = (xf >= -eps) & (xf <= grid.lx + eps) & (yf >= -eps) & (yf <= grid.ly + eps)
    gx = np.clip(xf / h, 0.0, grid.nx + 1)
    gy = np.clip(yf / h, 0.0, grid.ny + 1)
    i0 = np.minimum(np.floor(gx).astype(np.int64), grid.nx)
    j0 = np.minimum(np.floor(gy).astype(np.int64), grid.ny)
    fx = gx - i0
    fy = gy - j0
    stride = grid.nx + 2
    base = j0 * stride + i0
    idx = np.stack([base, base + 1, base + stride, base + stride + 1], axis=-1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1)
    w *= inside[..., None]
    return idx, w


def _trig(cfg: DelayConfig):
    theta = 2 * np.pi * np.arange(cfg.n_theta) / cfg.n_theta
    st, ct = np.sin(theta), np.cos(theta)
    return st * st, 2.0 * st * ct, ct * ct


@lru_cache(maxsize=1)
def _kernel(grid: Grid, cfg: DelayConfig):
    """Sparse matrix mapping stacked snapshot derivatives to q.

    Columns are ordered (lag, component, full node).  Returns None when the
    matrix would hold more than ``MAX_KERNEL_ENTRIES`` entries; the caller
    then evaluates directly.
    """
    N = grid.size
    Nf = (grid.nx + 2) * (grid.ny + 2)
    M = cfg.n_lags
    trig = _trig(cfg)
    ws = cfg.s_weights() / cfg.n_theta  # (1/2pi) * (2pi/n_theta) * w_s
    rows = np.broadcast_to(np.arange(N, dtype=np.int32)[:, None, None], (N, cfg.n_theta, 4)).ravel()
    theta_of = np.broadcast_to(np.arange(cfg.n_theta)[None, :, None], (N, cfg.n_theta, 4)).ravel()
    blocks = []
    total = 0
    for m in range(M + 1):
        idx, w = _foot_stencil(grid, cfg, m * cfg.dt)
        keep = w.ravel() != 0.0
        nk = int(keep.sum())
        total += 3 * nk
        if total > MAX_KERNEL_ENTRIES:
            return None
        r, i, wk, tk = rows[keep], idx.ravel()[keep].astype(np.int32), w.ravel()[keep], theta_of[keep]
        vals = np.concatenate([wk * (ws[m] * trig[c])[tk] for c in range(3)])
        cols = np.concatenate([i + np.int32(c * Nf) for c in range(3)])
        blk = sparse.csr_matrix((vals, (np.tile(r, 3), cols)), shape=(N, 3 * Nf))
        blk.sum_duplicates()
        blocks.append(blk)
    return sparse.hstack(blocks, format="csr")


def _stack(history: DelayHistory) -> np.ndarray:
    return np.concatenate([a.ravel() for s in history.lags() for a in (s.uxx, s.uxy, s.uyy)])


def _q_direct(history: DelayHistory, cfg: DelayConfig):
    grid = history.grid
    trig = _trig(cfg)
    ws = cfg.s_weights() / cfg.n_theta
    q = np.zeros(grid.size)
    for m, snap in enumerate(history.lags()):
        idx, w = _foot_stencil(grid, cfg, m * cfg.dt)
        comb = None
        for c, arr in enumerate((snap.uxx, snap.uxy, snap.uyy)):
            part = np.sum(arr.ravel()[idx] * w, axis=-1) * trig[c][None, :]
            comb = part if comb is None else comb + part
        q += ws[m] * comb.sum(axis=1)
    return q


def q_delay(history: DelayHistory, cfg: DelayConfig | None = None, method: str = "auto") -> ScalarField:
    """Quadrature of the retarded potential over the stored history.

    ``method`` is ``"kernel"`` (cached sparse operator), ``"direct"`` or
    ``"auto"`` (kernel when it fits in memory).
    """
    cfg = history.cfg if cfg is None else cfg
    if cfg.n_lags != history.cfg.n_lags or abs(cfg.dt - history.cfg.dt) > 1e-12 * cfg.dt:
        raise SequencingError("delay config does not match the history sampling")
    if not history.is_full():
        raise SequencingError(f"history holds {len(history)} of {history.capacity} snapshots")
    grid = history.grid
    K = None if method == "direct" else _kernel(grid, cfg)
    if method == "kernel" and K is None:
        raise DataError("kernel too large to assemble")
    if K is None:
        q = _q_direct(history, cfg)
    else:
        stack = _stack(history)
        q = K @ stack
    return ScalarField(grid, q.reshape(grid.shape))


def bound_ratio_qnegest2(history: DelayHistory, cfg: DelayConfig | None = None) -> float:
    """Ratio ``||q||^2 / (t* int ||u(tau)||_2^2 dtau)`` over the history window.

    The H^2 norm is the clamped discrete ``||Delta u||``.  A zero history
    returns 0.
    """
    cfg = history.cfg if cfg is None else cfg
    q = q_delay(history, cfg)
    den = cfg.t_star * history.h2_integral()
    if den == 0.0:
        return 0.0
    num = float(history.grid.h**2 * np.sum(q.values**2))
    return num / den


def bound_ratio_sigma(history: DelayHistory, sigma: float = 1.0, cfg: DelayConfig | None = None) -> float:
    """Ratio ``||q||_{-sigma}^2 / int ||u(tau)||_{2-sigma}^2 dtau`` over the window.

    Spectral norms from the Dirichlet sine basis; ``0 < sigma < 2``.  A zero
    history returns 0.
    """
    if not 0.0 < sigma < 2.0:
        raise DataError("sigma must lie in (0, 2)")
    cfg = history.cfg if cfg is None else cfg
    q = q_delay(history, cfg)
    grid = history.grid
    w = cfg.s_weights()
    den = float(sum(wm * sobolev_norm(ScalarField(grid, s.u), 2.0 - sigma) ** 2
                    for wm, s in zip(w, history.lags())))
    if den == 0.0:
        return 0.0
    return sobolev_norm(q, -sigma) ** 2 / den

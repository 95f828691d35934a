"""Property suites run by ``vkdelay verify``.

Each suite returns a list of :class:`Check` rows; a suite passes when every
row passes.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .delay_force import (
    DelayConfig,
    DelayHistory,
    bound_ratio_qnegest2,
    bound_ratio_sigma,
    compute_t_star,
    verify_t_star,
)
from .discretization import (
    Grid,
    ScalarField,
    airy,
    bilaplacian,
    inner,
    laplacian,
    norm_h2,
    norm_l2,
    solve_bilaplacian,
    vk_bracket,
)
from .dynamics import PhysicsConfig, PlateState, energy, simulate
from .fields import random_clamped_field

__all__ = ["Check", "SUITES", "run_suite"]

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    passed: bool


def _le(name, value, threshold):
    return Check(name, float(value), float(threshold), bool(value <= threshold))


def _ge(name, value, threshold):
    return Check(name, float(value), float(threshold), bool(value >= threshold))


def _interior(grid: Grid, margin: int) -> tuple:
    return (slice(margin, grid.ny - margin), slice(margin, grid.nx - margin))


def suite_stencils(grid: Grid, rng, **_):
    checks = []
    X, Y = grid.coords
    h = grid.h
    polys = [
        (X**3 - 2 * X * Y**2 + Y, 6 * X - 4 * X, 0.0),
        (X**2 * Y + 3 * Y**3 - X, 2 * Y + 18 * Y, 0.0),
        (X**3 + Y**3 + X * Y, 6 * X + 6 * Y, 0.0),
    ]
    for j, (p, lap_exact, bilap_exact) in enumerate(polys):
        u = ScalarField(grid, p)
        scale = float(np.max(np.abs(p)))
        # rounding of the difference quotients grows like eps |p| / h^k
        lap_err = np.max(np.abs(laplacian(u).values - lap_exact)[_interior(grid, 1)])
        checks.append(_le(f"laplacian_cubic_{j}", lap_err, 64 * EPS * scale / h**2))
        bil_err = np.max(np.abs(bilaplacian(u).values - bilap_exact)[_interior(grid, 2)])
        checks.append(_le(f"bilaplacian_cubic_{j}", bil_err, 1024 * EPS * scale / h**4))
    worst = 0.0
    for _ in range(10):
        u = random_clamped_field(grid, rng) + ScalarField(grid, rng.standard_normal(grid.shape) * 1e-3)
        w = random_clamped_field(grid, rng) + ScalarField(grid, rng.standard_normal(grid.shape) * 1e-3)
        a, b = inner(bilaplacian(u), w), inner(u, bilaplacian(w))
        worst = max(worst, abs(a - b) / max(abs(a), abs(b), 1e-300))
    checks.append(_le("bilaplacian_symmetry", worst, 1e-12))
    return checks


def suite_airy(grid: Grid, rng, tol=1e-10, **_):
    checks = []
    u = random_clamped_field(grid, rng)
    w = random_clamped_field(grid, rng)
    rhs = -vk_bracket(u, u)
    v, info = solve_bilaplacian(rhs, tol=tol, return_info=True)
    res = norm_l2(bilaplacian(v) - rhs) / norm_l2(rhs)
    checks.append(_le("airy_residual", res, 1e-10))
    a, b = airy(u, w, tol), airy(w, u, tol)
    checks.append(_le("airy_symmetry", norm_l2(a - b) / norm_l2(a), 1e-9))
    lhs = norm_h2(v) ** 2
    rhs_id = -inner(vk_bracket(u, u), v)
    checks.append(_le("airy_identity", abs(lhs - rhs_id) / abs(lhs), 1e-8))
    return checks


def _bracket_defect(grid: Grid, funcs):
    u, w, phi = (grid.sample(f) for f in funcs)
    d = abs(inner(vk_bracket(u, w), phi) - inner(vk_bracket(u, phi), w))
    return d / (norm_l2(u) * norm_l2(w) * norm_l2(phi))


def suite_bracket(grid: Grid, rng, **_):
    fine = Grid(grid.lx, grid.ly, 2 * grid.nx + 1, 2 * grid.ny + 1)
    checks = []
    for j in range(3):
        funcs = [_smooth_function(grid, rng) for _ in range(3)]
        ratio = _bracket_defect(grid, funcs) / max(_bracket_defect(fine, funcs), 1e-300)
        checks.append(_ge(f"bracket_selfadjoint_ratio_{j}", ratio, 3.0))
    return checks


def _smooth_function(grid: Grid, rng):
    """Random smooth clamped function of (x, y), evaluable on any grid."""
    coef = rng.standard_normal((3, 3))
    lx, ly = grid.lx, grid.ly

    def f(x, y):
        ax, ay = np.pi * x / lx, np.pi * y / ly
        out = 0.0
        for p in range(3):
            for r in range(3):
                out = out + coef[p, r] * np.sin(ax) * np.sin((p + 1) * ax) * np.sin(ay) * np.sin((r + 1) * ay)
        return out

    return f


def suite_tstar(grid: Grid, rng, u_flow=0.0, **_):
    t = compute_t_star(u_flow, grid)
    closed = math.hypot(grid.lx, grid.ly) / abs(1.0 - u_flow)
    return [
        _le("tstar_closed_form", abs(t - closed), 1e-12),
        Check("tstar_characteristics_exit", float(verify_t_star(u_flow, grid, t)), 1.0,
              verify_t_star(u_flow, grid, t)),
    ]


def suite_energy(grid: Grid, rng, tol=1e-10, **_):
    phys = PhysicsConfig(0.0, 0.0, nonlinear=False, delay_coeff=0.0)
    cfg = DelayConfig.for_grid(grid, 0.0, 8, n_lags=int(math.ceil(grid.diameter() / grid.h)))
    u0 = random_clamped_field(grid, rng)
    state = PlateState(u0, grid.field())
    hist = DelayHistory.frozen(grid, cfg, u0)
    traj = simulate(state, hist, phys, cfg, 20, tol=tol, mu=0.0, nu=0.0)
    e = traj.series["full"]
    checks = [_le("linear_energy_conservation", float(np.ptp(e) / e[0]), 1e-8)]
    rest = PlateState.rest(grid)
    hist = DelayHistory.frozen(grid, cfg, rest.u)
    phys_full = PhysicsConfig(0.5, 0.0)
    traj = simulate(rest, hist, phys_full, cfg, 5, tol=tol)
    checks.append(_le("rest_state_fixed_point", float(np.max(np.abs(traj.u))), 0.0))
    rep = energy(PlateState(u0, u0), None, tol)
    checks.append(_ge("pi_star_nonnegative", rep.pi_star, 0.0))
    return checks


def suite_qbounds(grid: Grid, rng, u_flow=0.0, n_theta=16, **_):
    cfg = DelayConfig.for_grid(grid, u_flow, n_theta, n_lags=16)
    ratios, sigma_ratios = [], []
    worst_scale = 0.0
    for _ in range(10):
        fields = [random_clamped_field(grid, rng) for _ in range(cfg.n_lags + 1)]
        hist = DelayHistory.from_fields(grid, cfg, fields, 0.0)
        r = bound_ratio_qnegest2(hist)
        ratios.append(r)
        sigma_ratios.append(bound_ratio_sigma(hist, 1.0))
        scaled = DelayHistory.from_fields(grid, cfg, [f * 3.7 for f in fields], 0.0)
        worst_scale = max(worst_scale, abs(bound_ratio_qnegest2(scaled) - r) / r)
    return [
        Check("qbound_ratio_finite", float(max(ratios)), math.inf, bool(np.all(np.isfinite(ratios)))),
        Check("qbound_sigma1_ratio_finite", float(max(sigma_ratios)), math.inf,
              bool(np.all(np.isfinite(sigma_ratios)))),
        _le("qbound_scale_invariance", worst_scale, 1e-12),
    ]


SUITES = {
    "stencils": suite_stencils,
    "airy": suite_airy,
    "bracket": suite_bracket,
    "tstar": suite_tstar,
    "energy": suite_energy,
    "qbounds": suite_qbounds,
}


def run_suite(name: str, grid: Grid, seed: int = 0, **kwargs):
    if name not in SUITES:
        raise KeyError(name)
    rng = np.random.default_rng(seed)
    return SUITES[name](grid, rng, **kwargs)

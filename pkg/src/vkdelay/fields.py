"""Smooth test fields: bumps and band-limited random clamped fields."""
from __future__ import annotations

import numpy as np

from .discretization import Grid, ScalarField
from .errors import DataError

__all__ = ["bump", "clamped_mode", "random_clamped_field"]


def bump(grid: Grid, amp: float, cx: float, cy: float, w: float) -> ScalarField:
    """C-infinity bump ``amp * exp(1 - 1/(1 - r^2/w^2))`` supported in r < w."""
    if not w > 0:
        raise DataError("bump width must be positive")
    X, Y = grid.coords
    r2 = ((X - cx) ** 2 + (Y - cy) ** 2) / (w * w)
    vals = np.zeros(grid.shape)
    inside = r2 < 1.0
    vals[inside] = amp * np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return ScalarField(grid, vals)


def clamped_mode(grid: Grid, p: int, r: int) -> ScalarField:
    """``sin(pi x/lx) sin(p pi x/lx) sin(pi y/ly) sin(r pi y/ly)``.

    Each factor vanishes with its first derivative on the edges, so the mode
    satisfies the clamped conditions.
    """
    X, Y = grid.coords
    ax = np.pi * X / grid.lx
    ay = np.pi * Y / grid.ly
    return ScalarField(grid, np.sin(ax) * np.sin(p * ax) * np.sin(ay) * np.sin(r * ay))


def random_clamped_field(grid: Grid, rng: np.random.Generator, n_modes: int = 4) -> ScalarField:
    """Low-pass random field: Gaussian combination of the first clamped modes.

    Coefficients are damped as ``1/(p^2 + r^2)`` so the result is smooth.
    """
    vals = np.zeros(grid.shape)
    for p in range(1, n_modes + 1):
        for r in range(1, n_modes + 1):
            vals += rng.standard_normal() / (p * p + r * r) * clamped_mode(grid, p, r).values
    return ScalarField(grid, vals)

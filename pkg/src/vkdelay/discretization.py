"""Finite-difference operators for the clamped rectangular plate.

Fields live on the interior nodes of a uniform square mesh.  Boundary nodes
carry u = 0 and a ghost layer mirrors the first interior layer, which is the
second-order realization of the clamped conditions u = du/dn = 0.

Arrays are stored with shape ``(ny, nx)``: the first index runs along y, the
second along x, so ``values.ravel()`` is row-major with node (i, j) at
position ``j * nx + i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
from scipy import fft

from .errors import ConvergenceError, DataError, GridMismatchError

__all__ = [
    "Grid",
    "ScalarField",
    "SolveInfo",
    "laplacian",
    "bilaplacian",
    "solve_bilaplacian",
    "solve_shifted_bilaplacian",
    "vk_bracket",
    "airy",
    "dx",
    "inner",
    "norm_l2",
    "norm_h2",
    "sobolev_norm",
]


@dataclass(frozen=True)
class Grid:
    """Uniform discretization of the rectangle [0, lx] x [0, ly].

    ``nx`` and ``ny`` count interior nodes; the mesh spacing is
    ``h = lx / (nx + 1) = ly / (ny + 1)``.
    """

    lx: float
    ly: float
    nx: int
    ny: int

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise DataError("nx, ny must be integers")
        if self.nx < 5 or self.ny < 5:
            raise DataError(f"nx, ny must be >= 5 for the 13-point stencil, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0) or not (math.isfinite(self.lx) and math.isfinite(self.ly)):
            raise DataError("side lengths must be positive and finite")
        hx = self.lx / (self.nx + 1)
        hy = self.ly / (self.ny + 1)
        if abs(hx - hy) > 1e-12 * max(hx, hy):
            raise DataError(f"mesh is not square: lx/(nx+1)={hx!r}, ly/(ny+1)={hy!r}")

    @classmethod
    def square(cls, n, length=1.0):
        return cls(length, length, n, n)

    @property
    def h(self) -> float:
        return self.lx / (self.nx + 1)

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def full_shape(self):
        """Shape of the node array including the boundary ring."""
        return (self.ny + 2, self.nx + 2)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def diameter(self) -> float:
        return math.sqrt(self.lx**2 + self.ly**2)

    @cached_property
    def x(self):
        return self.h * np.arange(1, self.nx + 1)

    @cached_property
    def y(self):
        return self.h * np.arange(1, self.ny + 1)

    @cached_property
    def coords(self):
        """Meshgrid ``(X, Y)`` of the interior nodes, each of shape ``(ny, nx)``."""
        return np.meshgrid(self.x, self.y)

    def field(self, values=None) -> "ScalarField":
        if values is None:
            values = np.zeros(self.shape)
        return ScalarField(self, values)

    def sample(self, func) -> "ScalarField":
        """Evaluate ``func(X, Y)`` on the interior nodes."""
        X, Y = self.coords
        return ScalarField(self, np.broadcast_to(func(X, Y), self.shape).astype(float))

    @cached_property
    def _dst_eigs(self):
        # eigenvalues of the Dirichlet 5-point Laplacian in the DST-I basis
        h = self.h
        kx = np.arange(1, self.nx + 1)
        ky = np.arange(1, self.ny + 1)
        lx = -4.0 / h**2 * np.sin(kx * np.pi / (2 * (self.nx + 1))) ** 2
        ly = -4.0 / h**2 * np.sin(ky * np.pi / (2 * (self.ny + 1))) ** 2
        return ly[:, None] + lx[None, :]


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values on the interior nodes of ``grid``."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            if v.size == self.grid.size:
                v = v.reshape(self.grid.shape)
            else:
                raise GridMismatchError(f"values of shape {v.shape} do not fit grid {self.grid.shape}")
        object.__setattr__(self, "values", v)

    def check_finite(self):
        if not np.all(np.isfinite(self.values)):
            raise DataError("field contains non-finite values")
        return self

    def _other(self, other):
        if isinstance(other, ScalarField):
            _same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.grid, self.values / self._other(other))

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def copy(self):
        return ScalarField(self.grid, self.values.copy())

    @property
    def flat(self):
        return self.values.ravel()


def _same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError(f"grid mismatch: {g} vs {f.grid}")
    return g


def _checked(*fields):
    g = _same_grid(*fields)
    for f in fields:
        f.check_finite()
    return g


# ---------------------------------------------------------------------------
# array kernels (no validation)

def _pad(a):
    """Interior array -> full node array with the zero boundary ring."""
    return np.pad(a, 1)


def _ghosted(a):
    """Interior array -> array with boundary ring and mirrored ghost ring."""
    g = np.pad(a, 2)
    g[0, :] = g[2, :]
    g[-1, :] = g[-3, :]
    g[:, 0] = g[:, 2]
    g[:, -1] = g[:, -3]
    return g


def _five_point(p, h):
    """5-point Laplacian at the inner nodes of the padded array ``p``."""
    return (p[1:-1, 2:] + p[1:-1, :-2] + p[2:, 1:-1] + p[:-2, 1:-1] - 4.0 * p[1:-1, 1:-1]) / h**2


def _lap(a, h):
    return _five_point(_pad(a), h)


def _lap_full(a, h):
    """Laplacian on all nodes including the boundary, clamped ghosts."""
    return _five_point(_ghosted(a), h)


def _bilap(a, h):
    return _five_point(_lap_full(a, h), h)


def _second_derivatives(a, h):
    """(u_xx, u_xy, u_yy) on interior nodes."""
    p = _pad(a)
    uxx = (p[1:-1, 2:] - 2.0 * p[1:-1, 1:-1] + p[1:-1, :-2]) / h**2
    uyy = (p[2:, 1:-1] - 2.0 * p[1:-1, 1:-1] + p[:-2, 1:-1]) / h**2
    uxy = (p[2:, 2:] - p[:-2, 2:] - p[2:, :-2] + p[:-2, :-2]) / (4.0 * h**2)
    return uxx, uxy, uyy


def _second_derivatives_full(a, h):
    """(u_xx, u_xy, u_yy) on all nodes including the boundary ring."""
    g = _ghosted(a)
    uxx = (g[1:-1, 2:] - 2.0 * g[1:-1, 1:-1] + g[1:-1, :-2]) / h**2
    uyy = (g[2:, 1:-1] - 2.0 * g[1:-1, 1:-1] + g[:-2, 1:-1]) / h**2
    uxy = (g[2:, 2:] - g[:-2, 2:] - g[2:, :-2] + g[:-2, :-2]) / (4.0 * h**2)
    return uxx, uxy, uyy


def _bracket(a, b, h):
    axx, axy, ayy = _second_derivatives(a, h)
    bxx, bxy, byy = _second_derivatives(b, h)
    # sum of the two products is written so that swapping a and b is bit-exact
    return (axx * byy + ayy * bxx) - 2.0 * (axy * bxy)


def _h2_sq(a, h):
    """Trapezoid quadrature of (Delta u)^2 over the closed rectangle.

    Equals <Delta^2 u, u>: the boundary-node Laplacian values carry the
    clamped ghost contribution.
    """
    L = _lap_full(a, h)
    interior = np.sum(L[1:-1, 1:-1] ** 2)
    edges = np.sum(L[0, 1:-1] ** 2) + np.sum(L[-1, 1:-1] ** 2) + np.sum(L[1:-1, 0] ** 2) + np.sum(L[1:-1, -1] ** 2)
    return h**2 * (interior + 0.5 * edges)


# ---------------------------------------------------------------------------
# public operators

def laplacian(u: ScalarField) -> ScalarField:
    """5-point Laplacian with zero boundary trace."""
    g = _checked(u)
    return ScalarField(g, _lap(u.values, g.h))


def bilaplacian(u: ScalarField) -> ScalarField:
    """Clamped 13-point biharmonic operator.

    Applies the 5-point Laplacian twice; the intermediate Laplacian is also
    evaluated on the boundary nodes using the mirrored ghosts, which adds
    ``2/h^4`` to the diagonal next to each edge.  The resulting matrix is
    symmetric positive definite.
    """
    g = _checked(u)
    return ScalarField(g, _bilap(u.values, g.h))


def dx(u: ScalarField) -> ScalarField:
    """Centered first difference in x with zero boundary trace."""
    g = _checked(u)
    p = _pad(u.values)
    return ScalarField(g, (p[1:-1, 2:] - p[1:-1, :-2]) / (2.0 * g.h))


def vk_bracket(u: ScalarField, w: ScalarField) -> ScalarField:
    """von Karman bracket ``u_xx w_yy + u_yy w_xx - 2 u_xy w_xy``."""
    g = _checked(u, w)
    return ScalarField(g, _bracket(u.values, w.values, g.h))


def inner(u: ScalarField, w: ScalarField) -> float:
    g = _same_grid(u, w)
    return float(g.h**2 * np.vdot(u.values, w.values))


def norm_l2(u: ScalarField) -> float:
    return math.sqrt(inner(u, u))


def norm_h2(u: ScalarField) -> float:
    """Discrete ``||Delta u||``, consistent with the clamped operator.

    ``norm_h2(u)**2 == inner(bilaplacian(u), u)`` up to rounding.  Interior
    nodes use weight ``h^2``, edge nodes ``h^2/2``.
    """
    return math.sqrt(_h2_sq(u.values, u.grid.h))


def sobolev_norm(u: ScalarField, s: float) -> float:
    """Spectral H^s norm, ``s`` in [-2, 2], from the Dirichlet sine basis.

    ``s = 0`` reproduces :func:`norm_l2` exactly (up to rounding); negative
    ``s`` gives the dual norms.
    """
    g = u.grid
    if not -2.0 <= s <= 2.0:
        raise DataError("s must lie in [-2, 2]")
    c = fft.dstn(u.values, type=1, norm="ortho")
    mu = -g._dst_eigs
    return math.sqrt(g.h**2 * float(np.sum(mu**s * c**2)))


# ---------------------------------------------------------------------------
# solvers

@dataclass
class SolveInfo:
    iterations: int
    residual: float  # relative, recomputed from the returned solution


def _pcg(apply_A, b, apply_M, tol, maxiter, x0=None):
    """Preconditioned CG on flattened arrays.

    The stopping test uses the recursively updated residual; the returned
    residual is recomputed from scratch so it certifies the solution.
    """
    bnorm = np.linalg.norm(b)
    if not np.isfinite(bnorm):
        raise DataError("non-finite right-hand side")
    if bnorm == 0.0:
        return np.zeros_like(b), SolveInfo(0, 0.0)
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = x0.copy()
        r = b - apply_A(x)
    target = tol * bnorm
    it = 0
    for restart in range(4):
        z = apply_M(r)
        p = z.copy()
        rz = np.vdot(r, z)
        while np.linalg.norm(r) > 0.5 * target and it < maxiter:
            Ap = apply_A(p)
            alpha = rz / np.vdot(p, Ap)
            x += alpha * p
            r -= alpha * Ap
            z = apply_M(r)
            rz_new = np.vdot(r, z)
            p = z + (rz_new / rz) * p
            rz = rz_new
            it += 1
        r = b - apply_A(x)
        res = np.linalg.norm(r) / bnorm
        if not np.isfinite(res):
            raise ConvergenceError("CG produced a non-finite iterate", residual=res, iterations=it)
        if res <= tol or it >= maxiter:
            break
    if res > tol:
        raise ConvergenceError(
            f"CG did not reach relative residual {tol:g} in {it} iterations (final {res:.3e})",
            residual=res,
            iterations=it,
        )
    return x, SolveInfo(it, res)


def solve_shifted_bilaplacian(rhs: ScalarField, alpha: float, beta: float, tol: float = 1e-10,
                              maxiter: int | None = None, x0: ScalarField | None = None,
                              return_info: bool = False):
    """Solve ``(alpha I + beta Delta^2) v = rhs`` by preconditioned CG.

    ``alpha >= 0``, ``beta > 0``.  The preconditioner is the same shifted
    operator with simply supported instead of clamped edges, diagonalized by
    the type-I sine transform.
    """
    if not tol > 0:
        raise DataError("tol must be positive")
    if alpha < 0 or not beta > 0:
        raise DataError("need alpha >= 0 and beta > 0")
    g = _checked(rhs)
    h = g.h
    shape = g.shape
    denom = alpha + beta * g._dst_eigs**2

    def apply_A(x):
        xa = x.reshape(shape)
        return (alpha * xa + beta * _bilap(xa, h)).ravel()

    def apply_M(r):
        c = fft.dstn(r.reshape(shape), type=1, norm="ortho")
        return fft.idstn(c / denom, type=1, norm="ortho").ravel()

    if maxiter is None:
        maxiter = 20 * g.size
    x0a = None
    if x0 is not None:
        _same_grid(rhs, x0)
        x0a = x0.values.ravel()
    x, info = _pcg(apply_A, rhs.values.ravel().copy(), apply_M, tol, maxiter, x0a)
    out = ScalarField(g, x.reshape(shape))
    return (out, info) if return_info else out


def solve_bilaplacian(rhs: ScalarField, tol: float = 1e-10, maxiter: int | None = None,
                      x0: ScalarField | None = None, return_info: bool = False):
    """Solve the clamped problem ``Delta^2 v = rhs`` with certified residual.

    Guarantees ``||Delta^2 v - rhs|| <= tol * ||rhs||`` or raises
    :class:`ConvergenceError`.
    """
    return solve_shifted_bilaplacian(rhs, 0.0, 1.0, tol=tol, maxiter=maxiter, x0=x0,
                                     return_info=return_info)


def airy(u: ScalarField, w: ScalarField, tol: float = 1e-10, x0: ScalarField | None = None) -> ScalarField:
    """Airy stress function v(u, w): ``Delta^2 v = -[u, w]``, v clamped."""
    return solve_bilaplacian(-vk_bracket(u, w), tol=tol, x0=x0)

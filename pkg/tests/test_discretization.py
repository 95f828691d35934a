import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse
from scipy.sparse.linalg import spsolve

from vkdelay.discretization import (
    Grid,
    ScalarField,
    airy,
    bilaplacian,
    dx,
    inner,
    laplacian,
    norm_h2,
    norm_l2,
    sobolev_norm,
    solve_bilaplacian,
    solve_shifted_bilaplacian,
    vk_bracket,
)
from vkdelay.errors import ConvergenceError, DataError, GridMismatchError
from vkdelay.fields import random_clamped_field


def dyadic_grid(n=31):
    # h = 1/32: polynomial values and difference quotients are exact in binary
    return Grid((n + 1) / 32, (n + 1) / 32, n, n)


def full_laplacian_matrix(grid):
    """Independent assembly of the Laplacian on interior and edge nodes.

    Rows: every node of the closed rectangle except the corners; boundary
    values vanish and the ghost node mirrors the first interior node.
    """
    nx, ny, h = grid.nx, grid.ny, grid.h

    def col(i, j):
        return (j - 1) * nx + (i - 1) if 1 <= i <= nx and 1 <= j <= ny else None

    rows, cols, vals, weights = [], [], [], []
    r = 0
    for j in range(0, ny + 2):
        for i in range(0, nx + 2):
            on_x_edge = i in (0, nx + 1)
            on_y_edge = j in (0, ny + 1)
            if on_x_edge and on_y_edge:
                continue
            entries = {}
            if not (on_x_edge or on_y_edge):
                entries[col(i, j)] = -4.0
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    c = col(i + di, j + dj)
                    if c is not None:
                        entries[c] = entries.get(c, 0.0) + 1.0
                weights.append(1.0)
            else:
                # only the ghost/inner pair survives: 2 u_inner
                ii = 1 if i == 0 else nx if i == nx + 1 else i
                jj = 1 if j == 0 else ny if j == ny + 1 else j
                entries[col(ii, jj)] = 2.0
                weights.append(0.5)
            for c, v in entries.items():
                rows.append(r)
                cols.append(c)
                vals.append(v / h**2)
            r += 1
    L = sparse.csr_matrix((vals, (rows, cols)), shape=(r, nx * ny))
    return L, np.array(weights)


def operator_matrix(grid, op):
    n = grid.size
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        cols.append(op(ScalarField(grid, e)).values.ravel())
    return np.array(cols).T


def test_grid_validation():
    with pytest.raises(DataError):
        Grid.square(3)
    with pytest.raises(DataError):
        Grid(1.0, 2.0, 15, 15)
    g = Grid(2.0, 1.0, 31, 15)
    assert g.h == pytest.approx(1 / 16)
    assert g.shape == (15, 31)


def test_field_shape_and_grid_checks(grid15):
    with pytest.raises(GridMismatchError):
        ScalarField(grid15, np.zeros((3, 3)))
    with pytest.raises(GridMismatchError):
        inner(grid15.field(), Grid.square(7).field())
    with pytest.raises(DataError):
        ScalarField(grid15, np.full(grid15.shape, np.nan)).check_finite()


def test_polynomial_exactness_on_dyadic_grid():
    g = dyadic_grid()
    X, Y = g.coords
    u = ScalarField(g, X**3 - 3 * X * Y**2 + 2 * Y**3 + X * Y - 0.5)
    lap = laplacian(u).values
    exact = 6 * X - 6 * X + 12 * Y
    assert np.max(np.abs(lap - exact)[1:-1, 1:-1]) <= 1e-10
    assert np.max(np.abs(bilaplacian(u).values)[2:-2, 2:-2]) <= 1e-10
    q = ScalarField(g, X**2 - 3 * Y**2)
    assert np.max(np.abs(bilaplacian(q).values)[2:-2, 2:-2]) <= 1e-10
    assert np.max(np.abs(dx(q).values - 2 * X)[:, 1:-1]) <= 1e-12


def test_bilaplacian_matches_weighted_normal_form():
    # <B u, u> = sum_w (L u)^2, so B = L^T W L
    g = Grid.square(7)
    L, w = full_laplacian_matrix(g)
    B_oracle = (L.T @ sparse.diags(w) @ L).toarray()
    B = operator_matrix(g, bilaplacian)
    assert np.allclose(B, B_oracle, rtol=0, atol=1e-9 * np.abs(B).max())
    d = np.diag(B).reshape(g.shape) * g.h**4
    assert d[3, 3] == pytest.approx(20.0)
    assert d[0, 3] == pytest.approx(21.0)
    assert d[0, 0] == pytest.approx(22.0)


def test_bilaplacian_spd(grid15):
    B = operator_matrix(Grid.square(9), bilaplacian)
    assert np.allclose(B, B.T, atol=1e-6)
    assert np.linalg.eigvalsh(B).min() > 0


def test_norm_h2_is_energy_norm(grid31, rng):
    u = random_clamped_field(grid31, rng) + ScalarField(grid31, 1e-2 * rng.standard_normal(grid31.shape))
    assert norm_h2(u) ** 2 == pytest.approx(inner(bilaplacian(u), u), rel=1e-12)


def test_bracket_polynomials():
    g = dyadic_grid()
    X, Y = g.coords
    u = ScalarField(g, X**2)
    w = ScalarField(g, Y**2)
    br = vk_bracket(u, w).values
    assert np.all(br[1:-1, 1:-1] == 4.0)
    # [xy, xy] = -2
    p = ScalarField(g, X * Y)
    assert np.all(vk_bracket(p, p).values[1:-1, 1:-1] == -2.0)


def test_bracket_symmetric_and_bilinear(grid15, rng):
    u, w, z = (random_clamped_field(grid15, rng) for _ in range(3))
    assert np.array_equal(vk_bracket(u, w).values, vk_bracket(w, u).values)
    lhs = vk_bracket(u * 2.0 + z, w).values
    rhs = 2.0 * vk_bracket(u, w).values + vk_bracket(z, w).values
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(rhs).max())


def test_solver_matches_sparse_direct_oracle(rng):
    g = Grid.square(9)
    L, w = full_laplacian_matrix(g)
    B = (L.T @ sparse.diags(w) @ L).tocsc()
    rhs = rng.standard_normal(g.size)
    x_ref = spsolve(B, rhs)
    v, info = solve_bilaplacian(ScalarField(g, rhs), tol=1e-12, return_info=True)
    assert info.residual <= 1e-12
    assert np.allclose(v.values.ravel(), x_ref, rtol=1e-9, atol=1e-12 * np.abs(x_ref).max())
    s = solve_shifted_bilaplacian(ScalarField(g, rhs), 2.0, 0.5, tol=1e-12)
    A = (2.0 * sparse.identity(g.size) + 0.5 * B).tocsc()
    assert np.allclose(s.values.ravel(), spsolve(A, rhs), rtol=1e-9)


def test_solver_errors(grid15, rng):
    rhs = ScalarField(grid15, rng.standard_normal(grid15.shape))
    with pytest.raises(ConvergenceError) as exc:
        solve_bilaplacian(rhs, tol=1e-14, maxiter=1)
    assert exc.value.residual > 1e-14
    with pytest.raises(DataError):
        solve_bilaplacian(ScalarField(grid15, np.full(grid15.shape, np.inf)))
    assert np.all(solve_bilaplacian(grid15.field()).values == 0.0)


def test_airy_structure(grid31, rng):
    u = random_clamped_field(grid31, rng)
    w = random_clamped_field(grid31, rng)
    a, b = airy(u, w), airy(w, u)
    assert norm_l2(a - b) <= 1e-9 * norm_l2(a)
    v = airy(u, u)
    lhs = norm_h2(v) ** 2
    assert lhs == pytest.approx(-inner(vk_bracket(u, u), v), rel=1e-8)
    # quadratic homogeneity
    assert norm_l2(airy(u * 3.0, u * 3.0) - v * 9.0) <= 1e-9 * norm_l2(v) * 9


def test_sobolev_norm(grid15, rng):
    u = random_clamped_field(grid15, rng)
    assert sobolev_norm(u, 0.0) == pytest.approx(norm_l2(u), rel=1e-12)
    vals = [sobolev_norm(u, s) for s in (0.0, 0.5, 1.0, 2.0)]
    assert vals == sorted(vals)
    # duality: ||u||_0^2 <= ||u||_{-1} ||u||_1
    assert norm_l2(u) ** 2 <= sobolev_norm(u, -1.0) * sobolev_norm(u, 1.0) * (1 + 1e-12)
    with pytest.raises(DataError):
        sobolev_norm(u, 3.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-10, 10), b=st.floats(-10, 10))
def test_bilaplacian_linear_and_symmetric(seed, a, b):
    g = Grid.square(9)
    r = np.random.default_rng(seed)
    u = ScalarField(g, r.standard_normal(g.shape))
    w = ScalarField(g, r.standard_normal(g.shape))
    lhs = bilaplacian(u * a + w * b).values
    rhs = a * bilaplacian(u).values + b * bilaplacian(w).values
    scale = max(1.0, np.abs(rhs).max())
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale * (1 + abs(a) + abs(b))
    x, y = inner(bilaplacian(u), w), inner(u, bilaplacian(w))
    assert math.isclose(x, y, rel_tol=1e-11, abs_tol=1e-11 * g.h**-4)

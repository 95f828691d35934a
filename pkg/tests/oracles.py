"""Independent reference computations shared by the tests."""
import numpy as np
from scipy.interpolate import RegularGridInterpolator


def dense_potential(grid, snap, u_flow, t_star, n_theta=512, n_s=512):
    """Retarded potential of a constant-in-time history by dense quadrature.

    Uses scipy's linear interpolator on the snapshot's full-node derivative
    arrays (zero outside the plate), a uniform trapezoid rule in s with
    ``n_s`` panels and the periodic rule with ``n_theta`` nodes in theta.
    """
    xs = np.arange(grid.nx + 2) * grid.h
    ys = np.arange(grid.ny + 2) * grid.h
    interps = [RegularGridInterpolator((ys, xs), a, bounds_error=False, fill_value=0.0)
               for a in (snap.uxx, snap.uxy, snap.uyy)]
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    st, ct = np.sin(th), np.cos(th)
    coef = (st * st, 2 * st * ct, ct * ct)
    s = np.linspace(0.0, t_star, n_s + 1)
    ws = np.full(n_s + 1, s[1])
    ws[[0, -1]] *= 0.5
    X, Y = grid.coords
    X, Y = X.ravel(), Y.ravel()
    q = np.zeros(X.size)
    for sk, wk in zip(s, ws):
        xf = X[:, None] - (u_flow + st)[None, :] * sk
        yf = Y[:, None] - sk * ct[None, :]
        pts = np.stack([yf.ravel(), xf.ravel()], axis=-1)
        val = sum(c[None, :] * f(pts).reshape(xf.shape) for c, f in zip(coef, interps))
        q += wk * val.sum(axis=1) / n_theta
    return q.reshape(grid.shape)

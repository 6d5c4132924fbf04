"""Pure NumPy reference kernels.

Raw-array implementations of the staggered-grid operators and the energy
value/gradient/Hessian-vector kernels. The compiled module ``_core`` mirrors
this module function-for-function; ``backend`` selects one of the two at
import time. Everything here is deterministic and allocation-simple; the
array-shape conventions are those of :mod:`mfgrid.grid`.

Boundary case splits (zero-flux in space, prescribed initial density in time)
are written out explicitly; the adjoints are derived independently from their
own case splits rather than by mechanically transposing the forward code, so
that the adjoint-identity tests are meaningful.
"""

from __future__ import annotations

import numpy as np

# ---------------------------------------------------------------------------
# interpolation operators: staggered -> centered
# ---------------------------------------------------------------------------


def interp_t(rho: np.ndarray, mu0: np.ndarray) -> np.ndarray:
    """Average t-staggered density onto the central grid.

    First slice averages the initial density mu0 with the first rho slice;
    interior slices average consecutive rho slices.
    """
    out = np.empty_like(rho)
    out[:, :, 0] = 0.5 * (mu0 + rho[:, :, 0])
    out[:, :, 1:] = 0.5 * (rho[:, :, :-1] + rho[:, :, 1:])
    return out


def interp_x(mx: np.ndarray) -> np.ndarray:
    """Average x-staggered flux onto the central grid (zero-flux boundary).

    Boundary columns see a single neighbor and get half its value; the
    missing neighbor is the zero boundary flux.
    """
    nxm1, ny, nt = mx.shape
    out = np.zeros((nxm1 + 1, ny, nt))
    if nxm1 == 0:
        return out
    out[0] = 0.5 * mx[0]
    out[-1] = 0.5 * mx[-1]
    if nxm1 > 1:
        out[1:-1] = 0.5 * (mx[:-1] + mx[1:])
    return out


def interp_y(my: np.ndarray) -> np.ndarray:
    """Average y-staggered flux onto the central grid (zero-flux boundary)."""
    nx, nym1, nt = my.shape
    out = np.zeros((nx, nym1 + 1, nt))
    if nym1 == 0:
        return out
    out[:, 0] = 0.5 * my[:, 0]
    out[:, -1] = 0.5 * my[:, -1]
    if nym1 > 1:
        out[:, 1:-1] = 0.5 * (my[:, :-1] + my[:, 1:])
    return out


# ---------------------------------------------------------------------------
# difference operators: staggered -> centered
# ---------------------------------------------------------------------------


def diff_t(rho: np.ndarray, mu0: np.ndarray, dt: float) -> np.ndarray:
    """Backward time difference with prescribed initial density mu0."""
    out = np.empty_like(rho)
    out[:, :, 0] = (rho[:, :, 0] - mu0) / dt
    out[:, :, 1:] = (rho[:, :, 1:] - rho[:, :, :-1]) / dt
    return out


def diff_x(mx: np.ndarray, dx: float) -> np.ndarray:
    """Central x difference with zero boundary flux (signed boundary rows)."""
    nxm1, ny, nt = mx.shape
    out = np.zeros((nxm1 + 1, ny, nt))
    if nxm1 == 0:
        return out
    out[0] = mx[0] / dx
    out[-1] = -mx[-1] / dx
    if nxm1 > 1:
        out[1:-1] = (mx[1:] - mx[:-1]) / dx
    return out


def diff_y(my: np.ndarray, dy: float) -> np.ndarray:
    """Central y difference with zero boundary flux."""
    nx, nym1, nt = my.shape
    out = np.zeros((nx, nym1 + 1, nt))
    if nym1 == 0:
        return out
    out[:, 0] = my[:, 0] / dy
    out[:, -1] = -my[:, -1] / dy
    if nym1 > 1:
        out[:, 1:-1] = (my[:, 1:] - my[:, :-1]) / dy
    return out


# ---------------------------------------------------------------------------
# adjoint interpolation operators: centered -> staggered
# ---------------------------------------------------------------------------


def adj_interp_t(phi: np.ndarray) -> np.ndarray:
    """Adjoint of interp_t: averages consecutive phi slices; last point
    carries half of the final slice only."""
    out = np.empty_like(phi)
    out[:, :, :-1] = 0.5 * (phi[:, :, :-1] + phi[:, :, 1:])
    out[:, :, -1] = 0.5 * phi[:, :, -1]
    return out


def adj_interp_x(phi: np.ndarray) -> np.ndarray:
    """Adjoint of interp_x: two-point average onto the x-staggered grid."""
    return 0.5 * (phi[:-1] + phi[1:])


def adj_interp_y(phi: np.ndarray) -> np.ndarray:
    """Adjoint of interp_y: two-point average onto the y-staggered grid."""
    return 0.5 * (phi[:, :-1] + phi[:, 1:])


# ---------------------------------------------------------------------------
# adjoint difference operators: centered -> staggered
# ---------------------------------------------------------------------------


def adj_diff_t(phi: np.ndarray, dt: float) -> np.ndarray:
    """Adjoint of diff_t: negated forward difference; last point phi/dt."""
    out = np.empty_like(phi)
    out[:, :, :-1] = -(phi[:, :, 1:] - phi[:, :, :-1]) / dt
    out[:, :, -1] = phi[:, :, -1] / dt
    return out


def adj_diff_x(phi: np.ndarray, dx: float) -> np.ndarray:
    """Adjoint of diff_x: negated forward difference onto the x-staggered grid.

    The sign makes <diff_x(m), phi> = <m, adj_diff_x(phi)> exact, mirroring
    the continuous integration by parts <div m, phi> = -<m, grad phi> under
    the zero-flux boundary closure.
    """
    return (phi[:-1] - phi[1:]) / dx


def adj_diff_y(phi: np.ndarray, dy: float) -> np.ndarray:
    """Adjoint of diff_y: negated forward difference onto the y-staggered grid."""
    return (phi[:, :-1] - phi[:, 1:]) / dy


# ---------------------------------------------------------------------------
# per-cell kinetic algebra shared by the energy kernels
# ---------------------------------------------------------------------------


def _kinetic_terms(mxb, myb, gxx, gxy, gyy):
    """Return (q, sx, sy) with q = mbar^T g mbar, s = g mbar, broadcast over t.

    The metric arrays are (n_x, n_y); myb/gxy/gyy are None in 1D, in which
    case sy is None and q = gxx * mxb^2.
    """
    gxx3 = gxx[:, :, None]
    if myb is None:
        sx = gxx3 * mxb
        return sx * mxb, sx, None
    gxy3 = gxy[:, :, None]
    gyy3 = gyy[:, :, None]
    sx = gxx3 * mxb + gxy3 * myb
    sy = gxy3 * mxb + gyy3 * myb
    q = sx * mxb + sy * myb
    return q, sx, sy


# ---------------------------------------------------------------------------
# energy kernels (interpolants are precomputed by the caller, which has
# already verified rho_bar > 0 and terminal rho > 0)
# ---------------------------------------------------------------------------


def energy_value(rho, rho_bar, mxb, myb, gxx, gxy, gyy, b,
                 gamma_i, gamma_t, mu1, dx, dy, dt) -> float:
    """Discrete energy: kinetic + entropy + obstacle + terminal divergence."""
    w = dx * dy * dt
    q, _, _ = _kinetic_terms(mxb, myb, gxx, gxy, gyy)
    kinetic = 0.5 * float(np.sum(q / rho_bar))
    entropy = gamma_i * float(np.sum(rho_bar * np.log(rho_bar)))
    obstacle = float(np.sum(rho * b[:, :, None]))
    rho_term = rho[:, :, -1]
    terminal = gamma_t * dx * dy * float(
        np.sum(rho_term * (np.log(rho_term) - np.log(mu1))))
    return w * (kinetic + entropy + obstacle) + terminal


def energy_grad(rho, rho_bar, mxb, myb, gxx, gxy, gyy, b,
                gamma_i, gamma_t, mu1, dx, dy, dt):
    """Euclidean partials of the energy w.r.t. the raw entries of (rho, m)."""
    w = dx * dy * dt
    q, sx, sy = _kinetic_terms(mxb, myb, gxx, gxy, gyy)
    h_alpha = -0.5 * q / rho_bar**2 + gamma_i * (np.log(rho_bar) + 1.0)
    g_rho = w * (adj_interp_t(h_alpha) + b[:, :, None])
    rho_term = rho[:, :, -1]
    g_rho[:, :, -1] += gamma_t * dx * dy * (
        np.log(rho_term) - np.log(mu1) + 1.0)
    g_mx = w * adj_interp_x(sx / rho_bar)
    g_my = w * adj_interp_y(sy / rho_bar) if myb is not None else None
    return g_rho, g_mx, g_my


def energy_hvp(rho, rho_bar, mxb, myb, vrho, vrho_bar, vmxb, vmyb,
               gxx, gxy, gyy, gamma_i, gamma_t, dx, dy, dt):
    """Hessian-vector product of the energy at (rho, m) applied to v.

    The perturbation interpolants vrho_bar, vmxb, vmyb use zero boundary
    data (the initial density is constant in eta, so it drops out of the
    derivative).
    """
    w = dx * dy * dt
    q, sx, sy = _kinetic_terms(mxb, myb, gxx, gxy, gyy)
    inv = 1.0 / rho_bar
    inv2 = inv * inv
    gxx3 = gxx[:, :, None]
    if myb is None:
        c_rho = (q * inv2 + gamma_i) * inv * vrho_bar - sx * inv2 * vmxb
        c_x = gxx3 * inv * vmxb - sx * inv2 * vrho_bar
        c_y = None
    else:
        gxy3 = gxy[:, :, None]
        gyy3 = gyy[:, :, None]
        c_rho = ((q * inv2 + gamma_i) * inv * vrho_bar
                 - sx * inv2 * vmxb - sy * inv2 * vmyb)
        c_x = (gxx3 * vmxb + gxy3 * vmyb) * inv - sx * inv2 * vrho_bar
        c_y = (gxy3 * vmxb + gyy3 * vmyb) * inv - sy * inv2 * vrho_bar
    h_rho = w * adj_interp_t(c_rho)
    h_rho[:, :, -1] += gamma_t * dx * dy * vrho[:, :, -1] / rho[:, :, -1]
    h_mx = w * adj_interp_x(c_x)
    h_my = w * adj_interp_y(c_y) if c_y is not None else None
    return h_rho, h_mx, h_my


def mixed_obstacle(vrho, dx, dy, dt) -> np.ndarray:
    """(d/db) <grad_eta energy, v>: the obstacle enters linearly through rho."""
    return dx * dy * dt * vrho.sum(axis=2)


def mixed_metric(rho_bar, mxb, myb, vrho_bar, vmxb, vmyb, dx, dy, dt):
    """(d/dg) <grad_eta energy, v> w.r.t. the stored metric scalars.

    Returns (d_gxx,) in 1D or (d_gxx, d_gxy, d_gyy) in 2D, each (n_x, n_y).
    The g_xy component is the derivative w.r.t. the stored off-diagonal
    scalar, which enters the quadratic form twice; it therefore equals twice
    the symmetric-matrix entry.
    """
    w = dx * dy * dt
    inv = 1.0 / rho_bar
    inv2 = inv * inv
    d_gxx = w * np.sum(mxb * vmxb * inv - 0.5 * vrho_bar * mxb**2 * inv2,
                       axis=2)
    if myb is None:
        return (d_gxx,)
    d_gxy = w * np.sum((mxb * vmyb + myb * vmxb) * inv
                       - vrho_bar * mxb * myb * inv2, axis=2)
    d_gyy = w * np.sum(myb * vmyb * inv - 0.5 * vrho_bar * myb**2 * inv2,
                       axis=2)
    return (d_gxx, d_gxy, d_gyy)

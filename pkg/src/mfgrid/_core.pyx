# cython: language_level=3, boundscheck=False, wraparound=False
# cython: cdivision=True, initializedcheck=False
"""Compiled kernels: the staggered-grid operators and energy evaluations.

Mirrors mfgrid._kernels_np function for function; the backend module picks
whichever of the two imported. Loops are written k-innermost to walk the
C-contiguous time axis sequentially.
"""

import numpy as np

from libc.math cimport log


# ---------------------------------------------------------------------------
# interpolation operators: staggered -> centered
# ---------------------------------------------------------------------------


def interp_t(rho_o, mu0_o):
    """Average t-staggered density onto the central grid."""
    cdef double[:, :, :] rho = np.asarray(rho_o, dtype=np.float64)
    cdef double[:, :] mu0 = np.asarray(mu0_o, dtype=np.float64)
    cdef Py_ssize_t nx = rho.shape[0], ny = rho.shape[1], nt = rho.shape[2]
    out_arr = np.empty((nx, ny, nt))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    for i in range(nx):
        for j in range(ny):
            out[i, j, 0] = 0.5 * (mu0[i, j] + rho[i, j, 0])
            for k in range(1, nt):
                out[i, j, k] = 0.5 * (rho[i, j, k - 1] + rho[i, j, k])
    return out_arr


def interp_x(mx_o):
    """Average x-staggered flux onto the central grid (zero-flux boundary)."""
    cdef double[:, :, :] mx = np.asarray(mx_o, dtype=np.float64)
    cdef Py_ssize_t nxm1 = mx.shape[0], ny = mx.shape[1], nt = mx.shape[2]
    out_arr = np.zeros((nxm1 + 1, ny, nt))
    if nxm1 == 0:
        return out_arr
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    for j in range(ny):
        for k in range(nt):
            out[0, j, k] = 0.5 * mx[0, j, k]
            out[nxm1, j, k] = 0.5 * mx[nxm1 - 1, j, k]
    for i in range(1, nxm1):
        for j in range(ny):
            for k in range(nt):
                out[i, j, k] = 0.5 * (mx[i - 1, j, k] + mx[i, j, k])
    return out_arr


def interp_y(my_o):
    """Average y-staggered flux onto the central grid (zero-flux boundary)."""
    cdef double[:, :, :] my = np.asarray(my_o, dtype=np.float64)
    cdef Py_ssize_t nx = my.shape[0], nym1 = my.shape[1], nt = my.shape[2]
    out_arr = np.zeros((nx, nym1 + 1, nt))
    if nym1 == 0:
        return out_arr
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    for i in range(nx):
        for k in range(nt):
            out[i, 0, k] = 0.5 * my[i, 0, k]
            out[i, nym1, k] = 0.5 * my[i, nym1 - 1, k]
        for j in range(1, nym1):
            for k in range(nt):
                out[i, j, k] = 0.5 * (my[i, j - 1, k] + my[i, j, k])
    return out_arr


# ---------------------------------------------------------------------------
# difference operators: staggered -> centered
# ---------------------------------------------------------------------------


def diff_t(rho_o, mu0_o, double dt):
    """Backward time difference with prescribed initial density mu0."""
    cdef double[:, :, :] rho = np.asarray(rho_o, dtype=np.float64)
    cdef double[:, :] mu0 = np.asarray(mu0_o, dtype=np.float64)
    cdef Py_ssize_t nx = rho.shape[0], ny = rho.shape[1], nt = rho.shape[2]
    out_arr = np.empty((nx, ny, nt))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    for i in range(nx):
        for j in range(ny):
            out[i, j, 0] = (rho[i, j, 0] - mu0[i, j]) / dt
            for k in range(1, nt):
                out[i, j, k] = (rho[i, j, k] - rho[i, j, k - 1]) / dt
    return out_arr


def diff_x(mx_o, double dx):
    """Central x difference with zero boundary flux (signed boundary rows)."""
    cdef double[:, :, :] mx = np.asarray(mx_o, dtype=np.float64)
    cdef Py_ssize_t nxm1 = mx.shape[0], ny = mx.shape[1], nt = mx.shape[2]
    out_arr = np.zeros((nxm1 + 1, ny, nt))
    if nxm1 == 0:
        return out_arr
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    for j in range(ny):
        for k in range(nt):
            out[0, j, k] = mx[0, j, k] / dx
            out[nxm1, j, k] = -mx[nxm1 - 1, j, k] / dx
    for i in range(1, nxm1):
        for j in range(ny):
            for k in range(nt):
                out[i, j, k] = (mx[i, j, k] - mx[i - 1, j, k]) / dx
    return out_arr


def diff_y(my_o, double dy):
    """Central y difference with zero boundary flux."""
    cdef double[:, :, :] my = np.asarray(my_o, dtype=np.float64)
    cdef Py_ssize_t nx = my.shape[0], nym1 = my.shape[1], nt = my.shape[2]
    out_arr = np.zeros((nx, nym1 + 1, nt))
    if nym1 == 0:
        return out_arr
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    for i in range(nx):
        for k in range(nt):
            out[i, 0, k] = my[i, 0, k] / dy
            out[i, nym1, k] = -my[i, nym1 - 1, k] / dy
        for j in range(1, nym1):
            for k in range(nt):
                out[i, j, k] = (my[i, j, k] - my[i, j - 1, k]) / dy
    return out_arr


# ---------------------------------------------------------------------------
# adjoint interpolation operators: centered -> staggered
# ---------------------------------------------------------------------------


def adj_interp_t(phi_o):
    """Adjoint of interp_t."""
    cdef double[:, :, :] phi = np.asarray(phi_o, dtype=np.float64)
    cdef Py_ssize_t nx = phi.shape[0], ny = phi.shape[1], nt = phi.shape[2]
    out_arr = np.empty((nx, ny, nt))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    for i in range(nx):
        for j in range(ny):
            for k in range(nt - 1):
                out[i, j, k] = 0.5 * (phi[i, j, k] + phi[i, j, k + 1])
            out[i, j, nt - 1] = 0.5 * phi[i, j, nt - 1]
    return out_arr


def adj_interp_x(phi_o):
    """Adjoint of interp_x: two-point average onto the x-staggered grid."""
    cdef double[:, :, :] phi = np.asarray(phi_o, dtype=np.float64)
    cdef Py_ssize_t nx = phi.shape[0], ny = phi.shape[1], nt = phi.shape[2]
    out_arr = np.empty((nx - 1, ny, nt))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    for i in range(nx - 1):
        for j in range(ny):
            for k in range(nt):
                out[i, j, k] = 0.5 * (phi[i, j, k] + phi[i + 1, j, k])
    return out_arr


def adj_interp_y(phi_o):
    """Adjoint of interp_y: two-point average onto the y-staggered grid."""
    cdef double[:, :, :] phi = np.asarray(phi_o, dtype=np.float64)
    cdef Py_ssize_t nx = phi.shape[0], ny = phi.shape[1], nt = phi.shape[2]
    out_arr = np.empty((nx, ny - 1, nt))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    for i in range(nx):
        for j in range(ny - 1):
            for k in range(nt):
                out[i, j, k] = 0.5 * (phi[i, j, k] + phi[i, j + 1, k])
    return out_arr


# ---------------------------------------------------------------------------
# adjoint difference operators: centered -> staggered
# ---------------------------------------------------------------------------


def adj_diff_t(phi_o, double dt):
    """Adjoint of diff_t: negated forward difference; last point phi/dt."""
    cdef double[:, :, :] phi = np.asarray(phi_o, dtype=np.float64)
    cdef Py_ssize_t nx = phi.shape[0], ny = phi.shape[1], nt = phi.shape[2]
    out_arr = np.empty((nx, ny, nt))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    for i in range(nx):
        for j in range(ny):
            for k in range(nt - 1):
                out[i, j, k] = -(phi[i, j, k + 1] - phi[i, j, k]) / dt
            out[i, j, nt - 1] = phi[i, j, nt - 1] / dt
    return out_arr


def adj_diff_x(phi_o, double dx):
    """Adjoint of diff_x: negated forward difference onto the x-staggered grid.

    The sign makes <diff_x(m), phi> = <m, adj_diff_x(phi)> exact, mirroring
    the continuous integration by parts <div m, phi> = -<m, grad phi> under
    the zero-flux boundary closure.
    """
    cdef double[:, :, :] phi = np.asarray(phi_o, dtype=np.float64)
    cdef Py_ssize_t nx = phi.shape[0], ny = phi.shape[1], nt = phi.shape[2]
    out_arr = np.empty((nx - 1, ny, nt))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    for i in range(nx - 1):
        for j in range(ny):
            for k in range(nt):
                out[i, j, k] = (phi[i, j, k] - phi[i + 1, j, k]) / dx
    return out_arr


def adj_diff_y(phi_o, double dy):
    """Adjoint of diff_y: negated forward difference onto the y-staggered grid."""
    cdef double[:, :, :] phi = np.asarray(phi_o, dtype=np.float64)
    cdef Py_ssize_t nx = phi.shape[0], ny = phi.shape[1], nt = phi.shape[2]
    out_arr = np.empty((nx, ny - 1, nt))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    for i in range(nx):
        for j in range(ny - 1):
            for k in range(nt):
                out[i, j, k] = (phi[i, j, k] - phi[i, j + 1, k]) / dy
    return out_arr


# ---------------------------------------------------------------------------
# energy kernels
# ---------------------------------------------------------------------------


def energy_value(rho_o, rho_bar_o, mxb_o, myb_o, gxx_o, gxy_o, gyy_o, b_o,
                 double gamma_i, double gamma_t, mu1_o,
                 double dx, double dy, double dt):
    """Discrete energy: kinetic + entropy + obstacle + terminal divergence."""
    cdef double[:, :, :] rho = np.asarray(rho_o, dtype=np.float64)
    cdef double[:, :, :] rho_bar = np.asarray(rho_bar_o, dtype=np.float64)
    cdef double[:, :, :] mxb = np.asarray(mxb_o, dtype=np.float64)
    cdef double[:, :] gxx = np.asarray(gxx_o, dtype=np.float64)
    cdef double[:, :] b = np.asarray(b_o, dtype=np.float64)
    cdef double[:, :] mu1 = np.asarray(mu1_o, dtype=np.float64)
    cdef double[:, :, :] myb
    cdef double[:, :] gxy, gyy
    cdef bint two_d = myb_o is not None
    if two_d:
        myb = np.asarray(myb_o, dtype=np.float64)
        gxy = np.asarray(gxy_o, dtype=np.float64)
        gyy = np.asarray(gyy_o, dtype=np.float64)
    cdef Py_ssize_t nx = rho.shape[0], ny = rho.shape[1], nt = rho.shape[2]
    cdef double w = dx * dy * dt
    cdef double kinetic = 0.0, entropy = 0.0, obstacle = 0.0, terminal = 0.0
    cdef double rb, mx_c, my_c, q, rt
    cdef Py_ssize_t i, j, k
    for i in range(nx):
        for j in range(ny):
            for k in range(nt):
                rb = rho_bar[i, j, k]
                mx_c = mxb[i, j, k]
                if two_d:
                    my_c = myb[i, j, k]
                    q = (gxx[i, j] * mx_c * mx_c
                         + 2.0 * gxy[i, j] * mx_c * my_c
                         + gyy[i, j] * my_c * my_c)
                else:
                    q = gxx[i, j] * mx_c * mx_c
                kinetic += q / rb
                entropy += rb * log(rb)
                obstacle += rho[i, j, k] * b[i, j]
            rt = rho[i, j, nt - 1]
            terminal += rt * (log(rt) - log(mu1[i, j]))
    return w * (0.5 * kinetic + gamma_i * entropy + obstacle) \
        + gamma_t * dx * dy * terminal


def energy_grad(rho_o, rho_bar_o, mxb_o, myb_o, gxx_o, gxy_o, gyy_o, b_o,
                double gamma_i, double gamma_t, mu1_o,
                double dx, double dy, double dt):
    """Euclidean partials of the energy w.r.t. the raw entries of (rho, m)."""
    cdef double[:, :, :] rho = np.asarray(rho_o, dtype=np.float64)
    cdef double[:, :, :] rho_bar = np.asarray(rho_bar_o, dtype=np.float64)
    cdef double[:, :, :] mxb = np.asarray(mxb_o, dtype=np.float64)
    cdef double[:, :] gxx = np.asarray(gxx_o, dtype=np.float64)
    cdef double[:, :] b = np.asarray(b_o, dtype=np.float64)
    cdef double[:, :] mu1 = np.asarray(mu1_o, dtype=np.float64)
    cdef double[:, :, :] myb
    cdef double[:, :] gxy, gyy
    cdef bint two_d = myb_o is not None
    if two_d:
        myb = np.asarray(myb_o, dtype=np.float64)
        gxy = np.asarray(gxy_o, dtype=np.float64)
        gyy = np.asarray(gyy_o, dtype=np.float64)
    cdef Py_ssize_t nx = rho.shape[0], ny = rho.shape[1], nt = rho.shape[2]
    cdef double w = dx * dy * dt

    h_arr = np.empty((nx, ny, nt))
    cx_arr = np.empty((nx, ny, nt))
    cdef double[:, :, ::1] h = h_arr
    cdef double[:, :, ::1] cx = cx_arr
    cdef double[:, :, ::1] cy
    cy_arr = None
    if two_d:
        cy_arr = np.empty((nx, ny, nt))
        cy = cy_arr

    cdef double rb, inv, mx_c, my_c, sx, sy, q, rt
    cdef Py_ssize_t i, j, k
    for i in range(nx):
        for j in range(ny):
            for k in range(nt):
                rb = rho_bar[i, j, k]
                inv = 1.0 / rb
                mx_c = mxb[i, j, k]
                if two_d:
                    my_c = myb[i, j, k]
                    sx = gxx[i, j] * mx_c + gxy[i, j] * my_c
                    sy = gxy[i, j] * mx_c + gyy[i, j] * my_c
                    q = sx * mx_c + sy * my_c
                    cy[i, j, k] = sy * inv
                else:
                    sx = gxx[i, j] * mx_c
                    q = sx * mx_c
                h[i, j, k] = -0.5 * q * inv * inv + gamma_i * (log(rb) + 1.0)
                cx[i, j, k] = sx * inv

    g_rho_arr = np.empty((nx, ny, nt))
    cdef double[:, :, ::1] g_rho = g_rho_arr
    for i in range(nx):
        for j in range(ny):
            for k in range(nt - 1):
                g_rho[i, j, k] = w * (0.5 * (h[i, j, k] + h[i, j, k + 1])
                                      + b[i, j])
            rt = rho[i, j, nt - 1]
            g_rho[i, j, nt - 1] = (
                w * (0.5 * h[i, j, nt - 1] + b[i, j])
                + gamma_t * dx * dy * (log(rt) - log(mu1[i, j]) + 1.0))

    g_mx_arr = np.empty((nx - 1, ny, nt))
    cdef double[:, :, ::1] g_mx = g_mx_arr
    for i in range(nx - 1):
        for j in range(ny):
            for k in range(nt):
                g_mx[i, j, k] = w * 0.5 * (cx[i, j, k] + cx[i + 1, j, k])

    if not two_d:
        return g_rho_arr, g_mx_arr, None
    g_my_arr = np.empty((nx, ny - 1, nt))
    cdef double[:, :, ::1] g_my = g_my_arr
    for i in range(nx):
        for j in range(ny - 1):
            for k in range(nt):
                g_my[i, j, k] = w * 0.5 * (cy[i, j, k] + cy[i, j + 1, k])
    return g_rho_arr, g_mx_arr, g_my_arr


def energy_hvp(rho_o, rho_bar_o, mxb_o, myb_o, vrho_o, vrho_bar_o, vmxb_o,
               vmyb_o, gxx_o, gxy_o, gyy_o, double gamma_i, double gamma_t,
               double dx, double dy, double dt):
    """Hessian-vector product of the energy at (rho, m) applied to v."""
    cdef double[:, :, :] rho = np.asarray(rho_o, dtype=np.float64)
    cdef double[:, :, :] rho_bar = np.asarray(rho_bar_o, dtype=np.float64)
    cdef double[:, :, :] mxb = np.asarray(mxb_o, dtype=np.float64)
    cdef double[:, :, :] vrho = np.asarray(vrho_o, dtype=np.float64)
    cdef double[:, :, :] vrho_bar = np.asarray(vrho_bar_o, dtype=np.float64)
    cdef double[:, :, :] vmxb = np.asarray(vmxb_o, dtype=np.float64)
    cdef double[:, :] gxx = np.asarray(gxx_o, dtype=np.float64)
    cdef double[:, :, :] myb, vmyb
    cdef double[:, :] gxy, gyy
    cdef bint two_d = myb_o is not None
    if two_d:
        myb = np.asarray(myb_o, dtype=np.float64)
        vmyb = np.asarray(vmyb_o, dtype=np.float64)
        gxy = np.asarray(gxy_o, dtype=np.float64)
        gyy = np.asarray(gyy_o, dtype=np.float64)
    cdef Py_ssize_t nx = rho.shape[0], ny = rho.shape[1], nt = rho.shape[2]
    cdef double w = dx * dy * dt

    c_rho_arr = np.empty((nx, ny, nt))
    c_x_arr = np.empty((nx, ny, nt))
    cdef double[:, :, ::1] c_rho = c_rho_arr
    cdef double[:, :, ::1] c_x = c_x_arr
    cdef double[:, :, ::1] c_y
    c_y_arr = None
    if two_d:
        c_y_arr = np.empty((nx, ny, nt))
        c_y = c_y_arr

    cdef double rb, inv, inv2, mx_c, my_c, sx, sy, q, vr, vx, vy
    cdef Py_ssize_t i, j, k
    for i in range(nx):
        for j in range(ny):
            for k in range(nt):
                rb = rho_bar[i, j, k]
                inv = 1.0 / rb
                inv2 = inv * inv
                mx_c = mxb[i, j, k]
                vr = vrho_bar[i, j, k]
                vx = vmxb[i, j, k]
                if two_d:
                    my_c = myb[i, j, k]
                    vy = vmyb[i, j, k]
                    sx = gxx[i, j] * mx_c + gxy[i, j] * my_c
                    sy = gxy[i, j] * mx_c + gyy[i, j] * my_c
                    q = sx * mx_c + sy * my_c
                    c_rho[i, j, k] = ((q * inv2 + gamma_i) * inv * vr
                                      - sx * inv2 * vx - sy * inv2 * vy)
                    c_x[i, j, k] = ((gxx[i, j] * vx + gxy[i, j] * vy) * inv
                                    - sx * inv2 * vr)
                    c_y[i, j, k] = ((gxy[i, j] * vx + gyy[i, j] * vy) * inv
                                    - sy * inv2 * vr)
                else:
                    sx = gxx[i, j] * mx_c
                    q = sx * mx_c
                    c_rho[i, j, k] = ((q * inv2 + gamma_i) * inv * vr
                                      - sx * inv2 * vx)
                    c_x[i, j, k] = gxx[i, j] * inv * vx - sx * inv2 * vr

    h_rho_arr = np.empty((nx, ny, nt))
    cdef double[:, :, ::1] h_rho = h_rho_arr
    for i in range(nx):
        for j in range(ny):
            for k in range(nt - 1):
                h_rho[i, j, k] = w * 0.5 * (c_rho[i, j, k] + c_rho[i, j, k + 1])
            h_rho[i, j, nt - 1] = (
                w * 0.5 * c_rho[i, j, nt - 1]
                + gamma_t * dx * dy * vrho[i, j, nt - 1] / rho[i, j, nt - 1])

    h_mx_arr = np.empty((nx - 1, ny, nt))
    cdef double[:, :, ::1] h_mx = h_mx_arr
    for i in range(nx - 1):
        for j in range(ny):
            for k in range(nt):
                h_mx[i, j, k] = w * 0.5 * (c_x[i, j, k] + c_x[i + 1, j, k])

    if not two_d:
        return h_rho_arr, h_mx_arr, None
    h_my_arr = np.empty((nx, ny - 1, nt))
    cdef double[:, :, ::1] h_my = h_my_arr
    for i in range(nx):
        for j in range(ny - 1):
            for k in range(nt):
                h_my[i, j, k] = w * 0.5 * (c_y[i, j, k] + c_y[i, j + 1, k])
    return h_rho_arr, h_mx_arr, h_my_arr


def mixed_obstacle(vrho_o, double dx, double dy, double dt):
    """(d/db) <grad_eta energy, v>: the obstacle enters linearly through rho."""
    cdef double[:, :, :] vrho = np.asarray(vrho_o, dtype=np.float64)
    cdef Py_ssize_t nx = vrho.shape[0], ny = vrho.shape[1], nt = vrho.shape[2]
    cdef double w = dx * dy * dt
    out_arr = np.empty((nx, ny))
    cdef double[:, ::1] out = out_arr
    cdef double acc
    cdef Py_ssize_t i, j, k
    for i in range(nx):
        for j in range(ny):
            acc = 0.0
            for k in range(nt):
                acc += vrho[i, j, k]
            out[i, j] = w * acc
    return out_arr


def mixed_metric(rho_bar_o, mxb_o, myb_o, vrho_bar_o, vmxb_o, vmyb_o,
                 double dx, double dy, double dt):
    """(d/dg) <grad_eta energy, v> w.r.t. the stored metric scalars."""
    cdef double[:, :, :] rho_bar = np.asarray(rho_bar_o, dtype=np.float64)
    cdef double[:, :, :] mxb = np.asarray(mxb_o, dtype=np.float64)
    cdef double[:, :, :] vrho_bar = np.asarray(vrho_bar_o, dtype=np.float64)
    cdef double[:, :, :] vmxb = np.asarray(vmxb_o, dtype=np.float64)
    cdef double[:, :, :] myb, vmyb
    cdef bint two_d = myb_o is not None
    if two_d:
        myb = np.asarray(myb_o, dtype=np.float64)
        vmyb = np.asarray(vmyb_o, dtype=np.float64)
    cdef Py_ssize_t nx = rho_bar.shape[0], ny = rho_bar.shape[1]
    cdef Py_ssize_t nt = rho_bar.shape[2]
    cdef double w = dx * dy * dt

    d_gxx_arr = np.empty((nx, ny))
    cdef double[:, ::1] d_gxx = d_gxx_arr
    cdef double[:, ::1] d_gxy, d_gyy
    d_gxy_arr = d_gyy_arr = None
    if two_d:
        d_gxy_arr = np.empty((nx, ny))
        d_gyy_arr = np.empty((nx, ny))
        d_gxy = d_gxy_arr
        d_gyy = d_gyy_arr

    cdef double inv, inv2, mx_c, my_c, vr, vx, vy
    cdef double acc_xx, acc_xy, acc_yy
    cdef Py_ssize_t i, j, k
    for i in range(nx):
        for j in range(ny):
            acc_xx = acc_xy = acc_yy = 0.0
            for k in range(nt):
                inv = 1.0 / rho_bar[i, j, k]
                inv2 = inv * inv
                mx_c = mxb[i, j, k]
                vr = vrho_bar[i, j, k]
                vx = vmxb[i, j, k]
                acc_xx += mx_c * vx * inv - 0.5 * vr * mx_c * mx_c * inv2
                if two_d:
                    my_c = myb[i, j, k]
                    vy = vmyb[i, j, k]
                    acc_xy += (mx_c * vy + my_c * vx) * inv \
                        - vr * mx_c * my_c * inv2
                    acc_yy += my_c * vy * inv - 0.5 * vr * my_c * my_c * inv2
            d_gxx[i, j] = w * acc_xx
            if two_d:
                d_gxy[i, j] = w * acc_xy
                d_gyy[i, j] = w * acc_yy
    if not two_d:
        return (d_gxx_arr,)
    return (d_gxx_arr, d_gxy_arr, d_gyy_arr)

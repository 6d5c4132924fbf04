"""Interpolation and difference operators between staggered and central grids.

Six forward operators map staggered fields to the central grid, and six
adjoints map back. With zero-based slice index k (paper-style index i = k+1):

interp_t(rho; mu0), t-staggered -> centered:
    k = 0:       (mu0 + rho_0) / 2
    k >= 1:      (rho_{k-1} + rho_k) / 2

interp_x(mx), x-staggered -> centered (zero-flux boundary):
    k = 0:       mx_0 / 2
    interior:    (mx_{k-1} + mx_k) / 2
    k = n_x-1:   mx_{n_x-2} / 2
(interp_y analogous along y.)

diff_t(rho; mu0):
    k = 0:       (rho_0 - mu0) / dt
    k >= 1:      (rho_k - rho_{k-1}) / dt

diff_x(mx):
    k = 0:       mx_0 / dx
    interior:    (mx_k - mx_{k-1}) / dx
    k = n_x-1:   -mx_{n_x-2} / dx
(diff_y analogous.)

Adjoints, centered -> staggered:
    adjoint_interp_t: k < n_t-1: (phi_k + phi_{k+1})/2;  k = n_t-1: phi_k/2
    adjoint_interp_x: (phi_k + phi_{k+1})/2 on the n_x-1 staggered points
    adjoint_diff_t:   k < n_t-1: -(phi_{k+1} - phi_k)/dt;  k = n_t-1: phi_k/dt
    adjoint_diff_x:   (phi_k - phi_{k+1})/dx, the discrete integration by
                      parts <div m, phi> = -<m, grad phi> under zero-flux
                      boundaries

With the weighted inner products of :mod:`mfgrid.grid` these satisfy

    <interp_t(rho; mu0), phi>_centered
        = <rho, adjoint_interp_t(phi)>_rho + (w/2) * sum(mu0 * phi_0)
    <diff_t(rho; mu0), phi>_centered
        = <rho, adjoint_diff_t(phi)>_rho - (w/dt) * sum(mu0 * phi_0)

with w = dx*dy*dt, and the purely spatial pairs are exact adjoints with no
boundary term. The boundary terms carry the full w weight because both sides
do. These identities are what the operator test suite checks to 1e-13.

When n_x = 1 there are no x-staggered points and interp_x/diff_x are the
zero maps (the case splits are vacuous); same for y.
"""

from __future__ import annotations

import numpy as np

from .backend import kernels as _k
from .grid import GridSpec, StateField

__all__ = [
    "interp_t", "interp_x", "interp_y",
    "diff_t", "diff_x", "diff_y",
    "adjoint_interp_t", "adjoint_interp_x", "adjoint_interp_y",
    "adjoint_diff_t", "adjoint_diff_x", "adjoint_diff_y",
    "apply_constraint_op", "apply_constraint_adjoint",
]


def _as_f64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def interp_t(rho: np.ndarray, mu0: np.ndarray) -> np.ndarray:
    if rho.shape[:2] != mu0.shape:
        raise ValueError(f"rho {rho.shape} and mu0 {mu0.shape} do not share "
                         "a spatial shape")
    return _k.interp_t(_as_f64(rho), _as_f64(mu0))


def interp_x(mx: np.ndarray) -> np.ndarray:
    return _k.interp_x(_as_f64(mx))


def interp_y(my: np.ndarray) -> np.ndarray:
    return _k.interp_y(_as_f64(my))


def diff_t(rho: np.ndarray, mu0: np.ndarray, dt: float) -> np.ndarray:
    if rho.shape[:2] != mu0.shape:
        raise ValueError(f"rho {rho.shape} and mu0 {mu0.shape} do not share "
                         "a spatial shape")
    return _k.diff_t(_as_f64(rho), _as_f64(mu0), float(dt))


def diff_x(mx: np.ndarray, dx: float) -> np.ndarray:
    return _k.diff_x(_as_f64(mx), float(dx))


def diff_y(my: np.ndarray, dy: float) -> np.ndarray:
    return _k.diff_y(_as_f64(my), float(dy))


def adjoint_interp_t(phi: np.ndarray) -> np.ndarray:
    return _k.adj_interp_t(_as_f64(phi))


def adjoint_interp_x(phi: np.ndarray) -> np.ndarray:
    return _k.adj_interp_x(_as_f64(phi))


def adjoint_interp_y(phi: np.ndarray) -> np.ndarray:
    return _k.adj_interp_y(_as_f64(phi))


def adjoint_diff_t(phi: np.ndarray, dt: float) -> np.ndarray:
    return _k.adj_diff_t(_as_f64(phi), float(dt))


def adjoint_diff_x(phi: np.ndarray, dx: float) -> np.ndarray:
    return _k.adj_diff_x(_as_f64(phi), float(dx))


def adjoint_diff_y(phi: np.ndarray, dy: float) -> np.ndarray:
    return _k.adj_diff_y(_as_f64(phi), float(dy))


def apply_constraint_op(eta: StateField, mu0: np.ndarray,
                        grid: GridSpec) -> np.ndarray:
    """Continuity residual D_t(rho; mu0) + D_x(mx) + D_y(my) on the center grid.

    With mu0 = 0 this is the linear constraint operator A applied to eta.
    """
    out = diff_t(eta.rho, mu0, grid.dt)
    out += diff_x(eta.mx, grid.dx)
    if eta.my is not None:
        out += diff_y(eta.my, grid.dy)
    return out


def apply_constraint_adjoint(phi: np.ndarray, grid: GridSpec) -> StateField:
    """A^T phi = (adjoint_diff_t, adjoint_diff_x, adjoint_diff_y) applied to phi."""
    my = adjoint_diff_y(phi, grid.dy) if grid.d == 2 else None
    return StateField(adjoint_diff_t(phi, grid.dt),
                      adjoint_diff_x(phi, grid.dx), my)

"""Discrete transport energy: value, gradient, and second-order products.

The energy of a state eta = (rho, mx, my) under costs (g, b, gamma_i,
gamma_t, mu1) is

    L(eta) = w * sum( mbar^T g mbar / (2 rhobar) )          (kinetic)
           + w * gamma_i * sum( rhobar log rhobar )          (entropy)
           + w * sum( rho * b )                              (obstacle)
           + gamma_t * dx*dy * sum( rho_T (log rho_T - log mu1) )

with w = dx*dy*dt, rhobar = I_t(rho; mu0), mbar = (I_x(mx), I_y(my)), and
rho_T the final time slice. Gradients returned here are plain Euclidean
partials with respect to the raw entries of (rho, mx, my); every grid
weight lives inside the energy, so the projection and the solvers work in
the unweighted Euclidean metric throughout.

Per centered cell the integrand is f(a, p) = p^T g p / (2a) + gamma_i a log a
in a = rhobar, p = mbar, whose second derivatives

    f_aa = p^T g p / a^3 + gamma_i / a,   f_ap = -g p / a^2,   f_pp = g / a

drive the Hessian-vector product; the perturbation is interpolated with
zero boundary data because mu0 is constant in eta. The mixed products
differentiate <grad_eta L, v> in the cost parameters: linear in b, and for
the metric the derivative is taken with respect to the three stored scalars
(g_xx, g_xy, g_yy) per cell, so the off-diagonal component counts both
appearances of g_xy in the quadratic form.

Positivity of rhobar and of the terminal slice is a precondition, not a
repair: violations raise PositivityError and the caller shrinks its step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import kernels as _k
from .errors import PositivityError
from .grid import GridSpec, StateField, validate_spatial

__all__ = [
    "CostParams", "EnergyWorkspace", "energy_value", "energy_grad",
    "energy_hvp", "mixed_hvp_obstacle", "mixed_hvp_metric",
    "metric_components", "metric_min_eigenvalues",
]


def metric_components(g: np.ndarray, grid: GridSpec):
    """Split a stored metric into (gxx, gxy, gyy); gxy = gyy = None in 1D."""
    if g.shape != grid.shape_metric:
        raise ValueError(f"metric shape {g.shape}, expected {grid.shape_metric}")
    if grid.d == 1:
        return g, None, None
    return g[:, :, 0], g[:, :, 1], g[:, :, 2]


def metric_min_eigenvalues(g: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Per-cell smallest eigenvalue of the symmetric metric, shape (n_x, n_y)."""
    if grid.d == 1:
        return np.asarray(g, dtype=np.float64)
    gxx, gxy, gyy = metric_components(g, grid)
    half_tr = 0.5 * (gxx + gyy)
    radius = np.sqrt((0.5 * (gxx - gyy)) ** 2 + gxy**2)
    return half_tr - radius


@dataclass(frozen=True)
class CostParams:
    """Cost data of the energy.

    Attributes:
        g: per-cell metric; shape (n_x, n_y) for d=1 (scalar g_xx) or
            (n_x, n_y, 3) for d=2 storing (g_xx, g_xy, g_yy). Every cell
            must be symmetric positive definite.
        b: obstacle, shape (n_x, n_y).
        gamma_i: entropy weight, nonnegative.
        gamma_t: terminal divergence weight, nonnegative.
        mu1: target terminal density, shape (n_x, n_y), strictly positive.
    """

    g: np.ndarray
    b: np.ndarray
    gamma_i: float
    gamma_t: float
    mu1: np.ndarray

    def validate(self, grid: GridSpec):
        if self.g.shape != grid.shape_metric:
            raise ValueError(
                f"metric shape {self.g.shape}, expected {grid.shape_metric}")
        validate_spatial(self.b, grid, "b")
        validate_spatial(self.mu1, grid, "mu1")
        if self.gamma_i < 0 or self.gamma_t < 0:
            raise ValueError("gamma_i and gamma_t must be nonnegative")
        if self.mu1.min() <= 0:
            raise ValueError("mu1 must be strictly positive")
        min_eig = metric_min_eigenvalues(self.g, grid).min()
        if min_eig <= 0:
            raise ValueError(
                f"metric not positive definite (min eigenvalue {min_eig:.3e})")


class EnergyWorkspace:
    """Caches the centered interpolants of eta across value/grad/HVP calls.

    The cache keys on array object identity and keeps strong references to
    the keyed arrays. Holding the references is what makes identity sound:
    without them a freed trial state lets the allocator hand the next state
    the same addresses, the stale interpolants are served for a different
    iterate, and the solve silently follows corrupted energies. Two live
    objects can never share an address. Do not mutate a cached state in
    place.
    """

    def __init__(self):
        self._key = None
        self._bars = None

    def interpolants(self, eta: StateField, mu0: np.ndarray):
        key = (eta.rho, eta.mx, eta.my, mu0)
        if self._key is None or any(a is not b
                                    for a, b in zip(key, self._key)):
            rho_bar = _k.interp_t(eta.rho, mu0)
            mxb = _k.interp_x(eta.mx)
            myb = _k.interp_y(eta.my) if eta.my is not None else None
            self._key = key
            self._bars = (rho_bar, mxb, myb)
        return self._bars


def _bars_checked(eta: StateField, mu0: np.ndarray,
                  workspace: EnergyWorkspace | None):
    ws = workspace if workspace is not None else EnergyWorkspace()
    rho_bar, mxb, myb = ws.interpolants(eta, mu0)
    min_bar = rho_bar.min()
    if min_bar <= 0.0:
        raise PositivityError(
            f"interpolated density reaches {min_bar:.3e} <= 0")
    min_term = eta.rho[:, :, -1].min()
    if min_term <= 0.0:
        raise PositivityError(
            f"terminal density reaches {min_term:.3e} <= 0")
    return rho_bar, mxb, myb


def energy_value(eta: StateField, params: CostParams, mu0: np.ndarray,
                 grid: GridSpec,
                 workspace: EnergyWorkspace | None = None) -> float:
    """Evaluate the energy at eta.

    Raises:
        PositivityError: if the interpolated or terminal density is not
            strictly positive.
    """
    rho_bar, mxb, myb = _bars_checked(eta, mu0, workspace)
    gxx, gxy, gyy = metric_components(params.g, grid)
    return float(_k.energy_value(
        eta.rho, rho_bar, mxb, myb, gxx, gxy, gyy, params.b,
        params.gamma_i, params.gamma_t, params.mu1,
        grid.dx, grid.dy, grid.dt))


def energy_grad(eta: StateField, params: CostParams, mu0: np.ndarray,
                grid: GridSpec,
                workspace: EnergyWorkspace | None = None) -> StateField:
    """Euclidean gradient of the energy with respect to (rho, mx, my)."""
    rho_bar, mxb, myb = _bars_checked(eta, mu0, workspace)
    gxx, gxy, gyy = metric_components(params.g, grid)
    g_rho, g_mx, g_my = _k.energy_grad(
        eta.rho, rho_bar, mxb, myb, gxx, gxy, gyy, params.b,
        params.gamma_i, params.gamma_t, params.mu1,
        grid.dx, grid.dy, grid.dt)
    return StateField(g_rho, g_mx, g_my)


def energy_hvp(eta: StateField, v: StateField, params: CostParams,
               mu0: np.ndarray, grid: GridSpec,
               workspace: EnergyWorkspace | None = None) -> StateField:
    """Hessian-vector product of the energy at eta applied to v."""
    rho_bar, mxb, myb = _bars_checked(eta, mu0, workspace)
    gxx, gxy, gyy = metric_components(params.g, grid)
    vrho_bar = _k.interp_t(v.rho, np.zeros_like(mu0))
    vmxb = _k.interp_x(v.mx)
    vmyb = _k.interp_y(v.my) if v.my is not None else None
    h_rho, h_mx, h_my = _k.energy_hvp(
        eta.rho, rho_bar, mxb, myb, v.rho, vrho_bar, vmxb, vmyb,
        gxx, gxy, gyy, params.gamma_i, params.gamma_t,
        grid.dx, grid.dy, grid.dt)
    return StateField(h_rho, h_mx, h_my)


def mixed_hvp_obstacle(v: StateField, grid: GridSpec) -> np.ndarray:
    """d/db of <grad_eta L, v>: w times the time-sum of v's density part."""
    return _k.mixed_obstacle(v.rho, grid.dx, grid.dy, grid.dt)


def mixed_hvp_metric(eta: StateField, v: StateField, params: CostParams,
                     mu0: np.ndarray, grid: GridSpec,
                     workspace: EnergyWorkspace | None = None) -> np.ndarray:
    """d/dg of <grad_eta L, v>, in the same storage layout as params.g.

    The result does not depend on the current metric (the energy is linear
    in g); params is accepted for interface symmetry with energy_hvp.
    """
    rho_bar, mxb, myb = _bars_checked(eta, mu0, workspace)
    vrho_bar = _k.interp_t(v.rho, np.zeros_like(mu0))
    vmxb = _k.interp_x(v.mx)
    vmyb = _k.interp_y(v.my) if v.my is not None else None
    comps = _k.mixed_metric(rho_bar, mxb, myb, vrho_bar, vmxb, vmyb,
                            grid.dx, grid.dy, grid.dt)
    if grid.d == 1:
        return comps[0]
    return np.stack(comps, axis=2)

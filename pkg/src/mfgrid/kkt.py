"""First-order optimality system of the constrained transport problem.

A minimizer eta* of the energy over {A eta = c} satisfies, for some
multiplier phi on the centered grid,

    Y_rho = -D_t^* phi + kernel_rho(eta)  = 0
    Y_mx  = -D_x^* phi + kernel_mx(eta)   = 0
    Y_my  = -D_y^* phi + kernel_my(eta)   = 0
    Y_phi = D_t(rho; mu0) + D_x(mx) + D_y(my) = 0

where the kernels are the energy's partial derivatives written without
grid weights (the weighted gradient divided by dx*dy*dt). Everything here
lives on that unweighted scale so residual magnitudes are comparable
across resolutions.

recover_multiplier inverts the stationarity block in least squares:
phi = (A A^T)^{-1} A (grad L / w). assemble_kkt_jacobian builds the dense
derivative of the system in (rho, mx, my, phi), which is

    [ H / w   -A^T ]
    [   A       0  ]

with H the energy Hessian; it exists only to let tests inspect singular
values on tiny grids.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .energy import CostParams, EnergyWorkspace, energy_grad, energy_hvp
from .grid import (GridSpec, StateField, state_scale, state_to_vec,
                   vec_to_state, zeros_state)
from .projection import ProjectionContext, solve_normal
from .stagops import (adjoint_diff_t, adjoint_diff_x, adjoint_diff_y,
                      apply_constraint_adjoint, apply_constraint_op)

__all__ = ["KktPoint", "kkt_residual", "kkt_residual_norm",
           "recover_multiplier", "assemble_kkt_jacobian"]

logger = logging.getLogger(__name__)

JACOBIAN_SIZE_GUARD = 2500


@dataclass(frozen=True)
class KktPoint:
    """A candidate primal-dual point (eta, phi) under costs params."""

    eta: StateField
    phi: np.ndarray
    params: CostParams

    def validate(self, grid: GridSpec):
        self.eta.validate(grid)
        if self.phi.shape != grid.shape_centered:
            raise ValueError(
                f"phi shape {self.phi.shape}, expected {grid.shape_centered}")
        self.params.validate(grid)


def kkt_residual(pt: KktPoint, mu0: np.ndarray, grid: GridSpec,
                 workspace: EnergyWorkspace | None = None):
    """Evaluate (Y_rho, Y_mx, Y_my, Y_phi); Y_my is None in 1D."""
    kernel = state_scale(
        energy_grad(pt.eta, pt.params, mu0, grid, workspace),
        1.0 / grid.cell_weight)
    y_rho = kernel.rho - adjoint_diff_t(pt.phi, grid.dt)
    y_mx = kernel.mx - adjoint_diff_x(pt.phi, grid.dx)
    y_my = (kernel.my - adjoint_diff_y(pt.phi, grid.dy)
            if kernel.my is not None else None)
    y_phi = apply_constraint_op(pt.eta, mu0, grid)
    return y_rho, y_mx, y_my, y_phi


def kkt_residual_norm(pt: KktPoint, mu0: np.ndarray, grid: GridSpec) -> float:
    """Weighted norm over the stationarity blocks (Y_phi excluded)."""
    y_rho, y_mx, y_my, _ = kkt_residual(pt, mu0, grid)
    my = y_my if y_my is not None else None
    return float(np.sqrt(grid.cell_weight * (
        np.vdot(y_rho, y_rho).real + np.vdot(y_mx, y_mx).real
        + (np.vdot(my, my).real if my is not None else 0.0))))


def recover_multiplier(eta_star: StateField, params: CostParams,
                       mu0: np.ndarray, grid: GridSpec,
                       ctx: ProjectionContext) -> np.ndarray:
    """Least-squares multiplier phi = (A A^T)^{-1} A (grad L / w).

    At an exact minimizer the scaled gradient lies in range(A^T) and the
    stationarity residual vanishes; at a numerical solution this is the
    phi minimizing |grad L / w - A^T phi|.
    """
    kernel = state_scale(energy_grad(eta_star, params, mu0, grid),
                         1.0 / grid.cell_weight)
    rhs = apply_constraint_op(kernel, np.zeros_like(mu0), grid)
    return solve_normal(rhs, ctx)


def _system_apply(pt: KktPoint, mu0: np.ndarray, grid: GridSpec,
                  v: StateField, vphi: np.ndarray,
                  ws: EnergyWorkspace) -> tuple[StateField, np.ndarray]:
    """Action of the KKT Jacobian on a direction (v, vphi)."""
    hv = state_scale(energy_hvp(pt.eta, v, pt.params, mu0, grid, ws),
                     1.0 / grid.cell_weight)
    atv = apply_constraint_adjoint(vphi, grid)
    d_eta = StateField(hv.rho - atv.rho, hv.mx - atv.mx,
                       hv.my - atv.my if hv.my is not None else None)
    d_phi = apply_constraint_op(v, np.zeros_like(mu0), grid)
    return d_eta, d_phi


def assemble_kkt_jacobian(pt: KktPoint, mu0: np.ndarray,
                          grid: GridSpec) -> np.ndarray:
    """Dense Jacobian of the optimality system at pt, tiny grids only.

    Column order is (rho, mx, my, phi), each block flattened with i_x
    fastest. Guarded at 2500 unknowns; this is a verification aid, not a
    production path.
    """
    pt.validate(grid)
    n_eta = state_to_vec(zeros_state(grid)).size
    n_phi = int(np.prod(grid.shape_centered))
    n = n_eta + n_phi
    if n > JACOBIAN_SIZE_GUARD:
        raise ValueError(f"KKT system has {n} unknowns, guard is "
                         f"{JACOBIAN_SIZE_GUARD}")
    ws = EnergyWorkspace()
    jac = np.zeros((n, n))
    unit = np.zeros(n)
    for j in range(n):
        unit[j] = 1.0
        v = vec_to_state(unit[:n_eta], grid)
        vphi = unit[n_eta:].reshape(grid.shape_centered, order="F")
        d_eta, d_phi = _system_apply(pt, mu0, grid, v, vphi, ws)
        jac[:n_eta, j] = state_to_vec(d_eta)
        jac[n_eta:, j] = d_phi.ravel(order="F")
        unit[j] = 0.0
    sigma_min = float(np.linalg.svd(jac, compute_uv=False)[-1])
    logger.info("KKT Jacobian: %d unknowns, smallest singular value %.3e",
                n, sigma_min)
    return jac

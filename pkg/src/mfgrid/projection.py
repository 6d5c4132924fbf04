"""Orthogonal projection onto the discrete continuity constraint set.

The affine set is C(mu0) = {eta = (rho, mx, my) : A eta = c} with

    A eta = D_t(rho; 0) + D_x(mx) + D_y(my),
    c     = mu0/dt on the first time slice, zero elsewhere,

so that A eta = c is exactly D_t(rho; mu0) + D_x(mx) + D_y(my) = 0. The
Euclidean projection is

    proj(eta) = eta - A^T (A A^T)^{-1} (A eta - c).

A A^T separates into a temporal factor D_t D_t^T, which per spatial point is
(1/dt^2) tridiag(-1, [1, 2, ..., 2], -1) (symmetric positive definite; the
initial-condition row makes the first diagonal entry 1 and kills the
constant-vector nullspace), plus Neumann second-difference operators
D_x D_x^T and D_y D_y^T whose eigenvectors are the DCT-II cosine basis with
eigenvalues 4 sin^2(pi k / (2 n)) / dx^2. The normal-equation solve is
therefore a DCT in x and y, a dense precomputed eigenbasis change in t, a
pointwise division, and the inverse transforms. A conjugate-gradient path
behind the same interface covers debugging and cross-checks.

Projection is orthogonal in the raw (unweighted) Euclidean sense, matching
the convention that energy gradients carry all grid weights themselves.
It does not enforce rho >= 0; positivity is the forward solver's job.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.sparse.linalg

from .errors import ConfigError, SolverError
from .grid import GridSpec, StateField, validate_density
from .stagops import apply_constraint_adjoint, apply_constraint_op

__all__ = [
    "ProjectionContext", "build_context", "project", "project_tangent",
    "apply_constraint", "solve_normal", "poisson_neumann",
]


def temporal_gram(n_t: int, dt: float) -> np.ndarray:
    """Dense D_t D_t^T factor acting along the time axis, shape (n_t, n_t)."""
    m = 2.0 * np.eye(n_t) - np.eye(n_t, k=1) - np.eye(n_t, k=-1)
    # The initial-condition row differences against mu0 rather than a
    # previous level, so its diagonal entry is 1, not 2.
    m[0, 0] = 1.0
    return m / dt**2


def neumann_eigenvalues(n: int, h: float) -> np.ndarray:
    """Eigenvalues of the 1-D Neumann second-difference Gram D D^T / h^2."""
    k = np.arange(n)
    return 4.0 * np.sin(np.pi * k / (2.0 * n)) ** 2 / h**2


def poisson_neumann(rhs: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Solve the spatial Neumann problem (D_x D_x^T + D_y D_y^T) psi = rhs.

    The operator is the zero-flux second-difference Laplacian on cell
    centers, diagonalized by the DCT-II basis. The right-hand side must have
    zero mean (the operator annihilates constants); the solution's free
    constant is fixed by zeroing the mean mode. Used to build exactly
    feasible flux fields: m = (D_x^T psi, D_y^T psi) satisfies
    D_x m^x + D_y m^y = rhs.

    Args:
        rhs: spatial field, shape (n_x, n_y), with zero mean up to roundoff.

    Returns:
        psi on cell centers, shape (n_x, n_y), zero-mean mode.
    """
    if rhs.shape != grid.shape_spatial:
        raise ValueError(f"rhs shape {rhs.shape}, expected {grid.shape_spatial}")
    lam_x = neumann_eigenvalues(grid.n_x, grid.dx)
    lam_y = (neumann_eigenvalues(grid.n_y, grid.dy) if grid.d == 2
             else np.zeros(1))
    denom = lam_x[:, None] + lam_y[None, :]
    work = scipy.fft.dct(rhs, type=2, axis=0, norm="ortho")
    if grid.d == 2:
        work = scipy.fft.dct(work, type=2, axis=1, norm="ortho")
    scale = abs(work[0, 0])
    work[0, 0] = 0.0
    peak = np.abs(work).max()
    if scale > 1e-9 * peak:
        raise ValueError(
            f"right-hand side has nonzero mean (mode amplitude {scale:.3e}); "
            "the Neumann problem is only solvable for zero-mean data")
    denom[0, 0] = 1.0
    work /= denom
    if grid.d == 2:
        work = scipy.fft.idct(work, type=2, axis=1, norm="ortho")
    return scipy.fft.idct(work, type=2, axis=0, norm="ortho")


@dataclass(frozen=True)
class ProjectionContext:
    """Precomputed spectral data for solving (A A^T) z = r.

    Attributes:
        grid: discretization the context was built for.
        mu0: initial density, shape (n_x, n_y).
        c_scale: constraint right-hand side mu0/dt (only the first slice
            of c is nonzero; this is that slice).
        q_t: orthonormal eigenvectors of the temporal Gram factor, columns.
        denom: summed eigenvalues lam_x + lam_y + theta_t on the frequency
            grid, shape (n_x, n_y, n_t), strictly positive.
        method: "spectral" or "cg".
    """

    grid: GridSpec
    mu0: np.ndarray
    c_scale: np.ndarray
    q_t: np.ndarray
    denom: np.ndarray
    method: str = "spectral"
    _gram_op: object = field(default=None, repr=False, compare=False)


def build_context(grid: GridSpec, mu0: np.ndarray,
                  method: str = "spectral") -> ProjectionContext:
    """Factor A A^T for the given grid and initial density.

    Args:
        grid: target discretization.
        mu0: initial density on (n_x, n_y) cell centers; must be a valid
            density (positive, unit discrete mass).
        method: "spectral" (default) for the transform solve, "cg" for the
            iterative fallback. Both paths share this context.

    Raises:
        ConfigError: if a nonpositive eigenvalue shows up, which would mean
            the assembled operator is wrong, or method is unknown.
    """
    if method not in ("spectral", "cg"):
        raise ConfigError(f"unknown projection method {method!r}")
    mu0 = np.ascontiguousarray(mu0, dtype=np.float64)
    validate_density(mu0, grid)

    theta, q_t = np.linalg.eigh(temporal_gram(grid.n_t, grid.dt))
    lam_x = neumann_eigenvalues(grid.n_x, grid.dx)
    lam_y = (neumann_eigenvalues(grid.n_y, grid.dy) if grid.d == 2
             else np.zeros(1))
    denom = (lam_x[:, None, None] + lam_y[None, :, None]
             + theta[None, None, :])
    if denom.min() <= 0.0 or theta.min() <= 0.0:
        raise ConfigError(
            "nonpositive eigenvalue in the normal-equation operator "
            f"(min temporal {theta.min():.3e}, min total {denom.min():.3e})")

    gram_op = None
    if method == "cg":
        n = grid.n_x * grid.n_y * grid.n_t
        shape = grid.shape_centered

        def matvec(phi_flat: np.ndarray) -> np.ndarray:
            phi = phi_flat.reshape(shape, order="F")
            back = apply_constraint_adjoint(phi, grid)
            out = apply_constraint_op(back, np.zeros_like(mu0), grid)
            return out.ravel(order="F")

        gram_op = scipy.sparse.linalg.LinearOperator(
            (n, n), matvec=matvec, dtype=np.float64)

    return ProjectionContext(grid=grid, mu0=mu0, c_scale=mu0 / grid.dt,
                             q_t=q_t, denom=denom, method=method,
                             _gram_op=gram_op)


def solve_normal(r: np.ndarray, ctx: ProjectionContext) -> np.ndarray:
    """Solve (A A^T) z = r for a centered field r."""
    grid = ctx.grid
    if r.shape != grid.shape_centered:
        raise ValueError(f"rhs shape {r.shape}, expected {grid.shape_centered}")
    if ctx.method == "cg":
        n = r.size
        z, info = scipy.sparse.linalg.cg(
            ctx._gram_op, r.ravel(order="F"), rtol=1e-12, atol=1e-14,
            maxiter=10 * n)
        if info != 0:
            raise SolverError(f"CG on the normal equations stalled (info={info})")
        return z.reshape(grid.shape_centered, order="F")

    work = scipy.fft.dct(r, type=2, axis=0, norm="ortho")
    if grid.d == 2:
        work = scipy.fft.dct(work, type=2, axis=1, norm="ortho")
    work = (work @ ctx.q_t) / ctx.denom
    work = work @ ctx.q_t.T
    if grid.d == 2:
        work = scipy.fft.idct(work, type=2, axis=1, norm="ortho")
    return scipy.fft.idct(work, type=2, axis=0, norm="ortho")


def apply_constraint(eta: StateField, mu0: np.ndarray,
                     grid: GridSpec) -> np.ndarray:
    """Continuity residual D_t(rho; mu0) + D_x(mx) + D_y(my), centered."""
    eta.validate(grid)
    if mu0.shape != grid.shape_spatial:
        raise ValueError(f"mu0 shape {mu0.shape}, expected {grid.shape_spatial}")
    return apply_constraint_op(eta, mu0, grid)


def project(eta: StateField, ctx: ProjectionContext) -> StateField:
    """Euclidean projection of eta onto {A eta = c}.

    Returns eta - A^T (A A^T)^{-1} (A eta - c). Idempotent; leaves feasible
    inputs unchanged up to roundoff.
    """
    grid = ctx.grid
    r = apply_constraint_op(eta, ctx.mu0, grid)
    z = solve_normal(r, ctx)
    correction = apply_constraint_adjoint(z, grid)
    my = (eta.my - correction.my) if eta.my is not None else None
    return StateField(eta.rho - correction.rho, eta.mx - correction.mx, my)


def project_tangent(v: StateField, ctx: ProjectionContext) -> StateField:
    """Projection onto the homogeneous set {A v = 0} (P = I - A^T (AA^T)^-1 A).

    This is the linear part of :func:`project`; the reverse-mode sweep of the
    unrolled solver applies it to co-state vectors, where the affine offset
    must not appear.
    """
    grid = ctx.grid
    r = apply_constraint_op(v, np.zeros_like(ctx.mu0), grid)
    z = solve_normal(r, ctx)
    correction = apply_constraint_adjoint(z, grid)
    my = (v.my - correction.my) if v.my is not None else None
    return StateField(v.rho - correction.rho, v.mx - correction.mx, my)

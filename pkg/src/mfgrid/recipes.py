"""Closed-form ingredients for the shipped experiments.

The spatial domain is [-0.5, 0.5]^d sampled at cell centers
x_i = -0.5 + (i + 1/2) dx (0-based i), the time domain [0, 1]. Density
recipes evaluate a formula at the centers and normalize to unit discrete
mass dx*dy*sum = 1 (the normalization factor is logged); obstacle and
metric recipes are used verbatim, since only densities carry a mass
convention.

The segmented-ring and clover obstacles approximate shapes the source
figures show only as images; the analytic stand-ins here are labeled
approximations, not ground truth for any quantitative claim.
"""

from __future__ import annotations

import logging

import numpy as np

from .grid import GridSpec

__all__ = [
    "cell_centers", "normalize_density", "gaussian_density",
    "uniform_density", "cosine_density", "obstacle_gaussian",
    "obstacle_two_bar", "obstacle_ring", "obstacle_clover",
    "metric_cosine_1d", "metric_cubic_1d", "metric_sin_2d",
    "constant_metric", "left_end_mask",
]

logger = logging.getLogger(__name__)


def cell_centers(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Cell-center coordinates (x, y), shapes (n_x,) and (n_y,)."""
    x = -0.5 + (np.arange(grid.n_x) + 0.5) * grid.dx
    y = -0.5 + (np.arange(grid.n_y) + 0.5) * grid.dy
    return x, y


def _mesh(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    x, y = cell_centers(grid)
    return np.meshgrid(x, y, indexing="ij")


def normalize_density(values: np.ndarray, grid: GridSpec,
                      name: str = "density") -> np.ndarray:
    """Scale positive samples to unit discrete mass; logs the factor."""
    if values.min() <= 0:
        raise ValueError(f"{name} recipe produced nonpositive values")
    mass = grid.dx * grid.dy * float(values.sum())
    if abs(mass - 1.0) > 1e-12:
        logger.info("normalizing %s by discrete mass %.6f", name, mass)
    return values / mass


def gaussian_pdf(grid: GridSpec, center, sigma) -> np.ndarray:
    """The Gaussian density formula at cell centers, unnormalized mass.

    center and sigma have d entries; the covariance is diag(sigma^2).
    """
    xx, yy = _mesh(grid)
    if grid.d == 1:
        (cx,), (sx,) = center, sigma
        return (np.exp(-((xx - cx) ** 2) / (2 * sx**2))
                / (np.sqrt(2 * np.pi) * sx))
    (cx, cy), (sx, sy) = center, sigma
    return (np.exp(-((xx - cx) ** 2) / (2 * sx**2)
                   - ((yy - cy) ** 2) / (2 * sy**2))
            / (2 * np.pi * sx * sy))


def gaussian_density(grid: GridSpec, center, sigma,
                     floor: float = 1e-3) -> np.ndarray:
    """Gaussian bump with a uniform admixture, unit discrete mass.

    Returns (1 - floor) * normalized bump + floor * 1. The admixture keeps
    the far tails at a scale double-precision projected-gradient solvers
    can actually equilibrate: a pure sigma ~ 0.08 Gaussian bottoms out
    around 1e-25 on this domain, and draining cells toward such values
    needs one stepsize halving per factor of two, which freezes the global
    step for every other cell. The equilibrium tail scale tracks the
    admixture weight, and the problem's curvature spread grows as its
    inverse; 1e-3 is the default because the projected-gradient solver
    then reaches 1e-8 residuals in tens of thousands of iterations, while
    1e-4 already pushes tight tolerances out of practical reach. Error
    metrics shift by about one part in a thousand relative to the pure
    bump.
    """
    if not 0.0 <= floor < 1.0:
        raise ValueError(f"floor must be in [0, 1), got {floor}")
    bump = normalize_density(gaussian_pdf(grid, center, sigma), grid,
                             "gaussian density")
    return (1.0 - floor) * bump + floor


def uniform_density(grid: GridSpec) -> np.ndarray:
    """The constant density 1 (unit mass by construction)."""
    return np.ones(grid.shape_spatial)


def cosine_density(grid: GridSpec, offset: float, amplitude: float,
                   frequency: int) -> np.ndarray:
    """offset + amplitude*cos(2 pi frequency x), normalized to unit mass.

    The normalization divides by the offset (cosines integrate to zero),
    so formulas quoted with a non-unit mean keep their shape.
    """
    x, _ = cell_centers(grid)
    values = offset + amplitude * np.cos(2 * np.pi * frequency * x)
    values = np.repeat(values[:, None], grid.n_y, axis=1)
    return normalize_density(values, grid, "cosine density")


def obstacle_gaussian(grid: GridSpec, gamma_b: float, center=(0.0, 0.0),
                      sigma=(0.08, 0.1)) -> np.ndarray:
    """gamma_b times the Gaussian pdf formula (not mass-normalized)."""
    return gamma_b * gaussian_pdf(grid, center, sigma)


def obstacle_two_bar(grid: GridSpec, height: float = 0.5) -> np.ndarray:
    """Two offset horizontal bars: height on {x<0, 0.05<y<0.1} and
    {x>0, -0.1<y<-0.05}, zero elsewhere."""
    if grid.d != 2:
        raise ValueError("the two-bar obstacle is two-dimensional")
    xx, yy = _mesh(grid)
    left = (xx < 0) & (yy > 0.05) & (yy < 0.1)
    right = (xx > 0) & (yy > -0.1) & (yy < -0.05)
    return np.where(left | right, height, 0.0)


def obstacle_ring(grid: GridSpec, height: float = 0.5, r_in: float = 0.15,
                  r_out: float = 0.3, gap_half_angle: float = 0.35) -> np.ndarray:
    """Segmented ring (labeled approximation): an annulus with two gaps
    around the x axis."""
    if grid.d != 2:
        raise ValueError("the ring obstacle is two-dimensional")
    xx, yy = _mesh(grid)
    r = np.hypot(xx, yy)
    theta = np.arctan2(yy, xx)
    in_ring = (r >= r_in) & (r <= r_out)
    in_gap = (np.abs(theta) < gap_half_angle) | (
        np.abs(np.abs(theta) - np.pi) < gap_half_angle)
    return np.where(in_ring & ~in_gap, height, 0.0)


def obstacle_clover(grid: GridSpec, height: float = 0.5,
                    scale: float = 0.35) -> np.ndarray:
    """Four-petal clover (labeled approximation): r <= scale*|sin(2 theta)|."""
    if grid.d != 2:
        raise ValueError("the clover obstacle is two-dimensional")
    xx, yy = _mesh(grid)
    r = np.hypot(xx, yy)
    theta = np.arctan2(yy, xx)
    return np.where(r <= scale * np.abs(np.sin(2 * theta)), height, 0.0)


def metric_cosine_1d(grid: GridSpec) -> np.ndarray:
    """g(x) = 0.7 - 0.3 cos(2 pi x), shape (n_x, 1)."""
    if grid.d != 1:
        raise ValueError("this metric recipe is one-dimensional")
    x, _ = cell_centers(grid)
    return (0.7 - 0.3 * np.cos(2 * np.pi * x))[:, None]


def metric_cubic_1d(grid: GridSpec) -> np.ndarray:
    """g(x) = 8 x (x - 0.375)(x + 0.375) + 1, shape (n_x, 1)."""
    if grid.d != 1:
        raise ValueError("this metric recipe is one-dimensional")
    x, _ = cell_centers(grid)
    return (8.0 * x * (x - 0.375) * (x + 0.375) + 1.0)[:, None]


def metric_sin_2d(grid: GridSpec) -> np.ndarray:
    """Anisotropic 2D metric (g0+4, g0+2, g0+1) per cell with
    g0 = 0.75 + 0.5 sin(2 pi x) cos(2 pi y - pi/2)."""
    if grid.d != 2:
        raise ValueError("this metric recipe is two-dimensional")
    xx, yy = _mesh(grid)
    g0 = 0.75 + 0.5 * np.sin(2 * np.pi * xx) * np.cos(2 * np.pi * yy - 0.5 * np.pi)
    return np.stack([g0 + 4.0, g0 + 2.0, g0 + 1.0], axis=2)


def constant_metric(grid: GridSpec, value) -> np.ndarray:
    """Spatially constant metric; value is a scalar (d=1) or a length-3
    sequence (g_xx, g_xy, g_yy) (d=2)."""
    if grid.d == 1:
        return np.full(grid.shape_metric, float(value))
    vals = np.asarray(value, dtype=np.float64)
    if vals.shape != (3,):
        raise ValueError("2D constant metric needs (g_xx, g_xy, g_yy)")
    return np.tile(vals, (grid.n_x, grid.n_y, 1))


def left_end_mask(grid: GridSpec) -> np.ndarray:
    """Boolean spatial mask selecting the i_x = 0 column."""
    mask = np.zeros(grid.shape_spatial, dtype=bool)
    mask[0, :] = True
    return mask

import numpy as np
import pytest

from mfgrid import CostParams, GridSpec, StateField, identity_metric


@pytest.fixture
def grid2d():
    return GridSpec(n_x=4, n_y=3, n_t=3)


@pytest.fixture
def grid1d():
    return GridSpec(n_x=5, n_y=1, n_t=4, d=1)


def random_state(grid, rng, positive=False):
    """Random state; positive=True biases rho safely above zero."""
    rho = rng.uniform(0.5, 2.0, grid.shape_rho) if positive \
        else rng.standard_normal(grid.shape_rho)
    mx = 0.3 * rng.standard_normal(grid.shape_mx)
    my = 0.3 * rng.standard_normal(grid.shape_my) if grid.d == 2 else None
    return StateField(rho, mx, my)


def random_density(grid, rng):
    """Strictly positive random density with unit discrete mass."""
    a = rng.uniform(0.5, 2.0, grid.shape_spatial)
    return a / (grid.dx * grid.dy * a.sum())


def random_metric(grid, rng, jitter=0.3):
    """Random per-cell SPD metric near the identity."""
    if grid.d == 1:
        return np.ones(grid.shape_metric) + jitter * rng.uniform(
            -1.0, 1.0, grid.shape_metric)
    g = np.zeros(grid.shape_metric)
    g[:, :, 0] = 1.0 + jitter * rng.uniform(-1, 1, grid.shape_spatial)
    g[:, :, 2] = 1.0 + jitter * rng.uniform(-1, 1, grid.shape_spatial)
    g[:, :, 1] = 0.5 * jitter * rng.uniform(-1, 1, grid.shape_spatial)
    return g


def random_params(grid, rng, gamma_i=0.1, gamma_t=0.5, metric=False):
    g = random_metric(grid, rng) if metric else identity_metric(grid)
    return CostParams(g=g, b=0.3 * rng.standard_normal(grid.shape_spatial),
                      gamma_i=gamma_i, gamma_t=gamma_t,
                      mu1=random_density(grid, rng))

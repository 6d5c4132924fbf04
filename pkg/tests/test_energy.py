"""Energy value against a scalar-loop oracle; derivatives against finite
differences of the level below (gradient vs value, HVP vs gradient, mixed
derivatives vs parameter perturbations)."""

import numpy as np
import pytest

from mfgrid import (CostParams, GridSpec, StateField, state_axpy, state_dot,
                    zeros_state)
from mfgrid.energy import (EnergyWorkspace, energy_grad, energy_hvp,
                           energy_value, metric_components,
                           metric_min_eigenvalues, mixed_hvp_metric,
                           mixed_hvp_obstacle)
from mfgrid.errors import PositivityError

import reference_ops as ref
from conftest import random_density, random_metric, random_params, random_state

GRIDS = [GridSpec(4, 3, 3), GridSpec(5, 1, 4, d=1)]


@pytest.fixture(params=range(len(GRIDS)), ids=lambda i: f"grid{i}")
def grid(request):
    return GRIDS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def make_case(grid, rng, metric=True):
    params = random_params(grid, rng, gamma_i=0.2, gamma_t=0.7, metric=metric)
    mu0 = random_density(grid, rng)
    eta = random_state(grid, rng, positive=True)
    return params, mu0, eta


def test_energy_value_matches_scalar_loop(grid, rng):
    params, mu0, eta = make_case(grid, rng)
    gxx, gxy, gyy = metric_components(params.g, grid)
    want = ref.energy_ref(eta.rho, eta.mx, eta.my, mu0, gxx, gxy, gyy,
                          params.b, params.gamma_i, params.gamma_t,
                          params.mu1, grid.dx, grid.dy, grid.dt)
    got = energy_value(eta, params, mu0, grid)
    assert got == pytest.approx(want, rel=1e-13)


def test_gradient_matches_finite_differences(grid, rng):
    params, mu0, eta = make_case(grid, rng)
    g = energy_grad(eta, params, mu0, grid)
    v = random_state(grid, rng)
    h = 1e-6
    plus = energy_value(state_axpy(h, v, eta), params, mu0, grid)
    minus = energy_value(state_axpy(-h, v, eta), params, mu0, grid)
    directional = (plus - minus) / (2 * h)
    assert state_dot(g, v) == pytest.approx(directional, rel=2e-7, abs=1e-10)


def test_hvp_matches_gradient_differences(grid, rng):
    params, mu0, eta = make_case(grid, rng)
    v = random_state(grid, rng)
    hv = energy_hvp(eta, v, params, mu0, grid)
    h = 1e-6
    gp = energy_grad(state_axpy(h, v, eta), params, mu0, grid)
    gm = energy_grad(state_axpy(-h, v, eta), params, mu0, grid)
    for name, got in hv.items():
        want = (getattr(gp, name) - getattr(gm, name)) / (2 * h)
        np.testing.assert_allclose(got, want, rtol=2e-6, atol=1e-9)


def test_hvp_is_symmetric(grid, rng):
    params, mu0, eta = make_case(grid, rng)
    u = random_state(grid, rng)
    v = random_state(grid, rng)
    hu = energy_hvp(eta, u, params, mu0, grid)
    hv = energy_hvp(eta, v, params, mu0, grid)
    assert state_dot(v, hu) == pytest.approx(state_dot(u, hv), rel=1e-11,
                                             abs=1e-13)


def test_mixed_obstacle_matches_parameter_differences(grid, rng):
    params, mu0, eta = make_case(grid, rng)
    v = random_state(grid, rng)
    mixed = mixed_hvp_obstacle(v, grid)
    assert mixed.shape == grid.shape_spatial
    h = 1e-6
    db = rng.standard_normal(grid.shape_spatial)
    p_plus = CostParams(g=params.g, b=params.b + h * db,
                        gamma_i=params.gamma_i, gamma_t=params.gamma_t,
                        mu1=params.mu1)
    p_minus = CostParams(g=params.g, b=params.b - h * db,
                         gamma_i=params.gamma_i, gamma_t=params.gamma_t,
                         mu1=params.mu1)
    gp = energy_grad(eta, p_plus, mu0, grid)
    gm = energy_grad(eta, p_minus, mu0, grid)
    want = (state_dot(gp, v) - state_dot(gm, v)) / (2 * h)
    assert float((mixed * db).sum()) == pytest.approx(want, rel=1e-6,
                                                      abs=1e-12)


def test_mixed_metric_matches_parameter_differences(grid, rng):
    params, mu0, eta = make_case(grid, rng)
    v = random_state(grid, rng)
    mixed = mixed_hvp_metric(eta, v, params, mu0, grid)
    assert mixed.shape == grid.shape_metric
    h = 1e-6
    dg = random_metric(grid, rng, jitter=1.0) - (
        np.ones(grid.shape_metric) if grid.d == 1 else 0.0)
    if grid.d == 2:
        dg = dg.copy()
        dg[:, :, 0] -= 1.0
        dg[:, :, 2] -= 1.0
    p_plus = CostParams(g=params.g + h * dg, b=params.b,
                        gamma_i=params.gamma_i, gamma_t=params.gamma_t,
                        mu1=params.mu1)
    p_minus = CostParams(g=params.g - h * dg, b=params.b,
                         gamma_i=params.gamma_i, gamma_t=params.gamma_t,
                         mu1=params.mu1)
    gp = energy_grad(eta, p_plus, mu0, grid)
    gm = energy_grad(eta, p_minus, mu0, grid)
    want = (state_dot(gp, v) - state_dot(gm, v)) / (2 * h)
    got = float((mixed * dg).sum())
    assert got == pytest.approx(want, rel=1e-6, abs=1e-12)


def test_energy_linear_in_metric(grid, rng):
    # The kinetic term is linear in g, so mixed_hvp_metric is exact, not
    # just a linearization: a finite parameter step must match exactly.
    params, mu0, eta = make_case(grid, rng)
    v = random_state(grid, rng)
    mixed = mixed_hvp_metric(eta, v, params, mu0, grid)
    dg = random_metric(grid, rng, jitter=0.2)
    p2 = CostParams(g=params.g + dg, b=params.b, gamma_i=params.gamma_i,
                    gamma_t=params.gamma_t, mu1=params.mu1)
    g1 = energy_grad(eta, params, mu0, grid)
    g2 = energy_grad(eta, p2, mu0, grid)
    want = state_dot(g2, v) - state_dot(g1, v)
    assert float((mixed * dg).sum()) == pytest.approx(want, rel=1e-11)


def test_positivity_errors(grid, rng):
    params, mu0, eta = make_case(grid, rng)
    bad_term = StateField(eta.rho.copy(), eta.mx,
                          eta.my.copy() if eta.my is not None else None)
    bad_term.rho[0, 0, -1] = -1.0
    with pytest.raises(PositivityError):
        energy_value(bad_term, params, mu0, grid)
    bad_bar = StateField(eta.rho.copy(), eta.mx,
                         eta.my.copy() if eta.my is not None else None)
    # Make one interpolant nonpositive while keeping the terminal slice
    # positive: sink the first slice far below -mu0.
    bad_bar.rho[0, 0, 0] = -10.0
    with pytest.raises(PositivityError):
        energy_value(bad_bar, params, mu0, grid)


def test_entropy_and_terminal_weights(grid):
    # Uniform unit state against uniform targets isolates the b term:
    # entropy is 1 log 1 = 0 and the terminal divergence vanishes.
    ones_state = StateField(np.ones(grid.shape_rho), np.zeros(grid.shape_mx),
                            np.zeros(grid.shape_my) if grid.d == 2 else None)
    b = np.full(grid.shape_spatial, 0.25)
    params = CostParams(
        g=np.ones(grid.shape_metric) if grid.d == 1 else random_metric(
            grid, np.random.default_rng(0), jitter=0.0),
        b=b, gamma_i=2.0, gamma_t=3.0, mu1=np.ones(grid.shape_spatial))
    got = energy_value(ones_state, params, np.ones(grid.shape_spatial), grid)
    want = grid.cell_weight * 0.25 * np.prod(grid.shape_rho)
    assert got == pytest.approx(want, rel=1e-13)


def test_workspace_cache_reuses_interpolants(grid, rng):
    params, mu0, eta = make_case(grid, rng)
    ws = EnergyWorkspace()
    f1 = energy_value(eta, params, mu0, grid, ws)
    bars_before = ws.interpolants(eta, mu0)
    f2 = energy_value(eta, params, mu0, grid, ws)
    assert f1 == f2
    assert ws.interpolants(eta, mu0) is bars_before


def test_metric_min_eigenvalues(grid2d):
    g = np.zeros(grid2d.shape_metric)
    g[:, :, 0] = 2.0
    g[:, :, 1] = 1.0
    g[:, :, 2] = 2.0
    # Eigenvalues of [[2, 1], [1, 2]] are 1 and 3.
    np.testing.assert_allclose(metric_min_eigenvalues(g, grid2d),
                               np.ones(grid2d.shape_spatial), atol=1e-14)


def test_params_validate(grid2d, rng):
    mu1 = random_density(grid2d, rng)
    good = random_metric(grid2d, rng, jitter=0.0)
    with pytest.raises(ValueError):
        CostParams(g=good, b=np.zeros(grid2d.shape_spatial), gamma_i=-1.0,
                   gamma_t=1.0, mu1=mu1).validate(grid2d)
    sing = good.copy()
    sing[0, 0, 0] = -1.0
    with pytest.raises(ValueError):
        CostParams(g=sing, b=np.zeros(grid2d.shape_spatial), gamma_i=1.0,
                   gamma_t=1.0, mu1=mu1).validate(grid2d)
    flat = mu1.copy()
    flat[0, 0] = 0.0
    with pytest.raises(ValueError):
        CostParams(g=good, b=np.zeros(grid2d.shape_spatial), gamma_i=1.0,
                   gamma_t=1.0, mu1=flat).validate(grid2d)

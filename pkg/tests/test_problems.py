"""Inverse-problem container and functional checks.

Oracles: hand-computed fidelity, regularizer, and error formulas, and
finite differences of scalar functionals for the gradient functions.
"""

import numpy as np
import pytest

from conftest import random_state
from mfgrid import (CostParams, ForwardConfig, GridSpec, StateField,
                    solve_forward)
from mfgrid.problems import (InverseProblemSpec, Observation, ObservationSet,
                             add_noise, fidelity, fidelity_grad,
                             gauge_adjusted_error, identity_metric,
                             regularizer, regularizer_grad, relative_error,
                             solve_equilibria, upper_objective)
from mfgrid.grid import state_axpy, state_dot
from mfgrid.recipes import constant_metric, gaussian_density

GRID = GridSpec(8, 1, 5, d=1)


def solved_observation(grid=GRID, gamma_i=0.1, gamma_t=1.0, b=None):
    mu0 = gaussian_density(grid, (-0.2,), (0.2,))
    mu1 = gaussian_density(grid, (0.2,), (0.2,))
    if b is None:
        b = np.zeros(grid.shape_spatial)
    params = CostParams(g=constant_metric(grid, 1.0), b=b,
                        gamma_i=gamma_i, gamma_t=gamma_t, mu1=mu1)
    eta, trace = solve_forward(params, mu0, grid,
                               ForwardConfig(max_iters=40000, tol=1e-8))
    assert trace.converged
    return Observation(eta=eta, mu0=mu0, mu1=mu1), params


def test_fidelity_matches_manual_sum(grid2d):
    rng = np.random.default_rng(0)
    eta = random_state(grid2d, rng)
    obs = random_state(grid2d, rng)
    w = grid2d.dx * grid2d.dy * grid2d.dt
    expected = 0.5 * w * (np.sum((eta.rho - obs.rho) ** 2)
                          + np.sum((eta.mx - obs.mx) ** 2)
                          + np.sum((eta.my - obs.my) ** 2))
    assert fidelity(eta, obs, grid2d) == pytest.approx(expected, rel=1e-13)


def test_fidelity_grad_matches_finite_difference(grid2d):
    rng = np.random.default_rng(1)
    eta = random_state(grid2d, rng)
    obs = random_state(grid2d, rng)
    v = random_state(grid2d, rng)
    g = fidelity_grad(eta, obs, grid2d)
    h = 1e-6
    fp = fidelity(state_axpy(h, v, eta), obs, grid2d)
    fm = fidelity(state_axpy(-h, v, eta), obs, grid2d)
    assert state_dot(g, v) == pytest.approx((fp - fm) / (2 * h), rel=1e-8)


def test_regularizer_matches_manual_sum_1d():
    grid = GRID
    rng = np.random.default_rng(2)
    xi = rng.standard_normal(grid.shape_spatial)
    gamma_r = 0.7
    manual = 0.5 * gamma_r * grid.dx * sum(
        (xi[i + 1, 0] - xi[i, 0]) ** 2 for i in range(grid.n_x - 1))
    assert regularizer(xi, gamma_r, grid) == pytest.approx(manual, rel=1e-13)
    assert regularizer(xi, 0.0, grid) == 0.0


def test_regularizer_matches_manual_sum_metric_2d(grid2d):
    rng = np.random.default_rng(3)
    xi = rng.standard_normal(grid2d.shape_metric)
    gamma_r = 0.5
    manual = 0.0
    for c in range(3):
        comp = xi[:, :, c]
        manual += np.sum(np.diff(comp, axis=0) ** 2)
        manual += np.sum(np.diff(comp, axis=1) ** 2)
    manual *= 0.5 * gamma_r * grid2d.dx * grid2d.dy
    assert regularizer(xi, gamma_r, grid2d) == pytest.approx(manual, rel=1e-13)


@pytest.mark.parametrize("shape_attr", ["shape_spatial", "shape_metric"])
def test_regularizer_grad_matches_finite_difference(grid2d, shape_attr):
    rng = np.random.default_rng(4)
    xi = rng.standard_normal(getattr(grid2d, shape_attr))
    v = rng.standard_normal(xi.shape)
    gamma_r = 0.9
    g = regularizer_grad(xi, gamma_r, grid2d)
    h = 1e-6
    fp = regularizer(xi + h * v, gamma_r, grid2d)
    fm = regularizer(xi - h * v, gamma_r, grid2d)
    assert float(np.vdot(g, v)) == pytest.approx((fp - fm) / (2 * h), rel=1e-7)


def test_add_noise_deterministic_bounded_and_floored():
    ob, _ = solved_observation()
    obs = ObservationSet((ob, ob))
    gamma_n = 0.3
    noisy1 = add_noise(obs, gamma_n, seed=42)
    noisy2 = add_noise(obs, gamma_n, seed=42)
    other = add_noise(obs, gamma_n, seed=43)
    for a, b in zip(noisy1, noisy2):
        np.testing.assert_array_equal(a.eta.rho, b.eta.rho)
        np.testing.assert_array_equal(a.eta.mx, b.eta.mx)
    assert any(not np.array_equal(a.eta.rho, b.eta.rho)
               for a, b in zip(noisy1, other))
    for orig, pert in zip(obs, noisy1):
        assert pert.eta.rho.min() >= 0.01
        # Unfloored entries moved by at most gamma_n / 2.
        moved = pert.eta.rho > 0.01
        assert np.all(np.abs(pert.eta.rho - orig.eta.rho)[moved]
                      <= 0.5 * gamma_n + 1e-15)
        assert np.all(np.abs(pert.eta.mx - orig.eta.mx) <= 0.5 * gamma_n)
        # Endpoint densities are shared, not perturbed.
        assert pert.mu0 is orig.mu0
        assert pert.mu1 is orig.mu1


def test_add_noise_zero_is_identity_and_negative_raises():
    ob, _ = solved_observation()
    obs = ObservationSet((ob,))
    assert add_noise(obs, 0.0, seed=1) is obs
    with pytest.raises(ValueError):
        add_noise(obs, -0.1, seed=1)


def test_relative_error_obstacle_formula():
    xi_true = np.array([[3.0], [4.0]])
    xi = np.array([[3.0], [4.0 + 5.0]])
    assert relative_error(xi, xi_true, "obstacle") == pytest.approx(1.0)
    with pytest.raises(ValueError, match="shape"):
        relative_error(np.zeros((3, 1)), xi_true, "obstacle")
    with pytest.raises(ValueError, match="zero"):
        relative_error(xi, np.zeros_like(xi_true), "obstacle")
    with pytest.raises(ValueError, match="kind"):
        relative_error(xi, xi_true, "potential")


def test_relative_error_metric_counts_off_diagonal_twice():
    # Truth: identity everywhere. Error only in g_xy of one cell.
    shape = (2, 2, 3)
    g_true = np.zeros(shape)
    g_true[:, :, 0] = 1.0
    g_true[:, :, 2] = 1.0
    g = g_true.copy()
    g[0, 0, 1] += 0.5
    # num = 2 * 0.5^2, denom = 8 cells' diagonal ones = 8.
    expected = np.sqrt(2 * 0.25 / 8.0)
    assert relative_error(g, g_true, "metric") == pytest.approx(expected)


def test_gauge_adjusted_error_ignores_constants():
    rng = np.random.default_rng(5)
    b_true = rng.standard_normal((6, 4))
    b = b_true + 17.3
    assert gauge_adjusted_error(b, b_true) == pytest.approx(0.0, abs=1e-12)
    b2 = b_true + rng.standard_normal((6, 4)) * 0.1
    assert gauge_adjusted_error(b2 + 5.0, b_true) == pytest.approx(
        gauge_adjusted_error(b2, b_true), rel=1e-12)


def test_params_for_routes_unknown_by_kind():
    ob, _ = solved_observation()
    obs = ObservationSet((ob,))
    b = np.full(GRID.shape_spatial, 0.25)
    prob = InverseProblemSpec(kind="obstacle", grid=GRID, observations=obs,
                              gamma_i=0.1, gamma_t=1.0, xi_init=b)
    p = prob.params_for(b, 0)
    assert p.b is b
    np.testing.assert_array_equal(p.g, identity_metric(GRID))
    assert p.mu1 is ob.mu1

    g = 2.0 * identity_metric(GRID)
    prob_m = InverseProblemSpec(kind="metric", grid=GRID, observations=obs,
                                gamma_i=0.1, gamma_t=1.0, xi_init=g)
    pm = prob_m.params_for(g, 0)
    assert pm.g is g
    np.testing.assert_array_equal(pm.b, np.zeros(GRID.shape_spatial))


def test_spec_validation_errors():
    ob, _ = solved_observation()
    obs = ObservationSet((ob,))
    with pytest.raises(ValueError, match="kind"):
        InverseProblemSpec(kind="speed", grid=GRID, observations=obs,
                           gamma_i=0.1, gamma_t=1.0,
                           xi_init=np.zeros(GRID.shape_spatial))
    with pytest.raises(ValueError, match="shape"):
        InverseProblemSpec(kind="obstacle", grid=GRID, observations=obs,
                           gamma_i=0.1, gamma_t=1.0,
                           xi_init=np.zeros((3, 3)))
    with pytest.raises(ValueError, match="go together"):
        InverseProblemSpec(kind="metric", grid=GRID, observations=obs,
                           gamma_i=0.1, gamma_t=1.0,
                           xi_init=identity_metric(GRID),
                           fixed_mask=np.zeros(GRID.shape_spatial, bool))
    with pytest.raises(ValueError, match="gamma_r"):
        InverseProblemSpec(kind="obstacle", grid=GRID, observations=obs,
                           gamma_i=0.1, gamma_t=1.0, gamma_r=-1.0,
                           xi_init=np.zeros(GRID.shape_spatial))


def test_observation_set_validation(caplog):
    ob, _ = solved_observation()
    good = ObservationSet((ob,))
    with caplog.at_level("WARNING", logger="mfgrid.problems"):
        good.validate(GRID)
    assert not caplog.records

    bad_rho = ob.eta.rho.copy()
    bad_rho[:, :, -1] = -1.0
    bad = ObservationSet((Observation(
        StateField(bad_rho, ob.eta.mx, None), ob.mu0, ob.mu1),))
    with pytest.raises(ValueError, match="terminal"):
        bad.validate(GRID)

    drift = ob.eta.rho + 0.5  # breaks the continuity constraint
    with caplog.at_level("WARNING", logger="mfgrid.problems"):
        ObservationSet((Observation(
            StateField(drift, ob.eta.mx, None), ob.mu0, ob.mu1),)
        ).validate(GRID)
    assert any("constraint" in r.message for r in caplog.records)


def test_upper_objective_minimal_at_truth():
    b_true = np.zeros(GRID.shape_spatial)
    b_true[2:5, 0] = 0.3
    b_true -= b_true.mean()
    ob, params = solved_observation(b=b_true)
    obs = ObservationSet((ob,))
    prob = InverseProblemSpec(kind="obstacle", grid=GRID, observations=obs,
                              gamma_i=0.1, gamma_t=1.0, xi_init=b_true,
                              xi_true=b_true)
    cfg = ForwardConfig(max_iters=40000, tol=1e-8)
    at_truth = upper_objective(b_true, prob, cfg)
    away = upper_objective(b_true + 0.2, prob, cfg)  # same max, shifted gauge
    tilted = b_true.copy()
    tilted[:4, 0] += 0.4
    at_tilted = upper_objective(tilted, prob, cfg)
    assert at_truth < 1e-10
    # The constant shift is a gauge direction: the equilibrium is unchanged.
    assert away == pytest.approx(at_truth, abs=1e-10)
    assert at_tilted > 100 * max(at_truth, 1e-12)


def test_solve_equilibria_returns_warm_startable_states():
    ob, params = solved_observation()
    obs = ObservationSet((ob,))
    prob = InverseProblemSpec(kind="obstacle", grid=GRID, observations=obs,
                              gamma_i=0.1, gamma_t=1.0,
                              xi_init=np.zeros(GRID.shape_spatial))
    cfg = ForwardConfig(max_iters=40000, tol=1e-8)
    total, etas = solve_equilibria(np.zeros(GRID.shape_spatial), prob, cfg)
    assert len(etas) == 1
    assert total == pytest.approx(fidelity(etas[0], ob.eta, GRID))
    # Warm restart from the reached equilibrium returns immediately.
    total2, etas2 = solve_equilibria(np.zeros(GRID.shape_spatial), prob, cfg,
                                     warm=etas)
    assert total2 == pytest.approx(total, rel=1e-10, abs=1e-14)

"""Bilevel solver checks.

Oracles: central finite differences through the exact replayed inner map
for the hypergradient, per-cell numpy.linalg.eigh for the metric
projection, and bitwise self-consistency for determinism and resume.
"""

import numpy as np
import pytest

from mfgrid import (CostParams, ForwardConfig, GridSpec, StateField,
                    solve_forward)
from mfgrid.bilevel import (BilevelConfig, apply_fixed_mask, initial_state,
                            project_metric, project_obstacle, project_unknown,
                            run_agm, unrolled_hypergradient)
from mfgrid.forward import inner_loop
from mfgrid.problems import (InverseProblemSpec, Observation, ObservationSet,
                             fidelity, fidelity_grad, identity_metric)
from mfgrid.projection import build_context
from mfgrid.recipes import constant_metric, gaussian_density

GRID = GridSpec(6, 1, 4, d=1)


def make_problem(kind, grid=GRID, gamma_i=0.1, gamma_t=1.0):
    mu0 = gaussian_density(grid, (-0.2,) * grid.d, (0.25,) * grid.d)
    mu1 = gaussian_density(grid, (0.2,) * grid.d, (0.25,) * grid.d)
    b_true = np.zeros(grid.shape_spatial)
    b_true[grid.n_x // 2:, :] = 0.4
    b_true -= b_true.mean()
    g_true = identity_metric(grid)
    params = CostParams(g=g_true, b=b_true, gamma_i=gamma_i,
                        gamma_t=gamma_t, mu1=mu1)
    eta, trace = solve_forward(params, mu0, grid,
                               ForwardConfig(max_iters=40000, tol=1e-9))
    assert trace.converged
    obs = ObservationSet((Observation(eta=eta, mu0=mu0, mu1=mu1),))
    if kind == "obstacle":
        xi_init = np.zeros(grid.shape_spatial)
        xi_true = b_true
    else:
        xi_init = identity_metric(grid)
        xi_true = g_true
    return InverseProblemSpec(kind=kind, grid=grid, observations=obs,
                              gamma_i=gamma_i, gamma_t=gamma_t,
                              xi_init=xi_init, xi_true=xi_true), params


@pytest.mark.parametrize("kind", ["obstacle", "metric"])
def test_hypergradient_matches_finite_difference(kind):
    problem, _ = make_problem(kind)
    grid = problem.grid
    obs = problem.observations[0]
    ctx = build_context(grid, obs.mu0)

    # Differentiate from a fixed, well-converged warm start so the replayed
    # inner map is smooth in xi (no positivity halvings anywhere nearby).
    xi0 = np.array(problem.xi_init, dtype=float)
    if kind == "obstacle":
        xi0[2, 0] += 0.1
    else:
        xi0 *= 1.1
    eta0, tr = solve_forward(problem.params_for(xi0, 0), obs.mu0, grid,
                             ForwardConfig(max_iters=40000, tol=1e-9),
                             ctx=ctx)
    assert tr.converged
    tau_l, k_l = 0.05, 3

    def upper_value(xi):
        traj = inner_loop(eta0, problem.params_for(xi, 0), obs.mu0, grid,
                          ctx, k_l, tau_l)
        assert all(t == tau_l for t in traj.stepsizes)
        return fidelity(traj.states[-1], obs.eta, grid)

    params0 = problem.params_for(xi0, 0)
    traj0 = inner_loop(eta0, params0, obs.mu0, grid, ctx, k_l, tau_l)
    hyper = unrolled_hypergradient(
        traj0, params0, fidelity_grad(traj0.states[-1], obs.eta, grid),
        None, obs.mu0, grid, ctx, kind)

    rng = np.random.default_rng(8)
    h = 1e-5
    for _ in range(3):
        v = rng.standard_normal(xi0.shape)
        fd = (upper_value(xi0 + h * v) - upper_value(xi0 - h * v)) / (2 * h)
        assert float(np.vdot(hyper, v)) == pytest.approx(fd, rel=2e-5, abs=1e-14)


def test_hypergradient_matches_finite_difference_metric_2d():
    grid = GridSpec(4, 3, 3)
    problem, _ = make_problem("metric", grid=grid)
    obs = problem.observations[0]
    ctx = build_context(grid, obs.mu0)
    xi0 = identity_metric(grid) * 1.2
    xi0[:, :, 1] = 0.05
    eta0, tr = solve_forward(problem.params_for(xi0, 0), obs.mu0, grid,
                             ForwardConfig(max_iters=40000, tol=1e-9),
                             ctx=ctx)
    assert tr.converged
    tau_l, k_l = 0.05, 2
    params0 = problem.params_for(xi0, 0)
    traj0 = inner_loop(eta0, params0, obs.mu0, grid, ctx, k_l, tau_l)
    hyper = unrolled_hypergradient(
        traj0, params0, fidelity_grad(traj0.states[-1], obs.eta, grid),
        None, obs.mu0, grid, ctx, "metric")

    def upper_value(xi):
        traj = inner_loop(eta0, problem.params_for(xi, 0), obs.mu0, grid,
                          ctx, k_l, tau_l)
        return fidelity(traj.states[-1], obs.eta, grid)

    rng = np.random.default_rng(9)
    v = rng.standard_normal(xi0.shape)
    h = 1e-5
    fd = (upper_value(xi0 + h * v) - upper_value(xi0 - h * v)) / (2 * h)
    assert float(np.vdot(hyper, v)) == pytest.approx(fd, rel=2e-5, abs=1e-14)


def test_project_obstacle_zero_mean_idempotent():
    rng = np.random.default_rng(0)
    b = rng.standard_normal((5, 4)) + 3.0
    p = project_obstacle(b)
    assert abs(p.mean()) < 1e-14
    np.testing.assert_allclose(project_obstacle(p), p, atol=1e-15)


def test_project_metric_matches_eigh_oracle():
    rng = np.random.default_rng(1)
    shape = (4, 3)
    g = np.empty(shape + (3,))
    g[:, :, 0] = rng.uniform(-1.0, 2.0, shape)
    g[:, :, 2] = rng.uniform(-1.0, 2.0, shape)
    g[:, :, 1] = rng.uniform(-1.5, 1.5, shape)
    eps = 1e-3
    p = project_metric(g, eps)
    for i in range(shape[0]):
        for j in range(shape[1]):
            a = np.array([[g[i, j, 0], g[i, j, 1]],
                          [g[i, j, 1], g[i, j, 2]]])
            lam, q = np.linalg.eigh(a)
            want = q @ np.diag(np.maximum(lam, eps)) @ q.T
            got = np.array([[p[i, j, 0], p[i, j, 1]],
                            [p[i, j, 1], p[i, j, 2]]])
            np.testing.assert_allclose(got, want, atol=1e-12)
            assert np.linalg.eigvalsh(got).min() >= eps - 1e-12


def test_project_metric_fixed_point_and_1d_and_isotropic():
    eps = 1e-6
    g_spd = np.empty((2, 2, 3))
    g_spd[:, :, 0] = 2.0
    g_spd[:, :, 1] = 0.3
    g_spd[:, :, 2] = 1.0
    np.testing.assert_allclose(project_metric(g_spd, eps), g_spd, atol=1e-14)
    # Isotropic negative cell: radius 0, both eigenvalues floored.
    g_iso = np.zeros((1, 1, 3))
    g_iso[:, :, 0] = -1.0
    g_iso[:, :, 2] = -1.0
    p = project_metric(g_iso, eps)
    np.testing.assert_allclose(p[0, 0], [eps, 0.0, eps], atol=1e-15)
    g1 = np.array([[0.5, -2.0, 1e-9]]).T
    np.testing.assert_allclose(project_metric(g1, eps).ravel(),
                               [0.5, eps, eps])
    with pytest.raises(ValueError):
        project_metric(g1, 0.0)


def test_apply_fixed_mask():
    g = np.zeros((3, 1, 3))
    known = np.ones((3, 1, 3)) * 7.0
    mask = np.zeros((3, 1), dtype=bool)
    mask[0, 0] = True
    out = apply_fixed_mask(g, known, mask)
    np.testing.assert_array_equal(out[0, 0], [7.0, 7.0, 7.0])
    np.testing.assert_array_equal(out[1:], g[1:])
    with pytest.raises(ValueError):
        apply_fixed_mask(g, known, np.zeros((2, 1), dtype=bool))


def test_project_unknown_applies_mask():
    problem, _ = make_problem("metric")
    grid = problem.grid
    mask = np.zeros(grid.shape_spatial, dtype=bool)
    mask[0, 0] = True
    fixed_values = identity_metric(grid) * 3.0
    masked = InverseProblemSpec(
        kind="metric", grid=grid, observations=problem.observations,
        gamma_i=problem.gamma_i, gamma_t=problem.gamma_t,
        xi_init=problem.xi_init, fixed_mask=mask, fixed_values=fixed_values)
    xi = identity_metric(grid) * -5.0  # negative before projection
    out = project_unknown(xi, masked)
    np.testing.assert_array_equal(out[mask], fixed_values[mask])
    assert out[~mask].min() >= masked.eps_spd - 1e-15


def test_run_agm_obstacle_smoke_and_determinism():
    problem, _ = make_problem("obstacle")
    cfg = BilevelConfig(k_u=6, tau_u=50.0, k_l=3, tau_l="auto",
                        exact_resolve_every=3,
                        exact_cfg=ForwardConfig(max_iters=40000, tol=1e-8))
    xi1, tr1 = run_agm(problem, cfg)
    xi2, tr2 = run_agm(problem, cfg)
    np.testing.assert_array_equal(xi1, xi2)
    assert tr1.k_u == list(range(6))
    assert tr1.upper_objective_approx == tr2.upper_objective_approx
    assert tr1.stationarity == tr2.stationarity
    assert all(w >= 0 for w in tr1.wall_time_s)
    # Exact objective only on resolve iterations.
    assert [e is not None for e in tr1.upper_objective_exact] == \
        [k % 3 == 0 for k in range(6)]
    assert all(e is not None for e in tr1.relative_error)
    assert tr1.best_xi is not None
    assert tr1.best_error == min(tr1.relative_error)
    assert abs(xi1.mean()) < 1e-12  # stays in the zero-mean gauge


def test_run_agm_resume_matches_uninterrupted():
    problem, _ = make_problem("obstacle")
    full_cfg = BilevelConfig(k_u=6, tau_u=5.0, k_l=3, tau_l="auto",
                             exact_resolve_every=2,
                             exact_cfg=ForwardConfig(max_iters=40000,
                                                     tol=1e-8))
    xi_full, tr_full = run_agm(problem, full_cfg)

    states = []
    half_cfg = BilevelConfig(k_u=3, tau_u=5.0, k_l=3, tau_l="auto",
                             exact_resolve_every=2,
                             exact_cfg=ForwardConfig(max_iters=40000,
                                                     tol=1e-8))
    run_agm(problem, half_cfg, on_iteration=lambda s, row: states.append(s))
    xi_res, tr_res = run_agm(problem, full_cfg, resume=states[-1])
    np.testing.assert_array_equal(xi_res, xi_full)
    assert tr_res.k_u == [3, 4, 5]
    np.testing.assert_array_equal(tr_res.upper_objective_approx,
                                  tr_full.upper_objective_approx[3:])


def test_initial_state_contents():
    problem, params_true = make_problem("obstacle")
    cfg = BilevelConfig(k_u=1, tau_u=1.0, k_l=2)
    state = initial_state(problem, cfg)
    assert state.k_u == 0
    assert abs(state.xi.mean()) < 1e-14
    assert state.tau_l > 0
    assert len(state.warm) == len(problem.observations)
    ctx = build_context(problem.grid, problem.observations[0].mu0)
    from mfgrid.stagops import apply_constraint_op
    gap = apply_constraint_op(state.warm[0], problem.observations[0].mu0,
                              problem.grid)
    assert np.linalg.norm(gap) < 1e-8


def test_bilevel_config_validation():
    with pytest.raises(ValueError):
        BilevelConfig(k_u=0, tau_u=1.0)
    with pytest.raises(ValueError):
        BilevelConfig(k_u=1, tau_u=0.0)
    with pytest.raises(ValueError):
        BilevelConfig(k_u=1, tau_u=1.0, k_l=0)
    with pytest.raises(ValueError):
        BilevelConfig(k_u=1, tau_u=1.0, tau_l="fast")
    with pytest.raises(ValueError):
        BilevelConfig(k_u=1, tau_u=1.0, tau_l=-0.5)
    with pytest.raises(ValueError):
        BilevelConfig(k_u=1, tau_u=1.0, exact_resolve_every=-1)

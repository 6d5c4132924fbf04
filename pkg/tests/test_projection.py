"""Projection onto the continuity constraint set against a dense oracle.

The oracle builds the constraint matrix A column by column from the
scalar-loop reference operators and projects with a pseudo-inverse; the
spectral and CG paths must both reproduce it.
"""

import numpy as np
import pytest

from mfgrid import GridSpec, state_dot, state_to_vec, vec_to_state
from mfgrid.errors import ConfigError
from mfgrid.projection import (apply_constraint, build_context,
                               poisson_neumann, project, project_tangent,
                               solve_normal, temporal_gram)
from mfgrid.stagops import apply_constraint_op

import reference_ops as ref
from conftest import random_density, random_state

GRIDS = [GridSpec(4, 4, 3), GridSpec(5, 1, 4, d=1), GridSpec(3, 2, 2)]


@pytest.fixture(params=range(len(GRIDS)), ids=lambda i: f"grid{i}")
def grid(request):
    return GRIDS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def dense_projection(grid, mu0, eta):
    """Oracle: eta - A^T (A A^T)^+ (A eta - c) via dense linear algebra."""
    a_mat = ref.constraint_matrix(grid)
    c = np.zeros(grid.shape_centered)
    c[:, :, 0] = mu0 / grid.dt
    c = c.ravel(order="F")
    v = state_to_vec(eta)
    resid = a_mat @ v - c
    gram = a_mat @ a_mat.T
    z = np.linalg.solve(gram, resid)
    return vec_to_state(v - a_mat.T @ z, grid)


def test_temporal_gram_matches_operator_rows():
    # D_t D_t^T along one spatial point, assembled from the reference ops.
    grid = GridSpec(1, 1, 5, d=1)
    a_mat = ref.constraint_matrix(grid)
    a_rho = a_mat[:, :5]  # the rho block: D_t with zero mu0
    np.testing.assert_allclose(a_rho @ a_rho.T, temporal_gram(5, grid.dt),
                               atol=1e-10)


def test_gram_is_spd(grid):
    a_mat = ref.constraint_matrix(grid)
    eigs = np.linalg.eigvalsh(a_mat @ a_mat.T)
    assert eigs.min() > 0.0


def test_project_matches_dense_oracle(grid, rng):
    mu0 = random_density(grid, rng)
    ctx = build_context(grid, mu0)
    eta = random_state(grid, rng)
    got = project(eta, ctx)
    want = dense_projection(grid, mu0, eta)
    np.testing.assert_allclose(got.rho, want.rho, atol=1e-10)
    np.testing.assert_allclose(got.mx, want.mx, atol=1e-10)
    if grid.d == 2:
        np.testing.assert_allclose(got.my, want.my, atol=1e-10)


def test_project_feasible_and_idempotent(grid, rng):
    mu0 = random_density(grid, rng)
    ctx = build_context(grid, mu0)
    eta = random_state(grid, rng)
    p1 = project(eta, ctx)
    gap = np.linalg.norm(apply_constraint_op(p1, mu0, grid))
    assert gap <= 1e-9 * (1.0 + np.linalg.norm(mu0 / grid.dt))
    p2 = project(p1, ctx)
    assert np.abs(p2.rho - p1.rho).max() < 1e-10
    assert np.abs(p2.mx - p1.mx).max() < 1e-10


def test_projection_is_orthogonal(grid, rng):
    # The correction eta - proj(eta) must be orthogonal to the tangent
    # space, i.e. to every projected direction.
    mu0 = random_density(grid, rng)
    ctx = build_context(grid, mu0)
    eta = random_state(grid, rng)
    p = project(eta, ctx)
    diff = vec_to_state(state_to_vec(eta) - state_to_vec(p), grid)
    for _ in range(3):
        v = project_tangent(random_state(grid, rng), ctx)
        assert abs(state_dot(diff, v)) < 1e-10 * (1 + abs(state_dot(v, v)))


def test_project_tangent_is_linear_projector(grid, rng):
    mu0 = random_density(grid, rng)
    ctx = build_context(grid, mu0)
    v = random_state(grid, rng)
    pv = project_tangent(v, ctx)
    gap = np.linalg.norm(apply_constraint_op(
        pv, np.zeros(grid.shape_spatial), grid))
    assert gap < 1e-10 * (1 + np.linalg.norm(state_to_vec(v)))
    ppv = project_tangent(pv, ctx)
    assert np.abs(state_to_vec(ppv) - state_to_vec(pv)).max() < 1e-10


def test_cg_matches_spectral(grid, rng):
    mu0 = random_density(grid, rng)
    ctx_s = build_context(grid, mu0, method="spectral")
    ctx_cg = build_context(grid, mu0, method="cg")
    eta = random_state(grid, rng)
    ps = project(eta, ctx_s)
    pc = project(eta, ctx_cg)
    np.testing.assert_allclose(pc.rho, ps.rho, atol=1e-9)
    np.testing.assert_allclose(pc.mx, ps.mx, atol=1e-9)
    r = rng.standard_normal(grid.shape_centered)
    np.testing.assert_allclose(solve_normal(r, ctx_cg),
                               solve_normal(r, ctx_s), atol=1e-9)


def test_build_context_validates(grid2d):
    ones = np.ones(grid2d.shape_spatial)
    with pytest.raises(ConfigError):
        build_context(grid2d, ones, method="qr")
    with pytest.raises(ValueError):
        build_context(grid2d, 2.0 * ones)  # mass 2, not a density


def test_apply_constraint_checks_shapes(grid2d, rng):
    eta = random_state(grid2d, rng)
    with pytest.raises(ValueError):
        apply_constraint(eta, np.zeros((1, 2)), grid2d)


def test_solve_normal_oracle(grid, rng):
    mu0 = random_density(grid, rng)
    ctx = build_context(grid, mu0)
    a_mat = ref.constraint_matrix(grid)
    gram = a_mat @ a_mat.T
    r = rng.standard_normal(grid.shape_centered)
    want = np.linalg.solve(gram, r.ravel(order="F"))
    got = solve_normal(r, ctx).ravel(order="F")
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_poisson_neumann_solves_reference_problem(grid, rng):
    rhs = rng.standard_normal(grid.shape_spatial)
    rhs -= rhs.mean()
    psi = poisson_neumann(rhs, grid)
    assert abs(psi.mean()) < 1e-12
    # Verify with the reference operators: D_x(D_x^T psi) + D_y(D_y^T psi).
    phi3 = psi[:, :, None]
    out = ref.diff_x_ref(ref.adj_diff_x_ref(phi3, grid.dx), grid.dx)
    if grid.d == 2:
        out = out + ref.diff_y_ref(ref.adj_diff_y_ref(phi3, grid.dy), grid.dy)
    np.testing.assert_allclose(out[:, :, 0], rhs, atol=1e-9)


def test_poisson_neumann_rejects_nonzero_mean(grid2d):
    with pytest.raises(ValueError):
        poisson_neumann(np.ones(grid2d.shape_spatial), grid2d)

import numpy as np
import pytest

from mfgrid import (GridSpec, StateField, field_shape, inner_product, norm,
                    state_axpy, state_copy, state_dot, state_lincomb,
                    state_norm, state_scale, state_to_vec, validate_density,
                    vec_to_state, zeros_state)

from conftest import random_state


def test_spacings_and_weight():
    grid = GridSpec(n_x=4, n_y=5, n_t=8)
    assert grid.dx == 0.25
    assert grid.dy == 0.2
    assert grid.dt == 0.125
    assert grid.cell_weight == pytest.approx(0.25 * 0.2 * 0.125, abs=0)


def test_shapes_2d():
    grid = GridSpec(n_x=4, n_y=3, n_t=5)
    assert grid.shape_rho == (4, 3, 5)
    assert grid.shape_mx == (3, 3, 5)
    assert grid.shape_my == (4, 2, 5)
    assert grid.shape_centered == (4, 3, 5)
    assert grid.shape_spatial == (4, 3)
    assert grid.shape_metric == (4, 3, 3)
    assert field_shape(grid, "mx") == (3, 3, 5)


def test_shapes_1d():
    grid = GridSpec(n_x=6, n_y=1, n_t=4, d=1)
    assert grid.shape_mx == (5, 1, 4)
    assert grid.shape_metric == (6, 1)
    assert grid.n_metric_components == 1


def test_dimension_consistency_enforced():
    with pytest.raises(ValueError):
        GridSpec(n_x=4, n_y=1, n_t=3, d=2)
    with pytest.raises(ValueError):
        GridSpec(n_x=4, n_y=2, n_t=3, d=1)
    with pytest.raises(ValueError):
        GridSpec(n_x=0, n_y=1, n_t=3, d=1)
    with pytest.raises(ValueError):
        GridSpec(n_x=4, n_y=3, n_t=3, d=3)


def test_inner_product_weight(grid2d):
    rng = np.random.default_rng(0)
    a = rng.standard_normal(grid2d.shape_rho)
    b = rng.standard_normal(grid2d.shape_rho)
    want = grid2d.cell_weight * float((a * b).sum())
    assert inner_product(a, b, grid2d, "rho") == pytest.approx(want, rel=1e-14)
    assert norm(a, grid2d, "rho") == pytest.approx(
        np.sqrt(grid2d.cell_weight) * np.linalg.norm(a), rel=1e-14)


def test_inner_product_shape_check(grid2d):
    a = np.zeros(grid2d.shape_rho)
    bad = np.zeros(grid2d.shape_mx)
    with pytest.raises(ValueError):
        inner_product(a, bad, grid2d, "rho")
    with pytest.raises(ValueError):
        inner_product(a, a, grid2d, "nope")


def test_state_validate(grid2d, grid1d):
    zeros_state(grid2d).validate(grid2d)
    zeros_state(grid1d).validate(grid1d)
    with pytest.raises(ValueError):
        StateField(np.zeros(grid2d.shape_rho), np.zeros(grid2d.shape_mx),
                   None).validate(grid2d)
    with pytest.raises(ValueError):
        StateField(np.zeros(grid1d.shape_rho), np.zeros(grid1d.shape_mx),
                   np.zeros((5, 0, 4))).validate(grid1d)
    bad = zeros_state(grid2d)
    bad.rho[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        bad.validate(grid2d)


def test_state_algebra(grid2d):
    rng = np.random.default_rng(1)
    x = random_state(grid2d, rng)
    y = random_state(grid2d, rng)
    z = state_axpy(2.5, x, y)
    np.testing.assert_array_equal(z.rho, y.rho + 2.5 * x.rho)
    np.testing.assert_array_equal(z.my, y.my + 2.5 * x.my)
    w = state_lincomb(2.0, x, -3.0, y)
    np.testing.assert_array_equal(w.mx, 2.0 * x.mx - 3.0 * y.mx)
    s = state_scale(x, -1.0)
    np.testing.assert_array_equal(s.rho, -x.rho)
    assert state_dot(x, y) == pytest.approx(
        float((x.rho * y.rho).sum() + (x.mx * y.mx).sum()
              + (x.my * y.my).sum()), rel=1e-14)
    assert state_norm(x) == pytest.approx(np.sqrt(state_dot(x, x)), rel=1e-14)
    assert state_norm(x, grid2d) == pytest.approx(
        np.sqrt(grid2d.cell_weight * state_dot(x, x)), rel=1e-14)


def test_state_copy_is_deep(grid2d):
    rng = np.random.default_rng(2)
    x = random_state(grid2d, rng)
    y = state_copy(x)
    y.rho[0, 0, 0] += 1.0
    assert x.rho[0, 0, 0] != y.rho[0, 0, 0]


def test_vec_roundtrip_fortran_order(grid2d, grid1d):
    rng = np.random.default_rng(3)
    for grid in (grid2d, grid1d):
        x = random_state(grid, rng)
        v = state_to_vec(x)
        n_rho = np.prod(grid.shape_rho)
        # i_x must be fastest: the first n_x entries are rho[:, 0, 0].
        np.testing.assert_array_equal(v[:grid.n_x], x.rho[:, 0, 0])
        assert v.size == n_rho + np.prod(grid.shape_mx) + (
            np.prod(grid.shape_my) if grid.d == 2 else 0)
        y = vec_to_state(v, grid)
        np.testing.assert_array_equal(y.rho, x.rho)
        np.testing.assert_array_equal(y.mx, x.mx)
        if grid.d == 2:
            np.testing.assert_array_equal(y.my, x.my)


def test_vec_to_state_length_check(grid1d):
    with pytest.raises(ValueError):
        vec_to_state(np.zeros(7), grid1d)


def test_validate_density(grid2d):
    ones = np.ones(grid2d.shape_spatial)
    validate_density(ones, grid2d)
    with pytest.raises(ValueError):
        validate_density(2.0 * ones, grid2d)
    nonpos = ones.copy()
    nonpos[0, 0] = 0.0
    with pytest.raises(ValueError):
        validate_density(nonpos, grid2d)

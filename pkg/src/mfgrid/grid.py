"""Grid geometry, field containers, and weighted inner products.

The discretization lives on the unit space-time box divided into
``n_x * n_y * n_t`` cells. Four point sets are used:

* t-staggered grid (density rho): shape ``(n_x, n_y, n_t)``, point
  ``(i_x, i_y, i_t + 1/2)`` in index coordinates;
* x-staggered grid (flux mx): shape ``(n_x - 1, n_y, n_t)``;
* y-staggered grid (flux my): shape ``(n_x, n_y - 1, n_t)``, absent in 1D;
* central grid (multiplier phi and all interpolants): shape
  ``(n_x, n_y, n_t)``.

Index order is fixed everywhere as (i_x fastest, then i_y, then i_t); array
axis order is ``[x, y, t]`` and serialization flattens in Fortran order to
keep i_x fastest. One spatial dimension is represented as ``n_y == 1`` with
the ``my`` component absent; there is no separate 1D code path.

Every inner product carries the full ``dx*dy*dt`` weight:

    <a, b> = dx*dy*dt * sum_i a_i b_i

on all four grids. Terminal-slice sums that appear in the energy carry
``dx*dy`` only; that weighting lives in the energy module, not here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridSpec",
    "StateField",
    "FIELD_KINDS",
    "field_shape",
    "inner_product",
    "norm",
    "zeros_state",
    "state_copy",
    "state_scale",
    "state_axpy",
    "state_lincomb",
    "state_dot",
    "state_norm",
    "state_to_vec",
    "vec_to_state",
    "validate_spatial",
    "validate_density",
]

# Grid kinds accepted by inner_product / norm and the serialization layer.
FIELD_KINDS = ("centered", "rho", "mx", "my", "spatial")


@dataclass(frozen=True)
class GridSpec:
    """Dimensions and spacings of the staggered space-time grid.

    The domain is the unit box, so dx = 1/n_x, dy = 1/n_y, dt = 1/n_t.
    Physical experiment domains (e.g. a box centered at the origin) are
    handled by the recipes that evaluate densities at cell centers; the
    solver itself only ever sees the unit parametrization.
    """

    n_x: int
    n_y: int
    n_t: int
    d: int = 2

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"spatial dimension must be 1 or 2, got {self.d}")
        if min(self.n_x, self.n_y, self.n_t) < 1:
            raise ValueError("grid dimensions must be positive")
        if (self.d == 1) != (self.n_y == 1):
            raise ValueError("d=1 requires n_y=1 and vice versa "
                             f"(got d={self.d}, n_y={self.n_y})")

    @property
    def dx(self) -> float:
        return 1.0 / self.n_x

    @property
    def dy(self) -> float:
        return 1.0 / self.n_y

    @property
    def dt(self) -> float:
        return 1.0 / self.n_t

    @property
    def cell_weight(self) -> float:
        """The dx*dy*dt weight carried by every inner product."""
        return self.dx * self.dy * self.dt

    @property
    def shape_rho(self) -> tuple[int, int, int]:
        return (self.n_x, self.n_y, self.n_t)

    @property
    def shape_mx(self) -> tuple[int, int, int]:
        return (self.n_x - 1, self.n_y, self.n_t)

    @property
    def shape_my(self) -> tuple[int, int, int]:
        return (self.n_x, self.n_y - 1, self.n_t)

    @property
    def shape_centered(self) -> tuple[int, int, int]:
        return (self.n_x, self.n_y, self.n_t)

    @property
    def shape_spatial(self) -> tuple[int, int]:
        return (self.n_x, self.n_y)

    @property
    def n_metric_components(self) -> int:
        """Stored metric scalars per cell: g_xx for d=1, (g_xx,g_xy,g_yy) for d=2."""
        return 1 if self.d == 1 else 3

    @property
    def shape_metric(self) -> tuple[int, ...]:
        if self.d == 1:
            return (self.n_x, self.n_y)
        return (self.n_x, self.n_y, 3)


def field_shape(grid: GridSpec, kind: str) -> tuple[int, ...]:
    """Array shape of a field of the given kind on this grid."""
    if kind == "centered":
        return grid.shape_centered
    if kind == "rho":
        return grid.shape_rho
    if kind == "mx":
        return grid.shape_mx
    if kind == "my":
        return grid.shape_my
    if kind == "spatial":
        return grid.shape_spatial
    raise ValueError(f"unknown grid kind {kind!r}; expected one of {FIELD_KINDS}")


def _check_kind_shape(a: np.ndarray, grid: GridSpec, kind: str):
    expected = field_shape(grid, kind)
    if a.shape != expected:
        raise ValueError(f"{kind} field has shape {a.shape}, expected {expected}")


def inner_product(a: np.ndarray, b: np.ndarray, grid: GridSpec, kind: str) -> float:
    """Weighted inner product dx*dy*dt * sum(a*b) on the named grid.

    The weight is the same on every grid kind (spatial fields included); the
    energy's terminal term is the only place a different weight appears and it
    is applied explicitly there.
    """
    _check_kind_shape(a, grid, kind)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return grid.cell_weight * float(np.vdot(a, b).real)


def norm(a: np.ndarray, grid: GridSpec, kind: str) -> float:
    """Norm induced by :func:`inner_product`."""
    return float(np.sqrt(inner_product(a, a, grid, kind)))


@dataclass
class StateField:
    """The lower-level variable eta = (rho, mx, my) on the staggered grids.

    ``my`` is None exactly when the grid is one-dimensional. Arrays are owned
    (not views) float64 and shapes must match the grid.
    """

    rho: np.ndarray
    mx: np.ndarray
    my: np.ndarray | None = field(default=None)

    def validate(self, grid: GridSpec):
        _check_kind_shape(self.rho, grid, "rho")
        _check_kind_shape(self.mx, grid, "mx")
        if grid.d == 2:
            if self.my is None:
                raise ValueError("my component required on a 2D grid")
            _check_kind_shape(self.my, grid, "my")
        elif self.my is not None:
            raise ValueError("my component must be absent on a 1D grid")
        for name, arr in self.items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in state component {name}")

    def items(self):
        yield "rho", self.rho
        yield "mx", self.mx
        if self.my is not None:
            yield "my", self.my

    def arrays(self) -> list[np.ndarray]:
        return [arr for _, arr in self.items()]


def zeros_state(grid: GridSpec) -> StateField:
    my = np.zeros(grid.shape_my) if grid.d == 2 else None
    return StateField(np.zeros(grid.shape_rho), np.zeros(grid.shape_mx), my)


def state_copy(eta: StateField) -> StateField:
    my = eta.my.copy() if eta.my is not None else None
    return StateField(eta.rho.copy(), eta.mx.copy(), my)


def state_scale(eta: StateField, alpha: float) -> StateField:
    my = alpha * eta.my if eta.my is not None else None
    return StateField(alpha * eta.rho, alpha * eta.mx, my)


def state_axpy(alpha: float, x: StateField, y: StateField) -> StateField:
    """y + alpha*x, componentwise."""
    my = y.my + alpha * x.my if y.my is not None else None
    return StateField(y.rho + alpha * x.rho, y.mx + alpha * x.mx, my)


def state_lincomb(alpha: float, x: StateField, beta: float, y: StateField) -> StateField:
    my = alpha * x.my + beta * y.my if x.my is not None else None
    return StateField(alpha * x.rho + beta * y.rho, alpha * x.mx + beta * y.mx, my)


def state_dot(a: StateField, b: StateField) -> float:
    """Unweighted Euclidean dot product over all raw entries."""
    total = float(np.vdot(a.rho, b.rho).real) + float(np.vdot(a.mx, b.mx).real)
    if a.my is not None:
        total += float(np.vdot(a.my, b.my).real)
    return total


def state_norm(a: StateField, grid: GridSpec | None = None) -> float:
    """Euclidean norm of the raw entries; weighted grid norm when grid given."""
    sq = state_dot(a, a)
    if grid is not None:
        sq *= grid.cell_weight
    return float(np.sqrt(sq))


def state_to_vec(eta: StateField) -> np.ndarray:
    """Flatten (rho, mx, my) into one vector, i_x fastest within each block."""
    parts = [arr.ravel(order="F") for arr in eta.arrays()]
    return np.concatenate(parts)


def vec_to_state(vec: np.ndarray, grid: GridSpec) -> StateField:
    """Inverse of state_to_vec for the given grid."""
    n_rho = int(np.prod(grid.shape_rho))
    n_mx = int(np.prod(grid.shape_mx))
    rho = vec[:n_rho].reshape(grid.shape_rho, order="F")
    mx = vec[n_rho:n_rho + n_mx].reshape(grid.shape_mx, order="F")
    my = None
    if grid.d == 2:
        my = vec[n_rho + n_mx:].reshape(grid.shape_my, order="F")
    elif vec.size != n_rho + n_mx:
        raise ValueError("vector length does not match the grid")
    return StateField(rho, mx, my)


def validate_spatial(a: np.ndarray, grid: GridSpec, name: str = "field"):
    _check_kind_shape(a, grid, "spatial")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite entries in {name}")


def validate_density(a: np.ndarray, grid: GridSpec, name: str = "density",
                     tol: float = 1e-8):
    """Check positivity and unit discrete mass dx*dy*sum(a) = 1."""
    validate_spatial(a, grid, name)
    if np.any(a <= 0.0):
        raise ValueError(f"{name} must be strictly positive")
    mass = grid.dx * grid.dy * float(a.sum())
    if abs(mass - 1.0) > tol:
        raise ValueError(f"{name} has discrete mass {mass:.3e}, expected 1 "
                         f"(tolerance {tol:g})")

"""Upper-level definitions of the two inverse problems.

An inverse problem asks for part of the cost (the obstacle b, or the
per-cell metric g) from one or more observed equilibria. The upper-level
objective is the weighted squared discrepancy between the lower-level
minimizer and the observation,

    D(eta, obs) = 1/2 |rho - rho~|^2 + 1/2 |mx - mx~|^2 + 1/2 |my - my~|^2

in the weighted grid norms, summed over observations, plus an optional
smoothness regularizer on the unknown. Noise, error metrics, and the
containers tying observations to their endpoint densities live here too.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .energy import CostParams
from .forward import ForwardConfig, solve_forward
from .grid import GridSpec, StateField, state_axpy, state_scale
from .projection import build_context
from .stagops import apply_constraint_op, interp_t

__all__ = [
    "Observation", "ObservationSet", "InverseProblemSpec",
    "fidelity", "fidelity_grad", "regularizer", "regularizer_grad",
    "add_noise", "relative_error", "gauge_adjusted_error", "upper_objective",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Observation:
    """One observed equilibrium with its endpoint densities."""

    eta: StateField
    mu0: np.ndarray
    mu1: np.ndarray


@dataclass(frozen=True)
class ObservationSet:
    """Observations n = 0..N-1 of equilibria under a shared unknown cost."""

    observations: tuple[Observation, ...]

    def __post_init__(self):
        if len(self.observations) == 0:
            raise ValueError("need at least one observation")

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)

    def __getitem__(self, n: int) -> Observation:
        return self.observations[n]

    def validate(self, grid: GridSpec, feas_tol: float = 1e-7):
        """Check shapes and positivity; warn (only) on infeasible data.

        Positivity is required of the time-interpolated density and the
        terminal slice, matching where the model takes logs; raw entries
        may dip below zero in deep-vacuum cells even at an exact
        equilibrium, since the energy never sees them directly. Noisy
        observations are intentionally infeasible, so constraint violation
        is logged rather than raised.
        """
        for n, obs in enumerate(self.observations):
            obs.eta.validate(grid)
            if obs.mu0.shape != grid.shape_spatial or obs.mu1.shape != grid.shape_spatial:
                raise ValueError(f"observation {n}: endpoint density shape mismatch")
            if obs.eta.rho[:, :, -1].min() <= 0.0:
                raise ValueError(f"observation {n}: nonpositive terminal density")
            if interp_t(obs.eta.rho, obs.mu0).min() <= 0.0:
                raise ValueError(f"observation {n}: nonpositive interpolated density")
            gap = np.linalg.norm(apply_constraint_op(obs.eta, obs.mu0, grid))
            scale = 1.0 + np.linalg.norm(obs.mu0 / grid.dt)
            if gap > feas_tol * 10.0 * scale:
                logger.warning(
                    "observation %d violates the continuity constraint "
                    "(|A eta - c| = %.3e); expected for noisy data", n, gap)


@dataclass
class InverseProblemSpec:
    """Everything the alternating-gradient method needs about one problem.

    kind "obstacle" recovers b with the metric frozen (identity unless
    given); kind "metric" recovers g with the obstacle frozen (zero unless
    given). xi_true, when known, lets traces report relative error.
    """

    kind: str
    grid: GridSpec
    observations: ObservationSet
    gamma_i: float
    gamma_t: float
    xi_init: np.ndarray
    gamma_r: float = 0.0
    fixed_metric: np.ndarray | None = None
    fixed_obstacle: np.ndarray | None = None
    fixed_mask: np.ndarray | None = None
    fixed_values: np.ndarray | None = None
    eps_spd: float = 1e-6
    xi_true: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("obstacle", "metric"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.gamma_r < 0:
            raise ValueError("gamma_r must be nonnegative")
        grid = self.grid
        if self.kind == "obstacle":
            if self.xi_init.shape != grid.shape_spatial:
                raise ValueError("obstacle init has wrong shape")
            if self.fixed_metric is None:
                self.fixed_metric = identity_metric(grid)
        else:
            if self.xi_init.shape != grid.shape_metric:
                raise ValueError("metric init has wrong shape")
            if self.fixed_obstacle is None:
                self.fixed_obstacle = np.zeros(grid.shape_spatial)
            if (self.fixed_mask is None) != (self.fixed_values is None):
                raise ValueError("fixed_mask and fixed_values go together")
            if self.fixed_mask is not None:
                if self.fixed_mask.shape != grid.shape_spatial:
                    raise ValueError("fixed_mask has wrong shape")
                if self.fixed_values.shape != grid.shape_metric:
                    raise ValueError("fixed_values has wrong shape")
        self.observations.validate(grid)

    def params_for(self, xi: np.ndarray, n: int) -> CostParams:
        """Cost parameters seen by the lower level at unknown value xi."""
        mu1 = self.observations[n].mu1
        if self.kind == "obstacle":
            return CostParams(g=self.fixed_metric, b=xi, gamma_i=self.gamma_i,
                              gamma_t=self.gamma_t, mu1=mu1)
        return CostParams(g=xi, b=self.fixed_obstacle, gamma_i=self.gamma_i,
                          gamma_t=self.gamma_t, mu1=mu1)


def identity_metric(grid: GridSpec) -> np.ndarray:
    """g = 1 (d=1) or I_2 per cell (d=2) in the stored-component layout."""
    if grid.d == 1:
        return np.ones(grid.shape_metric)
    g = np.zeros(grid.shape_metric)
    g[:, :, 0] = 1.0
    g[:, :, 2] = 1.0
    return g


def fidelity(eta: StateField, observed: StateField, grid: GridSpec) -> float:
    """Half squared distance to the observation in the weighted grid norms."""
    w = grid.cell_weight
    total = np.vdot(eta.rho - observed.rho, eta.rho - observed.rho).real
    total += np.vdot(eta.mx - observed.mx, eta.mx - observed.mx).real
    if eta.my is not None:
        total += np.vdot(eta.my - observed.my, eta.my - observed.my).real
    return 0.5 * w * float(total)


def fidelity_grad(eta: StateField, observed: StateField,
                  grid: GridSpec) -> StateField:
    """Gradient of the fidelity: cell_weight * (eta - observed)."""
    return state_scale(state_axpy(-1.0, observed, eta), grid.cell_weight)


def _forward_diff_energy(comp: np.ndarray, grid: GridSpec) -> float:
    total = float(np.sum(np.diff(comp, axis=0) ** 2))
    if grid.d == 2:
        total += float(np.sum(np.diff(comp, axis=1) ** 2))
    return total


def _forward_diff_grad(comp: np.ndarray, grid: GridSpec) -> np.ndarray:
    out = np.zeros_like(comp)
    d = np.diff(comp, axis=0)
    out[:-1] -= d
    out[1:] += d
    if grid.d == 2:
        d = np.diff(comp, axis=1)
        out[:, :-1] -= d
        out[:, 1:] += d
    return out


def regularizer(xi: np.ndarray, gamma_r: float, grid: GridSpec) -> float:
    """Smoothness penalty: half gamma_r times the weighted sum of squared
    forward differences of each stored component.

    In 1D this is (gamma_r/2) dx sum (xi_{i+1} - xi_i)^2; in 2D both
    difference directions are summed for each component with weight
    (gamma_r/2) dx dy.
    """
    if gamma_r == 0.0:
        return 0.0
    weight = 0.5 * gamma_r * grid.dx * (grid.dy if grid.d == 2 else 1.0)
    if xi.ndim == 2:
        return weight * _forward_diff_energy(xi, grid)
    return weight * sum(_forward_diff_energy(xi[:, :, c], grid)
                        for c in range(xi.shape[2]))


def regularizer_grad(xi: np.ndarray, gamma_r: float,
                     grid: GridSpec) -> np.ndarray:
    """Gradient of :func:`regularizer`: the graph-Laplacian action."""
    if gamma_r == 0.0:
        return np.zeros_like(xi)
    weight = gamma_r * grid.dx * (grid.dy if grid.d == 2 else 1.0)
    if xi.ndim == 2:
        return weight * _forward_diff_grad(xi, grid)
    return weight * np.stack(
        [_forward_diff_grad(xi[:, :, c], grid) for c in range(xi.shape[2])],
        axis=2)


def add_noise(obs: ObservationSet, gamma_n: float, seed: int,
              floor: float = 0.01) -> ObservationSet:
    """Uniform U[-0.5, 0.5] noise scaled by gamma_n on every observed entry.

    Densities are thresholded at `floor` after perturbation; fluxes are
    perturbed without thresholding; endpoint densities are untouched.
    Deterministic per seed (PCG64 via numpy default_rng). Draw order is
    rho, mx, then my for each observation in sequence.
    """
    if gamma_n < 0:
        raise ValueError("gamma_n must be nonnegative")
    if gamma_n == 0.0:
        return obs
    rng = np.random.default_rng(seed)
    noisy = []
    for ob in obs:
        rho = np.maximum(
            ob.eta.rho + gamma_n * rng.uniform(-0.5, 0.5, ob.eta.rho.shape),
            floor)
        mx = ob.eta.mx + gamma_n * rng.uniform(-0.5, 0.5, ob.eta.mx.shape)
        my = ob.eta.my
        if my is not None:
            my = my + gamma_n * rng.uniform(-0.5, 0.5, my.shape)
        noisy.append(Observation(StateField(rho, mx, my), ob.mu0, ob.mu1))
    return ObservationSet(tuple(noisy))


def _metric_sq(delta: np.ndarray) -> float:
    """Squared Frobenius mass of a stored metric field; g_xy counts twice."""
    if delta.ndim == 2:
        return float(np.sum(delta**2))
    return float(np.sum(delta[:, :, 0] ** 2) + 2.0 * np.sum(delta[:, :, 1] ** 2)
                 + np.sum(delta[:, :, 2] ** 2))


def relative_error(xi: np.ndarray, xi_true: np.ndarray, kind: str) -> float:
    """sqrt(sum |xi - xi_true|^2 / sum |xi_true|^2), per-cell norms by kind.

    Obstacles use the plain entrywise 2-norm; metrics use the per-cell
    Frobenius norm (off-diagonal counted twice in 2D).
    """
    if xi.shape != xi_true.shape:
        raise ValueError(f"shape mismatch {xi.shape} vs {xi_true.shape}")
    if kind == "obstacle":
        denom = float(np.sum(xi_true**2))
        num = float(np.sum((xi - xi_true) ** 2))
    elif kind == "metric":
        denom = _metric_sq(xi_true)
        num = _metric_sq(xi - xi_true)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    if denom == 0.0:
        raise ValueError("relative error undefined: ground truth is zero")
    return float(np.sqrt(num / denom))


def gauge_adjusted_error(b: np.ndarray, b_true: np.ndarray) -> float:
    """Obstacle error after removing the constant gauge from both fields."""
    return relative_error(b - b.mean(), b_true - b_true.mean(), "obstacle")


def upper_objective(xi: np.ndarray, problem: InverseProblemSpec,
                    fwd_cfg: ForwardConfig | None = None) -> float:
    """Exact upper objective: converged forward solves plus regularizer."""
    value, _ = solve_equilibria(xi, problem, fwd_cfg)
    return value


def solve_equilibria(xi: np.ndarray, problem: InverseProblemSpec,
                     fwd_cfg: ForwardConfig | None = None,
                     contexts: list | None = None,
                     warm: list[StateField] | None = None,
                     ) -> tuple[float, list[StateField]]:
    """Solve every observation's forward problem at xi; return the summed
    fidelity-plus-regularizer value and the equilibria (for warm reuse)."""
    grid = problem.grid
    fwd_cfg = fwd_cfg if fwd_cfg is not None else ForwardConfig()
    total = regularizer(xi, problem.gamma_r, grid)
    etas = []
    for n, obs in enumerate(problem.observations):
        ctx = (contexts[n] if contexts is not None
               else build_context(grid, obs.mu0))
        init = warm[n] if warm is not None else None
        eta, _ = solve_forward(problem.params_for(xi, n), obs.mu0, grid,
                               fwd_cfg, init=init, ctx=ctx)
        total += fidelity(eta, obs.eta, grid)
        etas.append(eta)
    return total, etas

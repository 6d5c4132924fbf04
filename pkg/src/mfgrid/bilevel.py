"""Alternating gradient method for the bilevel inverse problems.

Each outer iteration runs a warm-started K_l-step projected-gradient inner
loop per observation, differentiates through those exact steps in reverse
(unrolling), sums the resulting parameter gradients, and takes a projected
upper-level step on the unknown cost.

One inner step is eta^{i+1} = proj(eta^i - tau_i grad L(eta^i; xi)), so
with P the tangent-space projector (self-adjoint, annihilates range A^T),

    d eta^{i+1} / d eta^i = P (I - tau_i H_i),
    d eta^{i+1} / d xi    = -tau_i P M_i,

where H_i is the energy Hessian and M_i the mixed second derivative at
eta^i. The reverse sweep therefore carries a co-state w backwards: project
w, accumulate -tau_i M_i^T w into the hypergradient, then apply I - tau_i
H_i, and finally add the direct xi-gradient of the upper objective. The
stepsizes replayed are the exact (possibly halved) values the forward
sweep used; anything else would differentiate a different map.

Upper-level constraint sets: obstacles are zero-mean (projection subtracts
the mean, which also fixes the constant gauge the equilibrium cannot see);
metrics are per-cell symmetric with eigenvalues floored at eps, with
optionally a mask of cells frozen at known values.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .energy import CostParams, energy_hvp, mixed_hvp_metric, mixed_hvp_obstacle
from .errors import SolverError
from .forward import (ForwardConfig, InnerTrajectory, estimate_stepsize,
                      inner_loop, solve_forward)
from .grid import GridSpec, StateField, state_axpy, zeros_state
from .problems import (InverseProblemSpec, fidelity, fidelity_grad,
                       gauge_adjusted_error, regularizer, regularizer_grad,
                       relative_error, solve_equilibria)
from .projection import build_context, project_tangent

__all__ = [
    "BilevelConfig", "HypergradState", "OuterTrace",
    "unrolled_hypergradient", "project_obstacle", "project_metric",
    "apply_fixed_mask", "project_unknown", "initial_state", "run_agm",
]

logger = logging.getLogger(__name__)


@dataclass
class BilevelConfig:
    """Settings for run_agm.

    tau_u is deliberately required: no principled default exists, and the
    shipped experiment configs carry tuned values. tau_l may be "auto",
    which sizes the inner step once, at the initial point, from a power-
    iteration bound on the projected Hessian.

    Every exact_resolve_every outer iterations (0 disables this) the
    forward problems are re-solved to convergence at the current unknown
    before that iteration's inner loops run. The converged value is logged
    as the exact upper objective, and the converged equilibria replace the
    inner loops' warm starts. The replacement is load-bearing, not just
    bookkeeping: a K_l-step inner loop tracks only the fast modes of the
    equilibrium as the unknown moves, so on a purely warm-chained iterate
    the slow modes stay frozen at whatever the chain last carried. A
    hypergradient unrolled through such a chain steers those modes of the
    unknown with stale information, which in practice shows up as either
    unbounded drift or a limit cycle of the reconstruction error. The
    periodic re-solve pins the chain back onto the lower-level solution
    manifold before the next unrolled window.
    """

    k_u: int
    tau_u: float
    k_l: int = 5
    tau_l: float | str = "auto"
    exact_resolve_every: int = 10
    exact_cfg: ForwardConfig = dc_field(
        default_factory=lambda: ForwardConfig(tol=1e-8))

    def __post_init__(self):
        if self.k_u < 1 or self.k_l < 1:
            raise ValueError("k_u and k_l must be at least 1")
        if self.tau_u <= 0:
            raise ValueError("tau_u must be positive")
        if isinstance(self.tau_l, str) and self.tau_l != "auto":
            raise ValueError(f'tau_l must be positive or "auto", got {self.tau_l!r}')
        if not isinstance(self.tau_l, str) and self.tau_l <= 0:
            raise ValueError("tau_l must be positive")
        if self.exact_resolve_every < 0:
            raise ValueError("exact_resolve_every must be nonnegative (0 = never)")


@dataclass
class HypergradState:
    """Resumable state of an AGM run at the top of outer iteration k_u.

    best_xi/best_score live here rather than in the trace so a resumed run
    keeps ranking new iterates against the whole history.
    """

    k_u: int
    xi: np.ndarray
    warm: list[StateField]
    tau_l: float
    best_xi: np.ndarray | None = None
    best_score: float = np.inf
    best_error: float | None = None


@dataclass
class OuterTrace:
    """Per-outer-iteration history; columns mirror the exported CSV."""

    k_u: list[int] = dc_field(default_factory=list)
    upper_objective_approx: list[float] = dc_field(default_factory=list)
    upper_objective_exact: list[float | None] = dc_field(default_factory=list)
    relative_error: list[float | None] = dc_field(default_factory=list)
    stationarity: list[float] = dc_field(default_factory=list)
    wall_time_s: list[float] = dc_field(default_factory=list)
    best_xi: np.ndarray | None = None
    best_error: float | None = None

    def append(self, k, approx, exact, err, stat, wall):
        self.k_u.append(k)
        self.upper_objective_approx.append(approx)
        self.upper_objective_exact.append(exact)
        self.relative_error.append(err)
        self.stationarity.append(stat)
        self.wall_time_s.append(wall)


def project_obstacle(b: np.ndarray) -> np.ndarray:
    """Projection onto zero-mean obstacles: subtract the mean."""
    return b - b.mean()


def project_metric(g: np.ndarray, eps: float) -> np.ndarray:
    """Frobenius-nearest per-cell symmetric field with eigenvalues >= eps.

    1D metrics (2-d storage) are clipped at eps directly. 2D metrics
    (stored as g_xx, g_xy, g_yy per cell) are floored through the per-cell
    eigen decomposition, in closed form for the 2x2 symmetric case.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if g.ndim == 2:
        return np.maximum(g, eps)
    gxx, gxy, gyy = g[:, :, 0], g[:, :, 1], g[:, :, 2]
    half_tr = 0.5 * (gxx + gyy)
    radius = np.sqrt((0.5 * (gxx - gyy)) ** 2 + gxy**2)
    lo, hi = half_tr - radius, half_tr + radius
    lo_f, hi_f = np.maximum(lo, eps), np.maximum(hi, eps)
    # Spectral projectors: A = hi*P+ + lo*P-, P+ = (A - lo I)/(2 radius).
    # Where radius ~ 0 the cell is (near-)isotropic and flooring the trace
    # suffices; the threshold only switches between algebraically equal
    # branches, so no discontinuity is introduced.
    safe = radius > 1e-300
    coef = 0.5 * (hi_f - lo_f) / np.where(safe, radius, 1.0)
    out = np.empty_like(g)
    out[:, :, 0] = np.where(safe, lo_f + coef * (gxx - lo), hi_f)
    out[:, :, 1] = np.where(safe, coef * gxy, 0.0)
    out[:, :, 2] = np.where(safe, lo_f + coef * (gyy - lo), hi_f)
    return out


def apply_fixed_mask(g: np.ndarray, known_values: np.ndarray,
                     mask: np.ndarray) -> np.ndarray:
    """Overwrite masked cells of g with the known values."""
    if mask.shape != g.shape[:2] or known_values.shape != g.shape:
        raise ValueError("mask/known_values shapes do not match g")
    out = g.copy()
    out[mask] = known_values[mask]
    return out


def project_unknown(xi: np.ndarray, problem: InverseProblemSpec) -> np.ndarray:
    """The constraint projection for the problem's unknown."""
    if problem.kind == "obstacle":
        return project_obstacle(xi)
    g = project_metric(xi, problem.eps_spd)
    if problem.fixed_mask is not None:
        g = apply_fixed_mask(g, problem.fixed_values, problem.fixed_mask)
    return g


def unrolled_hypergradient(trajectory: InnerTrajectory, params: CostParams,
                           upper_grad_eta: StateField,
                           upper_grad_xi: np.ndarray | None,
                           mu0: np.ndarray, grid: GridSpec, ctx,
                           kind: str) -> np.ndarray:
    """Reverse-mode gradient of the upper objective through the inner loop.

    Args:
        trajectory: iterates and effective stepsizes from inner_loop.
        params: lower-level costs at the current unknown.
        upper_grad_eta: gradient of the upper objective in the final
            iterate (for the fidelity, cell_weight * (eta - observed)).
        upper_grad_xi: direct parameter gradient of the upper objective
            (regularizer term), or None for zero.
        mu0: initial density of this observation.
        grid, ctx: discretization and its projection context.
        kind: "obstacle" or "metric", selecting the mixed derivative.

    Returns:
        The parameter-shaped hypergradient estimate.
    """
    k_l = len(trajectory.states) - 1
    if len(trajectory.stepsizes) != k_l:
        raise ValueError("trajectory stepsizes do not match its states")
    if kind == "obstacle":
        result = np.zeros(grid.shape_spatial)
    elif kind == "metric":
        result = np.zeros(grid.shape_metric)
    else:
        raise ValueError(f"unknown kind {kind!r}")

    w = upper_grad_eta
    for i in range(k_l - 1, -1, -1):
        w = project_tangent(w, ctx)
        eta_i = trajectory.states[i]
        tau_i = trajectory.stepsizes[i]
        if kind == "obstacle":
            result -= tau_i * mixed_hvp_obstacle(w, grid)
        else:
            result -= tau_i * mixed_hvp_metric(eta_i, w, params, mu0, grid)
        w = state_axpy(-tau_i, energy_hvp(eta_i, w, params, mu0, grid), w)
    if upper_grad_xi is not None:
        result += upper_grad_xi
    return result


def initial_state(problem: InverseProblemSpec, cfg: BilevelConfig,
                  contexts: list | None = None) -> HypergradState:
    """Fresh AGM state at the projected initial unknown.

    Warm starts are the converged equilibria at that unknown, one forward
    solve per observation, so the very first inner loops already operate
    near the lower-level solution manifold. When tau_l is "auto" the inner
    stepsize is sized by power iteration at the first equilibrium; sizing
    it at a cruder starting point (say, the constant-in-time density)
    would let near-vacuum cells drive the estimate to useless values.
    """
    grid = problem.grid
    if contexts is None:
        contexts = [build_context(grid, obs.mu0) for obs in problem.observations]
    xi = project_unknown(np.array(problem.xi_init, dtype=np.float64), problem)
    warm = []
    for n, obs in enumerate(problem.observations):
        eta, _ = solve_forward(problem.params_for(xi, n), obs.mu0, grid,
                               cfg.exact_cfg, ctx=contexts[n])
        warm.append(eta)
    if cfg.tau_l == "auto":
        tau_l = estimate_stepsize(warm[0], problem.params_for(xi, 0),
                                  problem.observations[0].mu0, grid,
                                  contexts[0])
    else:
        tau_l = float(cfg.tau_l)
    return HypergradState(k_u=0, xi=xi, warm=warm, tau_l=tau_l)


def run_agm(problem: InverseProblemSpec, cfg: BilevelConfig,
            resume: HypergradState | None = None,
            on_iteration=None) -> tuple[np.ndarray, OuterTrace]:
    """Run the alternating gradient method.

    Each outer iteration: optionally re-solve the forward problems to
    convergence at the current unknown (every cfg.exact_resolve_every
    iterations; the result is logged as the exact objective and replaces
    the warm starts), run a K_l-step inner loop per observation from its
    warm start, unroll the hypergradient through those exact steps, and
    take a projected gradient step on the unknown.

    Args:
        problem: observations, unknown kind, constraints, truth if known.
        cfg: outer/inner iteration counts and stepsizes.
        resume: state from a previous run to continue from (its k_u is the
            next iteration executed); None starts fresh.
        on_iteration: optional callback(state, row) invoked after each
            outer iteration with the post-update state and the trace row
            just recorded; used for checkpointing.

    Returns:
        (xi, trace) where xi is the final unknown and trace the history;
        trace.best_xi holds the iterate with the lowest relative error
        (lowest approximate objective when no truth is known).
    """
    grid = problem.grid
    contexts = [build_context(grid, obs.mu0) for obs in problem.observations]
    state = resume if resume is not None else initial_state(problem, cfg, contexts)
    trace = OuterTrace()

    for k_u in range(state.k_u, cfg.k_u):
        t0 = time.perf_counter()
        xi = state.xi
        exact_obj = None
        approx_obj = regularizer(xi, problem.gamma_r, grid)
        reg_grad = (regularizer_grad(xi, problem.gamma_r, grid)
                    if problem.gamma_r > 0 else None)
        hyper = np.zeros_like(xi)
        try:
            if (cfg.exact_resolve_every > 0
                    and k_u % cfg.exact_resolve_every == 0):
                exact_obj, state.warm = solve_equilibria(
                    xi, problem, cfg.exact_cfg, contexts, state.warm)
            for n, obs in enumerate(problem.observations):
                params = problem.params_for(xi, n)
                traj = inner_loop(state.warm[n], params, obs.mu0, grid,
                                  contexts[n], cfg.k_l, state.tau_l)
                eta_last = traj.states[-1]
                approx_obj += fidelity(eta_last, obs.eta, grid)
                hyper += unrolled_hypergradient(
                    traj, params, fidelity_grad(eta_last, obs.eta, grid),
                    None, obs.mu0, grid, contexts[n], problem.kind)
                state.warm[n] = eta_last
        except SolverError as exc:
            raise SolverError(f"outer iteration {k_u}: {exc}") from exc
        if reg_grad is not None:
            hyper += reg_grad
        if problem.kind == "metric" and problem.fixed_mask is not None:
            hyper[problem.fixed_mask] = 0.0

        stationarity = float(np.sum(
            (xi - project_unknown(xi - hyper, problem)) ** 2))
        rel_err = None
        if problem.xi_true is not None:
            rel_err = (gauge_adjusted_error(xi, problem.xi_true)
                       if problem.kind == "obstacle"
                       else relative_error(xi, problem.xi_true, "metric"))

        score = rel_err if rel_err is not None else approx_obj
        if score < state.best_score:
            state.best_score = score
            state.best_xi = xi.copy()
            state.best_error = rel_err

        state.xi = project_unknown(xi - cfg.tau_u * hyper, problem)
        state.k_u = k_u + 1
        row = (k_u, approx_obj, exact_obj, rel_err, stationarity,
               time.perf_counter() - t0)
        trace.append(*row)
        if on_iteration is not None:
            on_iteration(state, row)
        if k_u % 200 == 0:
            logger.info(
                "outer %d: approx objective %.6e, stationarity %.3e%s", k_u,
                approx_obj, stationarity,
                f", relative error {rel_err:.4f}" if rel_err is not None else "")

    trace.best_xi = state.best_xi
    trace.best_error = state.best_error
    return state.xi, trace

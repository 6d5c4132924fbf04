"""Projected gradient solvers for the lower-level transport problem.

solve_forward minimizes the energy over the continuity constraint set with
an accelerated projected-gradient method (FISTA with backtracking and a
function-value restart); inner_loop is the plain fixed-step K-step variant
whose full trajectory the bilevel machinery differentiates through.

Positivity is maintained by rejection: the affine projection cannot keep
the interpolated density positive, so any trial point with min rhobar <= 0
or a nonpositive terminal slice is discarded and the step halved (at most
40 times). Accepted iterates are always feasible and strictly positive
where logs are taken.

All steps use the raw Euclidean metric, matching the weighted gradients
and the Euclidean projection. The reported residual is the norm of
eta - project(eta - tau * grad), measured in the weighted grid norm so its
scale is resolution-independent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .backend import kernels as _k
from .energy import CostParams, EnergyWorkspace, energy_grad, energy_hvp, energy_value
from .errors import PositivityError, SolverError
from .grid import (GridSpec, StateField, state_axpy, state_dot, state_lincomb,
                   state_norm, state_scale, validate_density, zeros_state)
from .projection import (ProjectionContext, build_context, poisson_neumann,
                         project, project_tangent)
from .stagops import adjoint_diff_x, adjoint_diff_y, apply_constraint_op

__all__ = [
    "ForwardConfig", "ConvergenceTrace", "InnerTrajectory",
    "solve_forward", "inner_loop", "default_init", "estimate_stepsize",
]

logger = logging.getLogger(__name__)

# Halving budget per line search. Sized so that the below-roundoff stall
# tests always fire first on real problems: a stepsize of order 1e2 over a
# gradient of order 1e8 reaches the 1e-15 roundoff scale in about 80
# halvings, and 120 leaves a wide margin. Exhausting the budget therefore
# indicates a genuinely broken energy (NaN or inconsistent gradient), for
# which raising is the correct response, rather than a stiff-but-sound
# iterate pinned at the positivity wall, which is classified as stalled.
MAX_HALVINGS = 120
FEAS_TOL = 1e-9
# Armijo sufficient-decrease fraction. The entropy and kinetic terms are not
# globally smooth: where an interpolated density approaches zero with flux
# still crossing it, the energy's curvature grows like 1/density^3 and the
# total decrease available along the gradient direction is capped by the
# kinetic term itself. A majorization test (decrease >= half the quadratic
# model term) then rejects every stepsize the halving budget can reach; the
# classical Armijo test scales its demand with the linear model instead and
# accepts as soon as a fixed fraction of the predicted decrease is realized.
C1_ARMIJO = 1e-4


@dataclass
class ForwardConfig:
    """Settings for solve_forward.

    Attributes:
        tau: initial step size, or "auto" to size it from a power-iteration
            estimate of the projected Hessian norm at a uniform reference
            state. Backtracking adjusts it from there either way.
        max_iters: iteration cap.
        tol: termination threshold on the unit-step projected-gradient
            residual |x - P(x - grad L)| in the weighted grid norm.
        accelerate: FISTA momentum on/off; off gives plain monotone PGD.
    """

    tau: float | str = "auto"
    max_iters: int = 20000
    tol: float = 1e-8
    accelerate: bool = True

    def __post_init__(self):
        if isinstance(self.tau, str):
            if self.tau != "auto":
                raise ValueError(f'tau must be positive or "auto", got {self.tau!r}')
        elif self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class ConvergenceTrace:
    """Per-iteration history of a forward solve; one row per iteration."""

    iteration: list[int] = field(default_factory=list)
    energy: list[float] = field(default_factory=list)
    residual: list[float] = field(default_factory=list)
    stepsize: list[float] = field(default_factory=list)
    converged: bool = False

    def append(self, k: int, f: float, r: float, tau: float):
        self.iteration.append(k)
        self.energy.append(f)
        self.residual.append(r)
        self.stepsize.append(tau)


@dataclass
class InnerTrajectory:
    """K+1 iterates of the fixed-step inner loop plus the step actually taken.

    stepsizes[i] is the (possibly halved) step that produced states[i+1]
    from states[i]; the backward sweep of the hypergradient must replay
    these exact values.
    """

    states: list[StateField]
    stepsizes: list[float]

    def __len__(self) -> int:
        return len(self.states)


def default_init(mu0: np.ndarray, grid: GridSpec) -> StateField:
    """Feasible start: uniform density with the mu0 mismatch carried by flux.

    The density is 1 everywhere, so no interpolated value can start near
    zero no matter how sharply peaked mu0 is (a frozen-mu0 start puts every
    interior cell at the smallest tail value of mu0, where the entropy
    term's curvature stalls the line search). The first-slice continuity
    defect (1 - mu0)/dt is absorbed by a flux field m = grad psi with
    div m = (mu0 - 1)/dt, solvable because both densities carry unit mass.
    Later slices are uniform-to-uniform and need no flux.
    """
    eta = zeros_state(grid)
    rho = np.ones(grid.shape_rho)
    psi = poisson_neumann((mu0 - 1.0) / grid.dt, grid)[:, :, None]
    mx = eta.mx
    mx[:, :, 0] = adjoint_diff_x(psi, grid.dx)[:, :, 0]
    my = eta.my
    if my is not None:
        my[:, :, 0] = adjoint_diff_y(psi, grid.dy)[:, :, 0]
    return StateField(rho, mx, my)


# Relative positivity margin for accepted iterates, a small multiple of
# machine epsilon. It must sit above projection roundoff (O(eps * scale))
# but no higher: a strong obstacle makes the equilibrium density decay like
# exp(-b / entropy weight), which can genuinely reach 1e-13 of the peak, and
# any floor inside that physical range turns a solvable stiff problem into
# a line-search failure when the iterate needs to settle below the floor.
POS_MARGIN = 32.0 * np.finfo(float).eps


def _positive(eta: StateField, mu0: np.ndarray) -> bool:
    """Strict positivity with a relative safety margin.

    Bare > 0 is not enough for an iterate the solver will step from: the
    affine constraint projection perturbs every entry by O(eps * scale),
    so a cell sitting within roundoff of zero makes every subsequent
    trial step infeasible no matter how small its stepsize, and the line
    search halves itself to death. The margin is a few decades below any
    density floating point can track through the projection, so it only
    rejects numerically fragile iterates.
    """
    bars = _k.interp_t(eta.rho, mu0)
    floor = POS_MARGIN * max(1.0, float(bars.max()))
    if eta.rho[:, :, -1].min() <= floor:
        return False
    return float(bars.min()) > floor


def estimate_stepsize(eta: StateField, params: CostParams, mu0: np.ndarray,
                      grid: GridSpec, ctx: ProjectionContext,
                      iters: int = 30) -> float:
    """0.9 / lambda_max(P H P) at eta, by deterministic power iteration.

    The constant-start vector is projected onto the constraint tangent
    space first, so the estimate reflects curvature along feasible
    directions only.
    """
    ws = EnergyWorkspace()
    v = StateField(np.ones(grid.shape_rho), np.ones(grid.shape_mx),
                   np.ones(grid.shape_my) if grid.d == 2 else None)
    v = project_tangent(v, ctx)
    nv = state_norm(v)
    if nv == 0.0:
        return 1.0
    v = state_scale(v, 1.0 / nv)
    lam = 1.0
    for _ in range(iters):
        hv = project_tangent(energy_hvp(eta, v, params, mu0, grid, ws), ctx)
        lam = max(state_dot(v, hv), 1e-300)
        nhv = state_norm(hv)
        if nhv == 0.0:
            break
        v = state_scale(hv, 1.0 / nhv)
    return 0.9 / lam


def _backtracked_step(x: StateField, fx: float, g: StateField, tau: float,
                      params: CostParams, mu0: np.ndarray, grid: GridSpec,
                      ctx: ProjectionContext, k: int):
    """One projected step from x with halving until the quadratic model
    majorizes the energy and the trial is strictly positive.

    Returns (trial, f_trial, tau_accepted, shrink, expand_ok, measurable,
    stalled).

    Acceptance is the majorization test. If the halving budget runs out
    without it ever holding, the largest trial that realized an Armijo
    fraction of its predicted decrease is returned instead, with shrink
    set. That fallback is what keeps barrier corners survivable: where an
    interpolated density approaches zero with flux still crossing it, the
    energy's curvature grows like 1/density^3, the decrease available
    along the gradient direction is capped by the kinetic term, and no
    stepsize in the budget can satisfy majorization even though most of
    them make real progress. The fallback must not govern the convergent
    tail, though: accepting Armijo-only steps there parks the stepsize at
    the edge of stability and the residual orbits just above tight
    tolerances, which is why majorization is tried at every rung first.

    shrink tells the caller the accepted step overshot the local
    curvature, so the next iteration should start from half its stepsize.

    expand_ok reports whether a doubled stepsize is worth trying next
    iteration. Two cases justify it: the measured curvature along the
    accepted step shows the quadratic model is loose by a clear margin
    (quadratic term above roundoff and four times the actual energy gap),
    or the stepsize was halved to keep the density positive (the
    positivity boundary moves with the iterate, so a shrink it forced
    carries no curvature information and must not pin the stepsize down
    for good). Without the curvature gate, unconditional re-doubling keeps
    probing steps whose overshoot is too small to measure but large enough
    to feed the stiffest eigenmode, and the residual orbits the minimizer
    instead of converging.

    measurable reports whether the accepted step's quadratic term stood
    clear of roundoff, i.e. whether the acceptance decision carried any
    information; the caller uses it to remember the last trustworthy
    stepsize scale.

    stalled reports that the iterate is pinned against the double-
    precision representability wall: a rung was rejected even though its
    step is no larger than the projection's own roundoff, so no stepsize
    can produce a different trial. A strong obstacle makes the exact
    equilibrium drain cells to exp(-b / entropy weight) of the peak, which
    can be hundreds of decades below the positivity floor; once the
    iterate hugs the floor with flux still crossing those cells, a
    roundoff-sized density kick changes the energy by far more than the
    acceptance slack and every rung fails. The rejection requirement
    matters: a merely collapsed stepsize also produces sub-noise trials,
    but those pass the tests and must keep being accepted so the caller's
    stepsize-recovery logic can double out of the collapse.
    """
    # The acceptance slack only absorbs roundoff in the two energy sums.
    # Anything larger lets overshooting steps through near the optimum,
    # where each slack-sized energy bump keeps the iterate orbiting the
    # minimizer instead of settling onto it.
    slack = 64.0 * np.finfo(float).eps * (1.0 + abs(fx))
    noise_sq = (32.0 * np.finfo(float).eps) ** 2 * max(1.0, state_dot(x, x))
    gg = None
    pos_halved = False
    fallback = None
    stalled = False
    for _ in range(MAX_HALVINGS):
        trial = project(state_axpy(-tau, g, x), ctx)
        positive = _positive(trial, mu0)
        if positive:
            step = state_axpy(-1.0, x, trial)
            try:
                f_trial = energy_value(trial, params, mu0, grid)
            except PositivityError:
                positive = False
        if not positive:
            pos_halved = True
            if gg is None:
                gg = state_dot(g, g)
            if tau * tau * gg <= noise_sq:
                # Even the raw step x - tau*g is smaller than projection
                # roundoff, yet the trial still loses positivity: the
                # iterate itself sits at the wall and halving is pointless.
                stalled = True
                break
            tau *= 0.5
            continue
        lin = state_dot(g, step)
        gap = f_trial - fx - lin
        sq = state_dot(step, step)
        quad = 0.5 * sq / tau
        measurable = quad > 8.0 * slack
        if gap <= quad + slack:
            expand_ok = pos_halved or (measurable and gap <= 0.25 * quad)
            return trial, f_trial, tau, False, expand_ok, measurable, False
        if fallback is None and f_trial <= fx + C1_ARMIJO * lin + slack:
            fallback = (trial, f_trial, tau, measurable)
        if quad <= slack or sq <= noise_sq:
            # The model terms have shrunk below measurement noise (or the
            # step norm has bottomed out at projection roundoff); further
            # halving cannot produce a trustworthy comparison. With an
            # Armijo-passing trial on record, that emergency step is
            # strictly better than the sub-roundoff perturbation reached
            # here: this is how barrier corners are survived, where the
            # energy's cubic terms make majorization unattainable at every
            # stepsize that still moves the iterate. The fallback exit
            # must not wait for the halving budget: the budget is sized
            # for gradients pinned at the positivity wall and the rungs
            # between the noise floor and its exhaustion are all identical
            # sub-roundoff trials.
            if fallback is not None:
                break
            if quad <= slack:
                return trial, f_trial, tau, False, pos_halved, False, False
            # This noise-sized trial was still rejected; smaller stepsizes
            # reproduce the same trial.
            stalled = True
            break
        tau *= 0.5
    if fallback is not None:
        trial, f_trial, tau, measurable = fallback
        return trial, f_trial, tau, True, False, measurable, False
    if stalled:
        return x, fx, tau, False, False, False, True
    raise SolverError(
        f"line search failed after {MAX_HALVINGS} halvings at iteration {k} "
        f"(tau={tau:.3e}, energy={fx:.6e}); the energy may be unbounded or "
        "the gradient inconsistent")


def solve_forward(params: CostParams, mu0: np.ndarray, grid: GridSpec,
                  cfg: ForwardConfig | None = None,
                  init: StateField | None = None,
                  ctx: ProjectionContext | None = None,
                  ) -> tuple[StateField, ConvergenceTrace]:
    """Minimize the energy over the continuity constraint set.

    Args:
        params: costs; params.mu1 is the terminal target.
        mu0: initial density.
        grid: discretization.
        cfg: solver settings (defaults if None).
        init: optional feasible starting point; defaults to the constant-
            in-time density with zero flux.
        ctx: optional prebuilt projection context for this (grid, mu0).

    Returns:
        (eta, trace): the iterate with the lowest residual seen (feasible,
        positive) and the full iteration history; trace.converged records
        whether the residual tolerance was met. A converged run stops at
        the first iterate under the tolerance, so the returned iterate is
        the final one; on a max_iters exit the two can differ, because an
        accelerated method's residual is not monotone and the last iterate
        may sit on a momentum bounce well above the best one found.

    Raises:
        ValueError: init is infeasible or not positive.
        SolverError: the line search stalled.
    """
    cfg = cfg if cfg is not None else ForwardConfig()
    params.validate(grid)
    validate_density(mu0, grid, "mu0")
    if ctx is None:
        ctx = build_context(grid, mu0)

    if init is None:
        x = default_init(mu0, grid)
    else:
        init.validate(grid)
        feas = np.linalg.norm(apply_constraint_op(init, mu0, grid))
        if feas > 1e-6 * (1.0 + np.linalg.norm(mu0 / grid.dt)):
            raise ValueError(f"init violates the constraint (|A eta - c| = {feas:.3e})")
        if not _positive(init, mu0):
            raise ValueError("init has nonpositive interpolated or terminal density")
        x = init

    ws = EnergyWorkspace()
    fx = energy_value(x, params, mu0, grid, ws)
    if cfg.tau == "auto":
        # Size the first step at a uniform reference state, where the
        # curvature is O(gamma) per cell. The actual start may contain
        # near-vacuum cells whose entropy curvature gamma_i / rho_bar makes
        # the worst-case bound uselessly small; backtracking owns
        # correctness, this choice only decides where the doubling starts.
        ref = StateField(np.ones(grid.shape_rho), np.zeros(grid.shape_mx),
                         np.zeros(grid.shape_my) if grid.d == 2 else None)
        tau = estimate_stepsize(ref, params, mu0, grid, ctx)
    else:
        tau = float(cfg.tau)
    trace = ConvergenceTrace()

    y, fy = x, fx
    t_mom = 1.0
    tau_good = None  # stepsize at the last acceptance clear of roundoff
    best_x, best_fx, best_res = x, fx, np.inf

    for k in range(cfg.max_iters):
        if cfg.accelerate:
            gy = energy_grad(y, params, mu0, grid, ws)
            z, fz, tau, shrink, expand, measured, stalled = _backtracked_step(
                y, fy, gy, tau, params, mu0, grid, ctx, k)
            # Restart on a stall at the extrapolated point, on an energy
            # increase, or on the gradient test (the step moving against
            # the gradient at y). The energy test alone stops working near
            # the optimum, where energy differences drown in double-
            # precision roundoff while the momentum ripple keeps the
            # residual orbiting above tight tolerances.
            if stalled or fz > fx or state_dot(gy, state_axpy(-1.0, x, z)) > 0.0:
                gx = energy_grad(x, params, mu0, grid, ws)
                z, fz, tau, shrink, expand, measured, stalled = _backtracked_step(
                    x, fx, gx, tau, params, mu0, grid, ctx, k)
                t_mom = 1.0
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom**2))
            # Extrapolate with the largest damping of the momentum
            # coefficient that keeps the interpolated density positive.
            # Cells sitting near zero overshoot on extrapolation long
            # before the bulk does; zeroing the momentum whenever one of
            # them trips would degrade the method to plain gradient
            # descent, so the coefficient is halved instead and the
            # momentum sequence kept. Any combination is feasible because
            # the constraint set is affine.
            beta = (t_mom - 1.0) / t_next
            y, fy = z, fz
            if beta > 0.0:
                for _ in range(12):
                    cand = state_lincomb(1.0 + beta, z, -beta, x)
                    if _positive(cand, mu0):
                        y = cand
                        fy = energy_value(y, params, mu0, grid, ws)
                        break
                    beta *= 0.5
                else:
                    # Even a vanishing extrapolation trips a cell pinned
                    # at zero; restart the momentum sequence from here.
                    t_next = 1.0
            t_mom = t_next
            x, fx = z, fz
        else:
            gx = energy_grad(x, params, mu0, grid, ws)
            z, fz, tau, shrink, expand, measured, stalled = _backtracked_step(
                x, fx, gx, tau, params, mu0, grid, ctx, k)
            x, fx = z, fz
            y, fy = x, fx

        # Termination measures |x - P(x - grad L)| in the weighted grid
        # norm. The constraint set is affine, so this map is exactly
        # linear in the stepsize it uses; evaluating it at the adaptive
        # backtracked tau would let the test degenerate whenever
        # backtracking shrinks the step, hence the fixed unit step here.
        gr = energy_grad(x, params, mu0, grid, ws)
        step = state_axpy(-1.0, x, project(state_axpy(-1.0, gr, x), ctx))
        res = state_norm(step, grid)
        trace.append(k, fx, res, tau)
        if res < best_res:
            best_x, best_fx, best_res = x, fx, res
        if res <= cfg.tol:
            trace.converged = True
            break
        if stalled:
            # The line search found the iterate pinned against the
            # double-precision representability wall (see
            # _backtracked_step); no stepsize can produce a trial that
            # differs from the iterate by more than projection roundoff.
            # Stop and report rather than burn the remaining budget
            # re-deriving the same rejection.
            logger.warning(
                "forward solve stalled at iteration %d: every reachable "
                "step is below projection roundoff (residual %.3e, best "
                "%.3e); the equilibrium likely contains cells below "
                "double-precision reach", k, res, best_res)
            break
        # Shrink the stepsize when the accepted step overshot the local
        # curvature (Armijo passed, majorization failed). Otherwise grow it
        # when the last step showed measurable room, or when it sits far
        # below the last trustworthy scale. The latter heals a collapse: a
        # marginally positive extrapolation can force dozens of positivity
        # halvings in one step, after which every trial is a sub-roundoff
        # perturbation that can never demonstrate room on its own, and
        # without the memory of tau_good the solver would crawl at that
        # stepsize forever.
        # A fallback step is an emergency exit from a barrier corner, not a
        # trustworthy stepsize scale; letting it into tau_good would strand
        # the recovery threshold at the corner's microscopic stepsize and
        # freeze the solve there, since the sub-noise steps that follow can
        # never demonstrate room to expand on their own.
        if measured and not shrink:
            tau_good = tau
        if shrink:
            tau *= 0.5
        elif expand or (tau_good is not None and tau < 0.25 * tau_good):
            tau *= 2.0

    logger.info("forward solve: %d iterations, energy %.6e, residual %.3e, %s",
                len(trace.iteration), best_fx, best_res,
                "converged" if trace.converged else "max_iters reached")
    return best_x, trace


def inner_loop(eta_start: StateField, params: CostParams, mu0: np.ndarray,
               grid: GridSpec, ctx: ProjectionContext, k_l: int,
               tau_l: float) -> InnerTrajectory:
    """K_l fixed-step projected gradient steps, recording every iterate.

    Each step is project(eta - tau * grad); if the result loses positivity
    the step for that iteration only is halved deterministically, down to
    the roundoff scale of the iterate if necessary, and the halved value
    recorded. The trajectory and stepsizes are exactly what the
    hypergradient backward sweep replays.

    An iterate pinned against the representability wall (positivity lost
    even for steps below projection roundoff; see _backtracked_step) takes
    an identity step with stepsize 0.0 recorded, so the loop stays
    replayable instead of failing: the backward factors I - 0*H and the
    0-weighted mixed term are exact for the executed (identity) map.
    """
    if k_l < 0:
        raise ValueError("k_l must be nonnegative")
    if tau_l <= 0:
        raise ValueError("tau_l must be positive")
    ws = EnergyWorkspace()
    states = [eta_start]
    steps: list[float] = []
    eta = eta_start
    for i in range(k_l):
        g = energy_grad(eta, params, mu0, grid, ws)
        noise_sq = ((32.0 * np.finfo(float).eps) ** 2
                    * max(1.0, state_dot(eta, eta)))
        gg = state_dot(g, g)
        tau = tau_l
        for _ in range(MAX_HALVINGS):
            trial = project(state_axpy(-tau, g, eta), ctx)
            if _positive(trial, mu0):
                break
            if tau * tau * gg <= noise_sq:
                trial = eta
                tau = 0.0
                break
            tau *= 0.5
        else:
            raise SolverError(
                f"inner loop lost positivity at step {i} even after "
                f"{MAX_HALVINGS} halvings (tau={tau:.3e})")
        eta = trial
        states.append(eta)
        steps.append(tau)
    return InnerTrajectory(states, steps)

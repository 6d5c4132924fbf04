"""Forward and inverse solvers for discrete potential mean-field games.

The forward problem minimizes a convex transport energy over densities and
fluxes on a staggered space-time grid, subject to the discrete continuity
equation; its minimizer is the equilibrium of the corresponding game. The
inverse problems recover an unknown spatial obstacle or anisotropic metric
from one or more observed equilibria by differentiating through a fixed
number of projected-gradient steps of the forward solver.

Quick start::

    import numpy as np
    from mfgrid import (GridSpec, CostParams, ForwardConfig, solve_forward,
                        identity_metric, recipes)

    grid = GridSpec(n_x=32, n_y=32, n_t=8)
    mu0 = recipes.gaussian_density(grid, (-0.25, 0.0), (0.08, 0.08))
    mu1 = recipes.gaussian_density(grid, (0.25, 0.0), (0.08, 0.08))
    params = CostParams(g=identity_metric(grid),
                        b=np.zeros(grid.shape_spatial),
                        gamma_i=0.1, gamma_t=5.0, mu1=mu1)
    eta, trace = solve_forward(params, mu0, grid, ForwardConfig(tol=1e-8))

Hot numerical kernels have a compiled implementation with a pure-NumPy
fallback; `mfgrid.active_backend()` reports which one is loaded, and the
environment variable MFGRID_PURE_PYTHON=1 forces the fallback.
"""

from . import recipes
from .backend import active_backend
from .bilevel import (BilevelConfig, HypergradState, OuterTrace,
                      apply_fixed_mask, initial_state, project_metric,
                      project_obstacle, project_unknown, run_agm,
                      unrolled_hypergradient)
from .config import ExperimentConfig, load_config, parse_config
from .energy import (CostParams, EnergyWorkspace, energy_grad, energy_hvp,
                     energy_value, metric_min_eigenvalues,
                     mixed_hvp_metric, mixed_hvp_obstacle)
from .errors import (ConfigError, FormatError, MfgridError, PositivityError,
                     SolverError)
from .fieldfile import (load_agm_state, read_field, read_state,
                        save_agm_state, write_field, write_state)
from .forward import (ConvergenceTrace, ForwardConfig, InnerTrajectory,
                      default_init, estimate_stepsize, inner_loop,
                      solve_forward)
from .grid import (FIELD_KINDS, GridSpec, StateField, field_shape,
                   inner_product, norm, state_axpy, state_copy, state_dot,
                   state_lincomb, state_norm, state_scale, state_to_vec,
                   validate_density, validate_spatial, vec_to_state,
                   zeros_state)
from .kkt import (KktPoint, assemble_kkt_jacobian, kkt_residual,
                  kkt_residual_norm, recover_multiplier)
from .problems import (InverseProblemSpec, Observation, ObservationSet,
                       add_noise, fidelity, fidelity_grad,
                       gauge_adjusted_error, identity_metric, regularizer,
                       regularizer_grad, relative_error, solve_equilibria,
                       upper_objective)
from .projection import (ProjectionContext, apply_constraint, build_context,
                         project, project_tangent)

__version__ = "0.1.0"

__all__ = [
    "GridSpec", "StateField", "FIELD_KINDS", "field_shape", "inner_product",
    "norm", "zeros_state", "state_copy", "state_scale", "state_axpy",
    "state_lincomb", "state_dot", "state_norm", "state_to_vec",
    "vec_to_state", "validate_spatial", "validate_density",
    "ProjectionContext", "build_context", "project", "project_tangent",
    "apply_constraint",
    "CostParams", "EnergyWorkspace", "energy_value", "energy_grad",
    "energy_hvp", "mixed_hvp_obstacle", "mixed_hvp_metric",
    "metric_min_eigenvalues",
    "ForwardConfig", "ConvergenceTrace", "InnerTrajectory", "default_init",
    "estimate_stepsize", "solve_forward", "inner_loop",
    "KktPoint", "kkt_residual", "kkt_residual_norm", "recover_multiplier",
    "assemble_kkt_jacobian",
    "BilevelConfig", "HypergradState", "OuterTrace", "project_obstacle",
    "project_metric", "apply_fixed_mask", "project_unknown",
    "unrolled_hypergradient", "initial_state", "run_agm",
    "Observation", "ObservationSet", "InverseProblemSpec", "identity_metric",
    "fidelity", "fidelity_grad", "regularizer", "regularizer_grad",
    "add_noise", "relative_error", "gauge_adjusted_error", "upper_objective",
    "solve_equilibria",
    "read_field", "write_field", "read_state", "write_state",
    "save_agm_state", "load_agm_state",
    "ExperimentConfig", "load_config", "parse_config",
    "MfgridError", "ConfigError", "PositivityError", "SolverError",
    "FormatError",
    "recipes", "active_backend",
]

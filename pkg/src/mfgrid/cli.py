"""Command-line interface.

Subcommands:
    generate-data     solve forward problems under a known cost, optionally
                      add noise, and write observations + manifest
    forward           one forward solve under the configured truth cost
    inverse-obstacle  recover an obstacle from observations on disk
    inverse-metric    recover a metric from observations on disk
    evaluate          compare an estimate FieldFile against a truth FieldFile

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O or
file-format error.

Every run writes its fully resolved configuration beside its outputs.
Outputs are deterministic given the config and seed: rerunning a command
reproduces every file byte for byte, except the wall_time_s column of the
outer trace, which reports measured time.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bilevel import BilevelConfig, run_agm
from .config import ExperimentConfig, dump_toml, load_config
from .energy import CostParams
from .errors import ConfigError, FormatError, PositivityError, SolverError
from .fieldfile import (load_agm_state, read_field, read_state,
                        save_agm_state, write_field, write_state)
from .forward import solve_forward
from .grid import GridSpec, validate_density
from .kkt import KktPoint, kkt_residual_norm, recover_multiplier
from .problems import (InverseProblemSpec, Observation, ObservationSet,
                       add_noise, gauge_adjusted_error, identity_metric,
                       relative_error)
from .projection import build_context
from .recipes import left_end_mask

__all__ = ["main"]

logger = logging.getLogger(__name__)

TRACE_HEADER = ("k_u,upper_objective_approx,upper_objective_exact,"
                "relative_error,stationarity,wall_time_s")
FORWARD_TRACE_HEADER = "iteration,energy,residual,stepsize"
CHECKPOINT_NAME = "checkpoint.mfgc"


def _fmt(value) -> str:
    """Full-precision, locale-independent cell text; None becomes empty."""
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _ensure_out(path_str: str) -> Path:
    out = Path(path_str)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(cfg: ExperimentConfig, out: Path):
    (out / "resolved_config.toml").write_text(dump_toml(cfg.resolved))


def _forward_trace_csv(path: Path, trace):
    rows = [FORWARD_TRACE_HEADER]
    for i, e, r, s in zip(trace.iteration, trace.energy, trace.residual,
                          trace.stepsize):
        rows.append(f"{i},{_fmt(e)},{_fmt(r)},{_fmt(s)}")
    path.write_text("\n".join(rows) + "\n")


def _build_cost(cfg: ExperimentConfig, grid: GridSpec, truth: np.ndarray,
                mu1: np.ndarray) -> CostParams:
    p = cfg.resolved["problem"]
    if cfg.kind == "obstacle":
        return CostParams(g=identity_metric(grid), b=truth,
                          gamma_i=p["gamma_i"], gamma_t=p["gamma_t"], mu1=mu1)
    return CostParams(g=truth, b=np.zeros(grid.shape_spatial),
                      gamma_i=p["gamma_i"], gamma_t=p["gamma_t"], mu1=mu1)


def _build_endpoints(cfg: ExperimentConfig, grid: GridSpec):
    """(mu0, mu1) arrays for every configured observation."""
    pairs = []
    for n, spec in enumerate(cfg.observation_specs()):
        base = f"data.observations.{n}"
        mu0 = cfg.build_density(spec["mu0"], grid, f"{base}.mu0")
        mu1 = cfg.build_density(spec["mu1"], grid, f"{base}.mu1")
        try:
            validate_density(mu0, grid, f"{base}.mu0")
            validate_density(mu1, grid, f"{base}.mu1")
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        pairs.append((mu0, mu1))
    return pairs


def _tolerance_ladder(tol: float) -> list[float]:
    """Decade schedule of residual tolerances ending at tol.

    Observations must sit at the equilibrium far more accurately than the
    unknown-recovery runs that consume them: the slowest density modes
    (those a strong obstacle drains) keep moving long after the residual
    looks small, and data frozen mid-relaxation encodes a state no
    obstacle reproduces, which caps the attainable inversion error. A
    single cold solve at a tight tolerance spends most of its budget in
    long momentum ripples; restarting at each decade (warm, with fresh
    momentum and stepsize) reaches the same residual in far fewer
    iterations.
    """
    if tol <= 0.0 or tol >= 1e-5:
        return [tol]
    ladder = []
    rung = 1e-5
    while rung > tol * (1.0 + 1e-12):
        ladder.append(rung)
        rung *= 0.1
    ladder.append(tol)
    return ladder


def cmd_generate_data(args) -> int:
    cfg = load_config(args.config, args.override)
    if args.seed is not None:
        cfg.resolved["data"]["seed"] = args.seed
    out = _ensure_out(args.out)
    grid = cfg.grid()
    truth = cfg.build_truth(grid)
    data = cfg.resolved["data"]

    observations = []
    per_obs_meta = []
    for n, (mu0, mu1) in enumerate(_build_endpoints(cfg, grid)):
        ctx = build_context(grid, mu0)
        params = _build_cost(cfg, grid, truth, mu1)
        eta = None
        rung_meta = []
        trace_rows = []
        offset = 0
        for rung_tol in _tolerance_ladder(data["tol"]):
            eta, trace = solve_forward(params, mu0, grid,
                                       cfg.forward_config(tol=rung_tol),
                                       init=eta, ctx=ctx)
            trace_rows += [(offset + i, e, r, s)
                           for i, e, r, s in zip(trace.iteration, trace.energy,
                                                 trace.residual, trace.stepsize)]
            offset = trace_rows[-1][0] + 1 if trace_rows else 0
            rung_meta.append({
                "tol": rung_tol,
                "converged": trace.converged,
                "iterations": len(trace.iteration),
                "final_residual": min(trace.residual),
            })
            if not trace.converged:
                # A stalled or budget-bound rung returns its best iterate;
                # tighter rungs would re-derive the same stop.
                break
        observations.append(Observation(eta, mu0, mu1))
        rows = [FORWARD_TRACE_HEADER]
        rows += [f"{i},{_fmt(e)},{_fmt(r)},{_fmt(s)}"
                 for i, e, r, s in trace_rows]
        (out / f"obs{n}_trace.csv").write_text("\n".join(rows) + "\n")
        per_obs_meta.append({
            "converged": rung_meta[-1]["converged"],
            "iterations": offset,
            "final_energy": trace.energy[-1],
            "final_residual": rung_meta[-1]["final_residual"],
            "tolerance_ladder": rung_meta,
        })
        logger.info("observation %d solved: %d iterations, residual %.3e",
                    n, per_obs_meta[-1]["iterations"],
                    per_obs_meta[-1]["final_residual"])

    obs_set = ObservationSet(tuple(observations))
    if data["noise"] > 0:
        obs_set = add_noise(obs_set, data["noise"], data["seed"])

    truth_name = "truth_b.mfgf" if cfg.kind == "obstacle" else "truth_g.mfgf"
    truth_kind = "spatial" if cfg.kind == "obstacle" else "metric"
    write_field(out / truth_name, truth, truth_kind)
    for n, obs in enumerate(obs_set):
        write_state(out, f"obs{n}", obs.eta)
        write_field(out / f"obs{n}_mu0.mfgf", obs.mu0, "spatial")
        write_field(out / f"obs{n}_mu1.mfgf", obs.mu1, "spatial")

    manifest = {
        "format": "mfgrid-data",
        "version": 1,
        "kind": cfg.kind,
        "grid": {"n_x": grid.n_x, "n_y": grid.n_y, "n_t": grid.n_t},
        "seed": data["seed"],
        "noise": data["noise"],
        "forward_tol": data["tol"],
        "n_observations": len(obs_set),
        "truth_file": truth_name,
        "observations": per_obs_meta,
    }
    _write_json(out / "manifest.json", manifest)
    _write_resolved(cfg, out)
    print(f"wrote {len(obs_set)} observation(s) to {out}")
    return 0


def cmd_forward(args) -> int:
    cfg = load_config(args.config, args.override)
    out = _ensure_out(args.out)
    grid = cfg.grid()
    truth = cfg.build_truth(grid)
    mu0, mu1 = _build_endpoints(cfg, grid)[0]
    ctx = build_context(grid, mu0)
    params = _build_cost(cfg, grid, truth, mu1)
    eta, trace = solve_forward(params, mu0, grid, cfg.forward_config(),
                               ctx=ctx)

    phi = recover_multiplier(eta, params, mu0, grid, ctx)
    kkt = kkt_residual_norm(KktPoint(eta, phi, params), mu0, grid)

    write_state(out, "solution", eta)
    _forward_trace_csv(out / "trace.csv", trace)
    _write_json(out / "report.json", {
        "converged": trace.converged,
        "iterations": trace.iteration[-1] if trace.iteration else 0,
        "final_energy": trace.energy[-1],
        "final_residual": trace.residual[-1],
        "kkt_residual": kkt,
    })
    _write_resolved(cfg, out)
    print(f"forward solve finished: residual {trace.residual[-1]:.3e}, "
          f"KKT residual {kkt:.3e}")
    return 0


def _read_manifest(data_dir: Path) -> dict:
    path = data_dir / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc
    if manifest.get("format") != "mfgrid-data":
        raise FormatError(f"{path} is not an mfgrid data manifest")
    return manifest


def _load_observations(data_dir: Path, manifest: dict,
                       grid: GridSpec) -> ObservationSet:
    observations = []
    for n in range(manifest["n_observations"]):
        eta = read_state(data_dir, f"obs{n}", grid)
        mu0, kind0, _ = read_field(data_dir / f"obs{n}_mu0.mfgf")
        mu1, kind1, _ = read_field(data_dir / f"obs{n}_mu1.mfgf")
        if kind0 != "spatial" or kind1 != "spatial":
            raise FormatError(f"observation {n}: endpoint files must hold "
                              "spatial fields")
        observations.append(Observation(eta, mu0, mu1))
    return ObservationSet(tuple(observations))


def _trace_row_text(row) -> str:
    k, approx, exact, err, stat, wall = row
    return ",".join([str(k), _fmt(approx), _fmt(exact), _fmt(err),
                     _fmt(stat), _fmt(wall)])


def _prepare_trace_file(path: Path, resume_k: int):
    """Start or truncate trace.csv so rows continue from resume_k."""
    if resume_k > 0 and path.exists():
        lines = path.read_text().splitlines()
        kept = [line for line in lines[1:]
                if line and int(line.split(",", 1)[0]) < resume_k]
        path.write_text("\n".join([TRACE_HEADER] + kept) + "\n")
    else:
        path.write_text(TRACE_HEADER + "\n")


def cmd_inverse(args, want_kind: str) -> int:
    cfg = load_config(args.config, args.override)
    if cfg.kind != want_kind:
        raise ConfigError(f"this command inverts for the {want_kind}, but "
                          f"problem.kind = '{cfg.kind}'")
    out = _ensure_out(args.out)
    data_dir = Path(args.data)
    grid = cfg.grid()

    manifest = _read_manifest(data_dir)
    if manifest["kind"] != want_kind:
        raise ConfigError(f"data in {data_dir} was generated for a "
                          f"{manifest['kind']} problem")
    mg = manifest["grid"]
    if (mg["n_x"], mg["n_y"], mg["n_t"]) != (grid.n_x, grid.n_y, grid.n_t):
        raise ConfigError(
            f"grid mismatch: config says {grid.n_x}x{grid.n_y}x{grid.n_t}, "
            f"data was generated at {mg['n_x']}x{mg['n_y']}x{mg['n_t']}")

    obs_set = _load_observations(data_dir, manifest, grid)
    truth = None
    truth_path = data_dir / manifest["truth_file"]
    if truth_path.exists():
        truth, _, _ = read_field(truth_path)

    p = cfg.resolved["problem"]
    fixed_mask = fixed_values = None
    if p["fix_left_end"]:
        if truth is None:
            raise ConfigError("problem.fix_left_end needs the truth metric "
                              "in the data directory")
        fixed_mask = left_end_mask(grid)
        fixed_values = truth
    try:
        problem = InverseProblemSpec(
            kind=want_kind, grid=grid, observations=obs_set,
            gamma_i=p["gamma_i"], gamma_t=p["gamma_t"],
            xi_init=cfg.build_init(grid, truth), gamma_r=p["gamma_r"],
            fixed_mask=fixed_mask, fixed_values=fixed_values,
            eps_spd=p["eps_spd"], xi_true=truth)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    b = cfg.resolved["bilevel"]
    bcfg = BilevelConfig(k_u=b["k_u"], tau_u=b["tau_u"], k_l=b["k_l"],
                         tau_l=b["tau_l"],
                         exact_resolve_every=b["exact_resolve_every"],
                         exact_cfg=cfg.forward_config())

    checkpoint_path = out / CHECKPOINT_NAME
    resume_state = None
    if args.resume:
        if not checkpoint_path.exists():
            raise ConfigError(f"--resume given but {checkpoint_path} "
                              "does not exist")
        resume_state = load_agm_state(checkpoint_path, grid)
        if resume_state.k_u >= b["k_u"]:
            raise ConfigError(f"checkpoint is already at outer iteration "
                              f"{resume_state.k_u}; nothing left to run")
        logger.info("resuming from outer iteration %d", resume_state.k_u)

    trace_path = out / "trace.csv"
    _prepare_trace_file(trace_path, resume_state.k_u if resume_state else 0)
    every = b["checkpoint_every"]

    with open(trace_path, "a") as trace_fh:
        def on_iteration(state, row):
            trace_fh.write(_trace_row_text(row) + "\n")
            trace_fh.flush()
            if every and state.k_u % every == 0:
                save_agm_state(checkpoint_path, state, grid)

        xi, trace = run_agm(problem, bcfg, resume=resume_state,
                            on_iteration=on_iteration)

    xi_kind = "spatial" if want_kind == "obstacle" else "metric"
    write_field(out / "xi_final.mfgf", xi, xi_kind)
    if trace.best_xi is not None:
        write_field(out / "xi_best.mfgf", trace.best_xi, xi_kind)

    report = {
        "kind": want_kind,
        "outer_iterations": b["k_u"],
        "final_stationarity": trace.stationarity[-1],
        "final_objective_approx": trace.upper_objective_approx[-1],
    }
    if truth is not None:
        report["final_error"] = trace.relative_error[-1]
        report["best_error"] = trace.best_error
    _write_json(out / "report.json", report)
    _write_resolved(cfg, out)

    if truth is not None:
        print(f"inverse solve finished: relative error "
              f"{trace.relative_error[-1]:.4f} (best {trace.best_error:.4f})")
    else:
        print(f"inverse solve finished: approximate objective "
              f"{trace.upper_objective_approx[-1]:.6e}")
    return 0


def cmd_evaluate(args) -> int:
    estimate, est_kind, _ = read_field(args.estimate)
    truth, truth_kind, _ = read_field(args.truth)
    want = "spatial" if args.kind == "obstacle" else "metric"
    if est_kind != want or truth_kind != want:
        raise ConfigError(f"evaluating a {args.kind} needs two {want} "
                          f"fields, got {est_kind} and {truth_kind}")
    if estimate.shape != truth.shape:
        raise ConfigError(f"shape mismatch: estimate {estimate.shape}, "
                          f"truth {truth.shape}")
    report = {"kind": args.kind,
              "relative_error": relative_error(estimate, truth, args.kind)}
    if args.kind == "obstacle":
        report["gauge_adjusted_error"] = gauge_adjusted_error(estimate, truth)
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = _ensure_out(args.out)
        (out / "report.json").write_text(text + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfgrid",
        description="Forward and inverse solvers for discrete potential "
                    "mean-field games")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="stderr logging threshold")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p, with_seed=False):
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="override a config key (repeatable, dotted keys)")
        if with_seed:
            p.add_argument("--seed", type=int, default=None,
                           help="override data.seed")

    p = sub.add_parser("generate-data",
                       help="solve forward problems and write observations")
    add_config_flags(p, with_seed=True)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("forward", help="one forward solve under the truth")
    add_config_flags(p)
    p.set_defaults(func=cmd_forward)

    for name, kind in (("inverse-obstacle", "obstacle"),
                       ("inverse-metric", "metric")):
        p = sub.add_parser(name, help=f"recover the {kind} from data")
        add_config_flags(p)
        p.add_argument("--data", required=True,
                       help="directory written by generate-data")
        p.add_argument("--resume", action="store_true",
                       help="continue from the checkpoint in --out")
        p.set_defaults(func=lambda a, _k=kind: cmd_inverse(a, _k))

    p = sub.add_parser("evaluate",
                       help="compare an estimate against a truth field")
    p.add_argument("--estimate", required=True, help="estimate FieldFile")
    p.add_argument("--truth", required=True, help="truth FieldFile")
    p.add_argument("--kind", required=True, choices=["obstacle", "metric"])
    p.add_argument("--out", default=None,
                   help="also write report.json here")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("%s", exc)
        return 2
    except (SolverError, PositivityError) as exc:
        logger.error("solver failure: %s", exc)
        return 3
    except (FormatError, OSError) as exc:
        logger.error("I/O failure: %s", exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())

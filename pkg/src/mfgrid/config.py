"""Experiment configuration: TOML in, validated settings out.

A config file has seven sections (grid, problem, data, truth, init,
forward, bilevel). Unknown keys anywhere are an error, so typos fail
fast instead of silently running defaults. Every run writes the fully
resolved configuration (user values merged over defaults) next to its
outputs, so a result folder records exactly what produced it.

Recipe tables pick named constructions from mfgrid.recipes, e.g.

    [truth]
    recipe = "gaussian"
    gamma_b = 0.1

    [[data.observations]]
    mu0 = { recipe = "gaussian", center = [-0.25, 0.0], sigma = [0.08, 0.08] }
    mu1 = { recipe = "gaussian", center = [0.25, 0.0], sigma = [0.08, 0.08] }

`recipe = "file"` loads a FieldFile instead; relative paths resolve
against the config file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import recipes
from .errors import ConfigError
from .fieldfile import read_field
from .forward import ForwardConfig
from .grid import GridSpec

__all__ = [
    "ExperimentConfig", "load_config", "parse_config", "apply_overrides",
    "dump_toml",
]

_REQUIRED = object()

_SCHEMA = {
    "grid": {"n_x": _REQUIRED, "n_y": 1, "n_t": _REQUIRED},
    "problem": {
        "kind": _REQUIRED,        # "obstacle" | "metric"
        "gamma_i": _REQUIRED,
        "gamma_t": _REQUIRED,
        "gamma_r": 0.0,
        "eps_spd": 1e-6,
        "fix_left_end": False,    # metric only: pin i_x = 0 to the truth
    },
    "data": {
        "seed": 0,
        "noise": 0.0,             # gamma_n; 0 keeps observations exact
        "tol": 1e-8,              # forward tolerance when generating data
        "observations": _REQUIRED,
    },
    "truth": None,                # recipe table, checked per problem kind
    "init": None,                 # recipe table, checked per problem kind
    "forward": {
        "tau": "auto",
        "max_iters": 20000,
        "tol": 1e-8,
        "accelerate": True,
    },
    "bilevel": {
        "k_u": _REQUIRED,
        "k_l": 5,
        "tau_u": _REQUIRED,
        "tau_l": "auto",
        "exact_resolve_every": 10,
        "checkpoint_every": 0,    # 0 disables checkpoints
    },
}

# recipe name -> {key: default or _REQUIRED}
_DENSITY_RECIPES = {
    "gaussian": {"center": _REQUIRED, "sigma": _REQUIRED, "floor": 1e-3},
    "uniform": {},
    "cosine": {"offset": _REQUIRED, "amplitude": _REQUIRED,
               "frequency": _REQUIRED},
    "file": {"path": _REQUIRED},
}

_OBSTACLE_RECIPES = {
    "gaussian": {"gamma_b": _REQUIRED, "center": [0.0, 0.0],
                 "sigma": [0.08, 0.1]},
    "two_bar": {"height": 0.5},
    "ring": {"height": 0.5, "r_in": 0.15, "r_out": 0.3,
             "gap_half_angle": 0.35},
    "clover": {"height": 0.5, "scale": 0.35},
    "zero": {},
    "random": {"scale": 0.1, "seed": -1},   # -1 means reuse data.seed
    "file": {"path": _REQUIRED},
}

_METRIC_RECIPES = {
    "cosine": {},
    "cubic": {},
    "sin2d": {},
    "constant": {"value": _REQUIRED},
    "truth": {},
    "file": {"path": _REQUIRED},
}


def _check_table(raw, schema: dict, path: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must be a table")
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key {path}.{unknown[0]}")
    out = {}
    for key, default in schema.items():
        if key in raw:
            out[key] = raw[key]
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key {path}.{key}")
        else:
            out[key] = default
    return out


def _check_recipe(raw, table: dict, path: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must be a table")
    name = raw.get("recipe")
    if name not in table:
        known = ", ".join(sorted(table))
        raise ConfigError(f"{path}.recipe must be one of: {known}")
    out = _check_table({k: v for k, v in raw.items() if k != "recipe"},
                       table[name], path)
    return {"recipe": name, **out}


def _check_number(value, path: str, minimum=None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path} must be a number")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path} must be >= {minimum}")
    return float(value)


def _check_int(value, path: str, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path} must be an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path} must be >= {minimum}")
    return value


def _check_stepsize(value, path: str):
    if value == "auto":
        return "auto"
    return _check_number(value, path, minimum=0.0)


@dataclass
class ExperimentConfig:
    """Validated settings plus builders for the arrays they describe."""

    resolved: dict
    base_dir: Path

    # -- typed accessors -------------------------------------------------

    @property
    def kind(self) -> str:
        return self.resolved["problem"]["kind"]

    def grid(self) -> GridSpec:
        g = self.resolved["grid"]
        d = 1 if g["n_y"] == 1 else 2
        return GridSpec(n_x=g["n_x"], n_y=g["n_y"], n_t=g["n_t"], d=d)

    def forward_config(self, tol: float | None = None) -> ForwardConfig:
        f = self.resolved["forward"]
        return ForwardConfig(tau=f["tau"], max_iters=f["max_iters"],
                             tol=f["tol"] if tol is None else tol,
                             accelerate=f["accelerate"])

    def observation_specs(self) -> list[dict]:
        return self.resolved["data"]["observations"]

    # -- array builders ---------------------------------------------------

    def _load_file(self, spec: dict, grid: GridSpec, want_kind: str,
                   path: str) -> np.ndarray:
        file_path = Path(spec["path"])
        if not file_path.is_absolute():
            file_path = self.base_dir / file_path
        array, kind, d = read_field(file_path)
        if kind != want_kind or d != grid.d:
            raise ConfigError(
                f"{path}: {file_path} holds a {d}-dimensional {kind} field, "
                f"expected a {grid.d}-dimensional {want_kind} field")
        want_shape = grid.shape_metric if want_kind == "metric" \
            else grid.shape_spatial
        if array.shape != want_shape:
            raise ConfigError(f"{path}: {file_path} has shape {array.shape}, "
                              f"expected {want_shape}")
        return array

    def build_density(self, spec: dict, grid: GridSpec,
                      path: str) -> np.ndarray:
        name = spec["recipe"]
        if name == "gaussian":
            center, sigma = spec["center"], spec["sigma"]
            if len(center) != grid.d or len(sigma) != grid.d:
                raise ConfigError(f"{path}: center and sigma need "
                                  f"{grid.d} entries")
            return recipes.gaussian_density(grid, center, sigma,
                                            floor=spec["floor"])
        if name == "uniform":
            return recipes.uniform_density(grid)
        if name == "cosine":
            return recipes.cosine_density(grid, spec["offset"],
                                          spec["amplitude"],
                                          spec["frequency"])
        return self._load_file(spec, grid, "spatial", path)

    def build_truth(self, grid: GridSpec) -> np.ndarray:
        spec = self.resolved["truth"]
        name = spec["recipe"]
        if self.kind == "obstacle":
            if name == "gaussian":
                return recipes.obstacle_gaussian(grid, spec["gamma_b"],
                                                 spec["center"], spec["sigma"])
            if name == "two_bar":
                return recipes.obstacle_two_bar(grid, spec["height"])
            if name == "ring":
                return recipes.obstacle_ring(grid, spec["height"],
                                             spec["r_in"], spec["r_out"],
                                             spec["gap_half_angle"])
            if name == "clover":
                return recipes.obstacle_clover(grid, spec["height"],
                                               spec["scale"])
            if name == "zero":
                return np.zeros(grid.shape_spatial)
            if name == "random":
                raise ConfigError("truth.recipe = 'random' is only valid "
                                  "under [init]")
            return self._load_file(spec, grid, "spatial", "truth")
        if name == "cosine":
            return recipes.metric_cosine_1d(grid)
        if name == "cubic":
            return recipes.metric_cubic_1d(grid)
        if name == "sin2d":
            return recipes.metric_sin_2d(grid)
        if name == "constant":
            return recipes.constant_metric(grid, spec["value"])
        if name == "truth":
            raise ConfigError("truth.recipe = 'truth' is only valid "
                              "under [init]")
        return self._load_file(spec, grid, "metric", "truth")

    def build_init(self, grid: GridSpec,
                   truth: np.ndarray | None) -> np.ndarray:
        spec = self.resolved["init"]
        name = spec["recipe"]
        if self.kind == "obstacle":
            if name == "zero":
                return np.zeros(grid.shape_spatial)
            if name == "random":
                seed = spec["seed"]
                if seed < 0:
                    seed = self.resolved["data"]["seed"]
                rng = np.random.default_rng(seed)
                return rng.uniform(-spec["scale"], spec["scale"],
                                   size=grid.shape_spatial)
            if name == "file":
                return self._load_file(spec, grid, "spatial", "init")
            raise ConfigError(f"init.recipe = '{name}' is not a valid "
                              "obstacle initialization")
        if name == "truth":
            if truth is None:
                raise ConfigError("init.recipe = 'truth' needs a truth "
                                  "metric (generate data with one, or point "
                                  "[truth] at a file)")
            return truth.copy()
        return self.build_truth_like(spec, grid)

    def build_truth_like(self, spec: dict, grid: GridSpec) -> np.ndarray:
        """Build a metric array from a recipe table other than [truth]."""
        name = spec["recipe"]
        if name == "cosine":
            return recipes.metric_cosine_1d(grid)
        if name == "cubic":
            return recipes.metric_cubic_1d(grid)
        if name == "sin2d":
            return recipes.metric_sin_2d(grid)
        if name == "constant":
            return recipes.constant_metric(grid, spec["value"])
        return self._load_file(spec, grid, "metric", "init")


def _validate(raw: dict, path_hint: str = "config") -> dict:
    top = _check_table(raw, _SCHEMA, path_hint)

    out = {}
    out["grid"] = _check_table(top["grid"], _SCHEMA["grid"], "grid")
    for key in ("n_x", "n_y", "n_t"):
        out["grid"][key] = _check_int(out["grid"][key], f"grid.{key}",
                                      minimum=1)

    out["problem"] = _check_table(top["problem"], _SCHEMA["problem"],
                                  "problem")
    kind = out["problem"]["kind"]
    if kind not in ("obstacle", "metric"):
        raise ConfigError("problem.kind must be 'obstacle' or 'metric'")
    for key in ("gamma_i", "gamma_t", "gamma_r"):
        out["problem"][key] = _check_number(out["problem"][key],
                                            f"problem.{key}", minimum=0.0)
    out["problem"]["eps_spd"] = _check_number(out["problem"]["eps_spd"],
                                              "problem.eps_spd", minimum=0.0)
    if not isinstance(out["problem"]["fix_left_end"], bool):
        raise ConfigError("problem.fix_left_end must be a boolean")

    out["data"] = _check_table(top["data"], _SCHEMA["data"], "data")
    out["data"]["seed"] = _check_int(out["data"]["seed"], "data.seed",
                                     minimum=0)
    out["data"]["noise"] = _check_number(out["data"]["noise"], "data.noise",
                                         minimum=0.0)
    out["data"]["tol"] = _check_number(out["data"]["tol"], "data.tol",
                                       minimum=0.0)
    obs = out["data"]["observations"]
    if not isinstance(obs, list) or not obs:
        raise ConfigError("data.observations must be a non-empty array "
                          "of tables")
    checked_obs = []
    for i, entry in enumerate(obs):
        entry = _check_table(entry, {"mu0": _REQUIRED, "mu1": _REQUIRED},
                             f"data.observations.{i}")
        entry["mu0"] = _check_recipe(entry["mu0"], _DENSITY_RECIPES,
                                     f"data.observations.{i}.mu0")
        entry["mu1"] = _check_recipe(entry["mu1"], _DENSITY_RECIPES,
                                     f"data.observations.{i}.mu1")
        checked_obs.append(entry)
    out["data"]["observations"] = checked_obs

    recipe_table = _OBSTACLE_RECIPES if kind == "obstacle" \
        else _METRIC_RECIPES
    for section in ("truth", "init"):
        if top[section] is None:
            raise ConfigError(f"missing required section [{section}]")
        out[section] = _check_recipe(top[section], recipe_table, section)

    out["forward"] = _check_table(top["forward"], _SCHEMA["forward"],
                                  "forward")
    out["forward"]["tau"] = _check_stepsize(out["forward"]["tau"],
                                            "forward.tau")
    out["forward"]["max_iters"] = _check_int(out["forward"]["max_iters"],
                                             "forward.max_iters", minimum=1)
    out["forward"]["tol"] = _check_number(out["forward"]["tol"],
                                          "forward.tol", minimum=0.0)
    if not isinstance(out["forward"]["accelerate"], bool):
        raise ConfigError("forward.accelerate must be a boolean")

    out["bilevel"] = _check_table(top["bilevel"], _SCHEMA["bilevel"],
                                  "bilevel")
    out["bilevel"]["k_u"] = _check_int(out["bilevel"]["k_u"], "bilevel.k_u",
                                       minimum=1)
    out["bilevel"]["k_l"] = _check_int(out["bilevel"]["k_l"], "bilevel.k_l",
                                       minimum=1)
    out["bilevel"]["tau_u"] = _check_number(out["bilevel"]["tau_u"],
                                            "bilevel.tau_u", minimum=0.0)
    out["bilevel"]["tau_l"] = _check_stepsize(out["bilevel"]["tau_l"],
                                              "bilevel.tau_l")
    out["bilevel"]["exact_resolve_every"] = _check_int(
        out["bilevel"]["exact_resolve_every"],
        "bilevel.exact_resolve_every", minimum=0)
    out["bilevel"]["checkpoint_every"] = _check_int(
        out["bilevel"]["checkpoint_every"],
        "bilevel.checkpoint_every", minimum=0)

    # Cross-field checks that need several sections at once.
    if out["grid"]["n_y"] == 1 and kind == "obstacle" \
            and out["truth"]["recipe"] in ("two_bar", "ring", "clover"):
        raise ConfigError(f"truth.recipe = '{out['truth']['recipe']}' "
                          "needs a two-dimensional grid")
    if out["problem"]["fix_left_end"] and kind != "metric":
        raise ConfigError("problem.fix_left_end applies only to "
                          "metric problems")
    return out


def parse_config(text: str, base_dir: Path | str = ".") -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    return ExperimentConfig(_validate(raw), Path(base_dir))


def load_config(path: Path | str,
                overrides: list[str] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path} is not valid TOML: {exc}") from exc
    if overrides:
        raw = apply_overrides(raw, overrides)
    return ExperimentConfig(_validate(raw), path.parent)


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply KEY=VALUE pairs with dotted keys; values parse as TOML
    literals (strings may omit quotes). Integer segments index arrays."""
    import copy

    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not KEY=VALUE")
        dotted, text = item.split("=", 1)
        segments = dotted.strip().split(".")
        if not all(segments):
            raise ConfigError(f"override '{item}' has an empty key segment")
        try:
            value = tomllib.loads(f"v = {text}")["v"]
        except tomllib.TOMLDecodeError:
            value = text
        node = raw
        for seg in segments[:-1]:
            if isinstance(node, list):
                node = _index_list(node, seg, dotted)
            elif isinstance(node, dict):
                node = node.setdefault(seg, {})
            else:
                raise ConfigError(f"override '{dotted}' descends into a "
                                  "non-table value")
            if not isinstance(node, (dict, list)):
                raise ConfigError(f"override '{dotted}' descends into a "
                                  "non-table value")
        last = segments[-1]
        if isinstance(node, list):
            idx = _list_index(node, last, dotted)
            node[idx] = value
        else:
            node[last] = value
    return raw


def _list_index(node: list, seg: str, dotted: str) -> int:
    try:
        idx = int(seg)
    except ValueError:
        raise ConfigError(f"override '{dotted}': '{seg}' must be an array "
                          "index") from None
    if not 0 <= idx < len(node):
        raise ConfigError(f"override '{dotted}': index {idx} out of range")
    return idx


def _index_list(node: list, seg: str, dotted: str):
    return node[_list_index(node, seg, dotted)]


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    if isinstance(value, dict):
        inner = ", ".join(f"{k} = {_toml_value(v)}" for k, v in value.items())
        return "{" + inner + "}"
    raise TypeError(f"cannot serialize {type(value).__name__} to TOML")


def dump_toml(resolved: dict) -> str:
    """Serialize a resolved config deterministically (schema order)."""
    lines = []
    for section, content in resolved.items():
        if section == "data":
            lines.append("[data]")
            for key, value in content.items():
                if key == "observations":
                    continue
                lines.append(f"{key} = {_toml_value(value)}")
            lines.append("")
            for entry in content["observations"]:
                lines.append("[[data.observations]]")
                for key, value in entry.items():
                    lines.append(f"{key} = {_toml_value(value)}")
                lines.append("")
            continue
        lines.append(f"[{section}]")
        for key, value in content.items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)

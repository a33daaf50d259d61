import json
import os
from typing import Any, Dict, Iterator, List, Optional

from .config import FREE_FORM_KEYS, RUN_CONFIG_SCHEMA, get_default_run_config
from utils import ConfigError, get_logger

logger = get_logger(__name__)


class RunConfig:
    """Resolved, validated run configuration. Blocks are read by attribute or key."""

    def __init__(self, data: Dict[str, Any], source: str = "<defaults>"):
        self.data = data
        self.source = source

    def __getitem__(self, block: str) -> Dict[str, Any]:
        return self.data[block]

    def __getattr__(self, name):
        data = self.__dict__.get("data", {})
        if name in data:
            return data[name]
        raise AttributeError(f"'{type(self).__name__}' object has no attribute '{name}'")

    def __iter__(self) -> Iterator[str]:
        return iter(self.data)

    def get(self, path: str, default: Any = None) -> Any:
        node = self.data
        for part in path.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    @property
    def seed(self) -> int:
        return int(self.data["ensemble"]["seed"])

    def to_dict(self) -> Dict[str, Any]:
        return json.loads(json.dumps(self.data))


class RunConfigManager:
    """
    Loads a JSON run config on top of the defaults table (and an optional preset),
    then validates every value. Nothing is clamped: any violation is a ConfigError
    naming the dotted path of the offending field.
    """

    def __init__(self, config_path: Optional[str] = None, preset: Optional[Dict[str, Any]] = None,
                 seed_override: Optional[int] = None):
        self.config_path = config_path
        self.preset = preset or {}
        self.seed_override = seed_override
        self._default_config = get_default_run_config()
        self.config: Optional[RunConfig] = None

    def load(self) -> RunConfig:
        data = get_default_run_config()
        self._merge(data, self.preset, "")
        source = "<defaults>"
        if self.config_path:
            overrides = self._read_json(self.config_path)
            self._merge(data, overrides, "")
            source = self.config_path
        if self.seed_override is not None:
            data["ensemble"]["seed"] = int(self.seed_override)

        self._validate_settings(data)
        self.config = RunConfig(data, source)
        logger.info(f"Run config loaded from {source}")
        return self.config

    @staticmethod
    def _read_json(path: str) -> Dict[str, Any]:
        if not os.path.exists(path):
            raise ConfigError(path, "config file not found")
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(path, f"invalid JSON at line {e.lineno}: {e.msg}") from e
        if not isinstance(data, dict):
            raise ConfigError(path, "top level must be an object")
        return data

    def _merge(self, target: Dict[str, Any], overrides: Dict[str, Any], prefix: str) -> None:
        """Deep merge that rejects keys absent from the schema."""
        schema = self._schema_at(prefix)
        for key, value in overrides.items():
            path = f"{prefix}.{key}" if prefix else key
            if path in FREE_FORM_KEYS:
                target[key] = value
                continue
            if not isinstance(schema, dict) or key not in schema:
                raise ConfigError(path, "unknown key")
            if isinstance(schema[key], dict):
                if not isinstance(value, dict):
                    raise ConfigError(path, "must be an object")
                self._merge(target[key], value, path)
            else:
                target[key] = value

    @staticmethod
    def _schema_at(prefix: str) -> Any:
        node = RUN_CONFIG_SCHEMA
        if prefix:
            for part in prefix.split("."):
                node = node[part]
        return node

    # ========== Validation ==========

    def _validate_settings(self, data: Dict[str, Any]) -> None:
        self._check_kinds(data, RUN_CONFIG_SCHEMA, "")

        grid = data["grid"]
        self._require_int(grid["n"], "grid.n", minimum=8)
        if grid["n"] & (grid["n"] - 1):
            raise ConfigError("grid.n", "must be a power of two")
        self._require_int(grid["k_max"], "grid.k_max", minimum=1)
        if grid["k_max"] > grid["n"] // 2 - 1:
            raise ConfigError("grid.k_max", f"must be <= n/2 - 1 = {grid['n'] // 2 - 1}")

        physics = data["physics"]
        self._positive(physics["c"], "physics.c")
        self._positive_list(physics["c_list"], "physics.c_list")
        if physics["lambda"] == 0:
            raise ConfigError("physics.lambda", "must be nonzero")

        geometry = data["geometry"]
        self._point(geometry["x0"], "geometry.x0")
        self._positive(geometry["r0"], "geometry.r0")
        if geometry["r0"] >= 0.25:
            raise ConfigError("geometry.r0", "must be < 1/4 so the sphere of radius 2 r0 fits on the torus")
        for key in ("geometry.omega", "control.omega", "reference.omega_gcc"):
            block, name = key.split(".")
            if not isinstance(data[block][name], dict) or "kind" not in data[block][name]:
                raise ConfigError(key, "must be an object with a 'kind' entry")

        for block in ("time", "approx", "maxwell", "control", "absorption", "rescale"):
            self._positive(data[block]["T"], f"{block}.T")
            self._positive(data[block]["dt"], f"{block}.dt")
            if data[block]["dt"] > data[block]["T"]:
                raise ConfigError(f"{block}.dt", "must not exceed the horizon T")

        self._require_int(data["ensemble"]["n_particles"], "ensemble.n_particles", minimum=0)
        self._require_int(data["ensemble"]["seed"], "ensemble.seed", minimum=0)

        maxwell = data["maxwell"]
        self._positive(maxwell["c"], "maxwell.c")
        self._int_list(maxwell["mode"], "maxwell.mode", length=2)
        self._require_int(maxwell["oracle_k"], "maxwell.oracle_k", minimum=1)

        control = data["control"]
        self._require_int(control["k_ctrl"], "control.k_ctrl", minimum=0)
        if control["k_ctrl"] > grid["k_max"]:
            raise ConfigError("control.k_ctrl", f"must be <= grid.k_max = {grid['k_max']}")
        self._require_int(control["time_profiles"], "control.time_profiles", minimum=1)
        for key in ("reg", "bump_radius", "loop_band", "tolerance"):
            self._positive(control[key], f"control.{key}")
        if control["target"] not in ("constant_e", "zero", "random"):
            raise ConfigError("control.target", "must be one of constant_e, zero, random")

        gcc = data["gcc"]
        self._require_int(gcc["n_dirs"], "gcc.n_dirs", minimum=1)
        self._require_int(gcc["n_starts"], "gcc.n_starts", minimum=1)
        self._positive(gcc["L_max"], "gcc.L_max")

        bending = data["bending"]
        self._positive(bending["threshold"], "bending.threshold")
        self._positive(bending["M_bar"], "bending.M_bar")
        self._int_list(bending["samples"], "bending.samples", length=4, minimum=1)
        self._positive(bending["c_factor"], "bending.c_factor")
        self._non_negative(bending["F_extra"], "bending.F_extra")
        self._positive(bending["dt"], "bending.dt")

        reference = data["reference"]
        if reference["case"] not in ("gcc", "strip"):
            raise ConfigError("reference.case", "must be 'gcc' or 'strip'")
        self._require_int(reference["quad_n"], "reference.quad_n", minimum=64)
        for key in ("dt", "T0", "T1_max", "accel_amplitude", "census_speed", "erosion"):
            self._positive(reference[key], f"reference.{key}")
        if len(reference["T_parts"]) != 3:
            raise ConfigError("reference.T_parts", "must list (T1, T2, T3)")
        for i, value in enumerate(reference["T_parts"]):
            self._non_negative(value, f"reference.T_parts[{i}]")
        self._int_list(reference["census"], "reference.census", length=4, minimum=1)
        self._positive_list(reference["c_sweep"], "reference.c_sweep")
        strip = reference["strip"]
        self._int_list(strip["direction"], "reference.strip.direction", length=2)
        self._point(strip["offset"], "reference.strip.offset")
        self._positive(strip["half_width"], "reference.strip.half_width")

        absorption = data["absorption"]
        for key in ("kappa", "R", "epsilon", "tol", "weight_floor", "source_speed"):
            self._positive(absorption[key], f"absorption.{key}")
        self._require_int(absorption["max_iter"], "absorption.max_iter", minimum=1)
        self._require_int(absorption["mu_particles"], "absorption.mu_particles", minimum=2)
        if absorption["mu_particles"] % 2:
            raise ConfigError("absorption.mu_particles", "must be even (velocities are sampled in +/- pairs)")
        for i, value in enumerate(absorption["kappa_scan"]):
            self._positive(value, f"absorption.kappa_scan[{i}]")
        self._require_int(absorption["scan_particles"], "absorption.scan_particles", minimum=1)

        rescale = data["rescale"]
        for i, value in enumerate(rescale["lambda_list"]):
            if value == 0:
                raise ConfigError(f"rescale.lambda_list[{i}]", "must be nonzero")
        self._require_int(rescale["n_particles"], "rescale.n_particles", minimum=1)

    def _check_kinds(self, data: Dict[str, Any], schema: Dict[str, Any], prefix: str) -> None:
        for key, kind in schema.items():
            path = f"{prefix}.{key}" if prefix else key
            value = data[key]
            if path in FREE_FORM_KEYS:
                continue
            if isinstance(kind, dict):
                self._check_kinds(value, kind, path)
            elif kind == "number":
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(path, "must be a number")
                if value != value or value in (float("inf"), float("-inf")):
                    raise ConfigError(path, "must be finite")
            elif kind == "string" and not isinstance(value, str):
                raise ConfigError(path, "must be a string")
            elif kind == "bool" and not isinstance(value, bool):
                raise ConfigError(path, "must be true or false")
            elif kind == "list" and not isinstance(value, list):
                raise ConfigError(path, "must be a list")

    @staticmethod
    def _positive(value: Any, path: str) -> None:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
            raise ConfigError(path, "must be > 0")

    @staticmethod
    def _non_negative(value: Any, path: str) -> None:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
            raise ConfigError(path, "must be >= 0")

    @staticmethod
    def _require_int(value: Any, path: str, minimum: int = None) -> None:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, "must be an integer")
        if minimum is not None and value < minimum:
            raise ConfigError(path, f"must be >= {minimum}")

    def _positive_list(self, values: List[Any], path: str) -> None:
        if not values:
            raise ConfigError(path, "must not be empty")
        for i, value in enumerate(values):
            self._positive(value, f"{path}[{i}]")

    def _int_list(self, values: List[Any], path: str, length: int, minimum: int = None) -> None:
        if len(values) != length:
            raise ConfigError(path, f"must have {length} entries")
        for i, value in enumerate(values):
            self._require_int(value, f"{path}[{i}]", minimum)

    @staticmethod
    def _point(values: List[Any], path: str) -> None:
        if len(values) != 2:
            raise ConfigError(path, "must be a point (x1, x2)")
        for i, value in enumerate(values):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}[{i}]", "must be a number")

    def get(self, path: str, default: Any = None) -> Any:
        if self.config is None:
            self.load()
        return self.config.get(path, default)

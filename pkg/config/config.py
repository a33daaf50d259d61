"""
Centralized configuration for vmtorus.
Contains constants, numerical tolerances and the run-config defaults table.
"""
import copy
from typing import Any, Dict, List


# =============================================================================
# APP INFO
# =============================================================================

class AppInfo:
    APP_NAME = "vmtorus"
    VERSION = "0.5"
    DESCRIPTION = "Desk-scale simulator and verification suite for the 2D relativistic " \
    "Vlasov-Maxwell system on the torus: spectral Maxwell evolution, magnetic bending, " \
    "reference-solution construction and absorption-based transport."
    LICENSE = "MIT License"
    YEAR = "2025"
    LOG_FILE = "vmtorus.log"


# =============================================================================
# NUMERICAL CONSTANTS
# =============================================================================

class GridDefaults:
    N = 64
    K_MAX = 8
    MIN_N = 8


class MaxwellDefaults:
    # d_t rho + div j residual, relative to max |d_t rho| (floored at 1)
    CHARGE_TOLERANCE = 1e-4
    COMPATIBILITY_TOLERANCE = 1e-8
    ZERO_MEAN_TOLERANCE = 1e-10

    APPROX_C_LIST = [10.0, 20.0, 40.0, 80.0]
    APPROX_DT = 1e-3
    APPROX_T = 1.0
    APPROX_ALPHA = 0.5
    APPROX_BETA = 0.5
    SLOPE_RANGE = (-1.3, -0.7)

    ORACLE_C = 0.5
    ORACLE_T = 5.0
    ORACLE_DT = 2e-4
    ORACLE_K = 4
    ORACLE_TOLERANCE = 1e-8
    ENERGY_TOLERANCE = 1e-12


class ControlDefaults:
    REG = 1e-8
    HORIZON = 4.0
    K_CTRL = 2
    DT = 2e-3
    BUMP_RADIUS = 0.12
    BUMP_SPACING = 0.08
    TIME_PROFILES = 4
    LOOP_BAND = 0.05
    RESIDUAL_TOLERANCE = 1e-3
    SUPPORT_TOLERANCE = 1e-12
    CURRENT_DIVERGENCE = 1e-10
    REVERSAL_TOLERANCE = 1e-6


class CharacteristicsDefaults:
    DT = 1e-3
    NONFINITE_LIMIT = 1e300
    GYRO_TOLERANCE = 1e-3
    SPEED_DRIFT_TOLERANCE = 1e-9


class GeometryDefaults:
    N_DIRS = 64
    N_STARTS = 32
    L_MAX = 20.0
    MARCH_STEP_FRACTION = 0.5
    D_CAP = 0.125
    BISECTION_STEPS = 40
    # straight free flights aim at B(x0, 3 r0 / 8); bending adds at most r0 / 8
    BAD_BALL_FACTOR = 0.375
    BETA_FLOOR = 1e-6
    M_CONSTANT = 32.0
    ROTATION_WINDOWS = 3
    PARAMETER_MARGIN = 1.25
    L_SEARCH_MAX = 1e5
    HIT_WINDOW = (0.25, 0.75)
    SAGITTA = 2e-3
    CENSUS_CHUNK = 4096


class ReferenceDefaults:
    QUAD_N = 64
    MOMENT_TOLERANCE = 1e-8
    LCC_TOLERANCE = 1e-6
    ZM_TOLERANCE = 1e-10
    DIVERGENCE_TOLERANCE = 1e-8
    SUPPORT_TOLERANCE = 1e-10
    ACCEL_TOLERANCE = 1e-6
    FLUX_TOLERANCE = 1e-12
    HODGE_TOLERANCE = 1e-9
    FD_STEP = 1e-3
    HD_FRACTION = 0.3
    INNER_FRACTION = 0.5
    OUTER_FRACTION = 0.8
    GCC_SPEED = 4.0
    STRIP_SPEED = 5.0
    WINDOW_GCC = (1.0 / 9.0, 8.0 / 9.0)
    WINDOW_STRIP = (1.0 / 9.0, 8.0 / 9.0)
    WINDOW_MAXWELL = (1.0 / 10.0, 9.0 / 10.0)
    WAIT_LADDER = 1.25
    DEVIATION_RATIO = 0.6
    HOLD_MARGIN = 1.1
    SWEEP_SAMPLES = 32
    COLLOCATION = 64
    REVERSIBILITY_TOLERANCE = 1e-6
    REVERSIBILITY_SAMPLES = 8


class AbsorptionDefaults:
    WEIGHT_FLOOR = 1e-14
    BISECTION_TOL = 1e-10
    SPHERE_TOLERANCE = 1e-9
    # (speed threshold, incidence threshold) of the gamma sets
    GAMMA1 = (0.5, 0.1)
    GAMMA2 = (1.0, 0.125)
    GAMMA3 = (2.0, 0.2)
    UPSILON_OFF = 1.0 / 48.0
    UPSILON_ON = 1.0 / 24.0
    UPSILON2_OFF = 1.0 / 100.0
    UPSILON2_ON = 1.0 / 48.0
    CENSUS_WINDOW = (1.0 / 12.0, 11.0 / 12.0)
    OUTSIDE_FRACTION = 1e-3
    BOOKKEEPING_TOLERANCE = 1e-12
    PUSH_CHUNK = 4096
    FILL_SPEED = 1.0
    KINETIC_ITERATIONS = 2
    MIN_ITERATIONS = 3
    RESIDUAL_RATIO = 4.0
    PIPELINE_TOLERANCE = 1e-8
    # fractions of 2 r0: residual kept on the core, charge bump on the blend ring, patch cut off at the sphere
    PATCH_CORE = 0.5
    PATCH_BLEND = 0.75


class CLIConstants:
    SUBCOMMANDS = [
        "check-geometry", "maxwell-evolve", "approx-sweep", "control-maxwell",
        "bend-verify", "reference-build", "absorb-run", "rescale-check",
    ]
    EXIT_OK = 0
    EXIT_FAILED = 1
    EXIT_CONFIG = 2
    REPORT_FILE = "report.json"
    PROFILES_FILE = "profiles.json"
    JSON_INDENT = 2


# =============================================================================
# RUN CONFIG DEFAULTS
# =============================================================================

_CROSS_OMEGA = {"kind": "cross", "center": [0.5, 0.5], "radius": 0.12, "spacing": 0.08}

_DEFAULT_RUN_CONFIG: Dict[str, Any] = {
    "grid": {"n": GridDefaults.N, "k_max": GridDefaults.K_MAX},
    "physics": {"c": 10.0, "c_list": list(MaxwellDefaults.APPROX_C_LIST), "b0": 1.0, "lambda": 1.0},
    "geometry": {
        "omega": {"kind": "balls", "balls": [[0.5, 0.5, 0.3]]},
        "x0": [0.5, 0.5],
        "r0": 0.1,
    },
    "time": {"T": 1.0, "dt": 1e-3},
    "ensemble": {"n_particles": 1000, "seed": 20240521},
    "approx": {
        "T": MaxwellDefaults.APPROX_T, "dt": MaxwellDefaults.APPROX_DT,
        "alpha": MaxwellDefaults.APPROX_ALPHA, "beta": MaxwellDefaults.APPROX_BETA,
    },
    "maxwell": {
        "c": MaxwellDefaults.ORACLE_C, "T": MaxwellDefaults.ORACLE_T, "dt": MaxwellDefaults.ORACLE_DT,
        "mode": [1, 0], "amplitude": 1.0, "source_amplitude": 0.5, "oracle_k": MaxwellDefaults.ORACLE_K,
    },
    "control": {
        "T": ControlDefaults.HORIZON, "dt": ControlDefaults.DT, "k_ctrl": ControlDefaults.K_CTRL,
        "reg": ControlDefaults.REG, "target": "constant_e", "target_amplitude": 1.0,
        "bump_radius": ControlDefaults.BUMP_RADIUS, "time_profiles": ControlDefaults.TIME_PROFILES,
        "loop_band": ControlDefaults.LOOP_BAND, "tolerance": ControlDefaults.RESIDUAL_TOLERANCE,
        "omega": copy.deepcopy(_CROSS_OMEGA),
    },
    "gcc": {"n_dirs": GeometryDefaults.N_DIRS, "n_starts": GeometryDefaults.N_STARTS, "L_max": GeometryDefaults.L_MAX},
    "bending": {
        "threshold": 0.5, "M_bar": 4.0, "samples": [16, 16, 12, 8], "c_factor": 10.0,
        "F_extra": 0.0, "dt": CharacteristicsDefaults.DT,
    },
    "reference": {
        "case": "strip",
        "quad_n": ReferenceDefaults.QUAD_N,
        "dt": 2e-3,
        "T_parts": [1.0, 4.0, 0.0],
        "T0": 0.5,
        "T1_max": 8.0,
        "accel_amplitude": 40.0,
        "census": [6, 6, 4, 6],
        "census_speed": 4.0,
        "c_sweep": [200.0, 400.0],
        "erosion": 0.02,
        "strip": {"direction": [1, 0], "offset": [0.0, 0.5], "half_width": 0.2},
        "omega_gcc": copy.deepcopy(_CROSS_OMEGA),
    },
    "absorption": {
        "T": 1.0, "dt": 5e-3, "kappa": 1e-3, "R": 4.0, "epsilon": 0.1, "max_iter": 4, "tol": 1e-6,
        "weight_floor": AbsorptionDefaults.WEIGHT_FLOOR, "mu_particles": 2000, "source_speed": 3.0,
        "kappa_scan": [1e-3, 1e-2, 1e-1], "scan_particles": 2000,
    },
    "rescale": {"lambda_list": [1.0, -1.0, 2.0], "T": 0.25, "dt": 2.5e-3, "n_particles": 200},
}


def get_default_run_config() -> Dict[str, Any]:
    """Fresh deep copy of the documented defaults table."""
    return copy.deepcopy(_DEFAULT_RUN_CONFIG)


def schema_of(value: Any) -> Any:
    """Value kind of a default: nested dicts keep their structure."""
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, (int, float)):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, list):
        return "list"
    if isinstance(value, dict):
        return {key: schema_of(item) for key, item in value.items()}
    return "any"


RUN_CONFIG_SCHEMA: Dict[str, Any] = schema_of(_DEFAULT_RUN_CONFIG)

RUN_CONFIG_KEYS: Dict[str, List[str]] = {block: list(keys) for block, keys in _DEFAULT_RUN_CONFIG.items()}

# Free-form blocks: the omega specs are validated by geometry.control_set_from_spec.
FREE_FORM_KEYS = ["geometry.omega", "control.omega", "reference.omega_gcc"]


__all__ = [
    'AppInfo', 'GridDefaults', 'MaxwellDefaults', 'ControlDefaults', 'CharacteristicsDefaults',
    'GeometryDefaults', 'ReferenceDefaults', 'AbsorptionDefaults', 'CLIConstants',
    'get_default_run_config', 'schema_of', 'RUN_CONFIG_SCHEMA', 'RUN_CONFIG_KEYS', 'FREE_FORM_KEYS',
]

"""
Experiment orchestration for vmtorus.
Runs one subcommand pipeline on a resolved RunConfig and collects the
criteria, tables and artifacts into a RunReport.
"""
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import scipy

from config import (AbsorptionDefaults, AppInfo, CLIConstants, ControlDefaults, GeometryDefaults, MaxwellDefaults,
                    ReferenceDefaults)
from controllers import (ReferencePlan, SteeringProblem, ControlBasis, make_bumps, solve_steering, reverse_steering,
                         constant_field_problem, random_target_problem, assemble_reference_strip,
                         assemble_reference_gcc, check_reversibility)
from geometry import (ControlSet, Strip, whole, control_set_from_spec, check_gcc, enumerate_bad_directions,
                      certify_bending, derive_bending_params, verify_bending_lemma)
from particles import (AbsorptionConfig, PicardConfig, TransportRecord, constant_vector, sample_ensemble,
                       make_neutral_fill, compatible_state, fixed_point_solve, kappa_scan, solve_kinetic, rescale_solution,
                       kinetic_residual, residual_rescaled, large_time_pipeline)
from spectral import (GridSpec, ScalarField, VectorField, EMState, SourceMoments, spectral_coeffs, uniform_times,
                      solve_poisson, compute_tilde_fields, evolve_maxwell, field_energy, step_maxwell_rk4,
                      verify_approx_lemma, approx_sweep_source)
from utils import (ConfigError, VMTorusError, ensure_dir, get_logger, log_duration, make_rng, write_csv,
                   write_field_csv, write_field_dump, write_particle_dump)

logger = get_logger(__name__)


def _jsonable(value: Any) -> Any:
    """numpy scalars and arrays to plain JSON values; non-finite floats become null."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, complex):
        return [_jsonable(value.real), _jsonable(value.imag)]
    return value


def versions() -> Dict[str, str]:
    return {"vmtorus": AppInfo.VERSION, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


@dataclass
class RunReport:
    subcommand: str
    config: Dict[str, Any]
    criteria: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    results: Dict[str, Any] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)
    wall_clock: float = 0.0
    versions: Dict[str, str] = field(default_factory=versions)
    error: Optional[Dict[str, str]] = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(c["passed"] for c in self.criteria.values())

    def add_criterion(self, name: str, passed: bool, value: Any = None, threshold: Any = None) -> bool:
        self.criteria[name] = {"passed": bool(passed), "value": value, "threshold": threshold}
        if not passed:
            logger.warning(f"{self.subcommand}: criterion '{name}' failed (value {value}, threshold {threshold})")
        return bool(passed)

    def to_dict(self) -> Dict[str, Any]:
        return _jsonable({"subcommand": self.subcommand, "passed": self.passed, "criteria": self.criteria,
                          "results": self.results, "artifacts": self.artifacts, "wall_clock": self.wall_clock,
                          "versions": self.versions, "error": self.error, "config": self.config})


def exit_code(report: RunReport) -> int:
    if report.error is not None and report.error.get("type") == "ConfigError":
        return CLIConstants.EXIT_CONFIG
    return CLIConstants.EXIT_OK if report.passed else CLIConstants.EXIT_FAILED


class ExperimentRunner:
    """Runs one subcommand on a validated RunConfig and writes its artifacts under out_dir."""

    def __init__(self, config, out_dir: str, threads: int = 1, case: Optional[str] = None):
        self.config = config
        self.out_dir = out_dir
        self.threads = max(1, int(threads))
        self.case = case
        self._runners: Dict[str, Callable[[RunReport], None]] = {
            "check-geometry": self.run_check_geometry,
            "maxwell-evolve": self.run_maxwell_evolve,
            "approx-sweep": self.run_approx_sweep,
            "control-maxwell": self.run_control_maxwell,
            "bend-verify": self.run_bend_verify,
            "reference-build": self.run_reference_build,
            "absorb-run": self.run_absorb_run,
            "rescale-check": self.run_rescale_check,
        }

    def run(self, subcommand: str) -> RunReport:
        if subcommand not in self._runners:
            raise ConfigError("subcommand", f"must be one of {', '.join(CLIConstants.SUBCOMMANDS)}")
        ensure_dir(self.out_dir)
        report = RunReport(subcommand, self.config.to_dict())
        start = time.perf_counter()
        try:
            with log_duration(logger, subcommand):
                self._runners[subcommand](report)
        except VMTorusError as e:
            logger.error(f"{subcommand} failed: {e}", exc_info=True)
            report.error = {"type": type(e).__name__, "message": str(e)}
        report.wall_clock = time.perf_counter() - start
        self._write_report(report)
        logger.info(f"{subcommand}: {'PASS' if report.passed else 'FAIL'} in {report.wall_clock:.2f}s")
        return report

    # ========== Shared Helpers ==========

    @property
    def grid(self) -> GridSpec:
        return GridSpec(int(self.config.grid["n"]), int(self.config.grid["k_max"]))

    def _path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def _csv(self, report: RunReport, name: str, header: Sequence[str], rows) -> None:
        write_csv(self._path(name), header, rows)
        report.artifacts.append(name)

    def _write_report(self, report: RunReport) -> None:
        path = self._path(CLIConstants.REPORT_FILE)
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(report.to_dict(), f, indent=CLIConstants.JSON_INDENT)
            logger.info(f"Report written to {path}")
        except OSError as e:
            logger.error(f"Error writing report: {e}", exc_info=True)

    def _rng(self, experiment: str, purpose: str) -> np.random.Generator:
        return make_rng(self.config.seed, experiment, purpose)

    def _gcc_params(self) -> Dict[str, Any]:
        gcc = self.config.gcc
        return {"n_dirs": int(gcc["n_dirs"]), "n_starts": int(gcc["n_starts"]), "L_max": float(gcc["L_max"])}

    def _strip(self) -> Strip:
        spec = self.config.reference["strip"]
        return Strip(spec["direction"], spec["offset"], float(spec["half_width"]))

    def _case(self) -> str:
        return self.case or self.config.reference["case"]

    def _reference_omega(self) -> ControlSet:
        if self._case() == "strip":
            return self._strip()
        return control_set_from_spec(self.config.reference["omega_gcc"])

    def _build_plan(self, with_sweep: bool) -> ReferencePlan:
        cfg = self.config
        ref, ctrl = cfg.reference, cfg.control
        grid, c, b0 = self.grid, float(cfg.physics["c"]), float(cfg.physics["b0"])
        bumps = make_bumps(int(ref["quad_n"]), c)
        if self._case() == "strip":
            return assemble_reference_strip(
                self._strip(), grid, c, b0, cfg.geometry["x0"], float(cfg.geometry["r0"]), bumps=bumps,
                T0=float(ref["T0"]), T1_max=float(ref["T1_max"]), dt=float(ref["dt"]),
                amplitude=float(ref["accel_amplitude"]), census=ref["census"], v_max=float(ref["census_speed"]),
                c_values=ref["c_sweep"] if with_sweep else (), threads=self.threads)
        basis_params = {"bump_radius": float(ctrl["bump_radius"]), "time_profiles": int(ctrl["time_profiles"]),
                        "loop_band": float(ctrl["loop_band"])}
        return assemble_reference_gcc(
            self._reference_omega(), grid, c, ref["T_parts"], dt=float(ref["dt"]), k_ctrl=int(ctrl["k_ctrl"]),
            reg=float(ctrl["reg"]), amplitude=float(ctrl["target_amplitude"]), bumps=bumps,
            erosion=float(ref["erosion"]), hold_max=float(ref["T1_max"]), census=ref["census"],
            v_max=float(ref["census_speed"]), gcc_params=self._gcc_params(), basis_params=basis_params,
            tolerance=float(ctrl["tolerance"]), threads=self.threads)

    # ========== check-geometry ==========

    def run_check_geometry(self, report: RunReport) -> None:
        cfg = self.config
        params = self._gcc_params()
        omega_spec = cfg.geometry["omega"]
        omega = control_set_from_spec(omega_spec)

        omega_gcc = check_gcc(omega, threads=self.threads, **params)
        torus = check_gcc(whole(), threads=self.threads, **params)
        strip = self._strip()
        strip_gcc = check_gcc(strip, threads=self.threads, **params)
        report.results["gcc"] = {"omega": omega_gcc.to_dict(), "torus": torus.to_dict(),
                                 "strip": strip_gcc.to_dict()}

        report.add_criterion("torus_certified", torus.holds and torus.L == 0.0, torus.L, 0.0)
        parallel = False
        if strip_gcc.witness is not None:
            e = np.asarray(strip_gcc.witness[1], dtype=np.float64)
            cross = abs(e[0] * strip.direction[1] - e[1] * strip.direction[0])
            parallel = bool(cross <= 1e-9 * float(np.linalg.norm(strip.direction)))
        report.add_criterion("strip_refuted_parallel", not strip_gcc.holds and parallel,
                             None if strip_gcc.witness is None else strip_gcc.witness[1])

        balls = omega_spec.get("balls", []) if omega_spec.get("kind") == "balls" else []
        bad = {}
        for x1, x2, r in balls:
            dirs = enumerate_bad_directions((x1, x2), r)
            bad[f"{x1},{x2},{r}"] = [list(d) for d in dirs]
        report.results["bad_directions"] = bad
        if bad:
            rows = [(key, d[0], d[1]) for key, dirs in bad.items() for d in dirs]
            self._csv(report, "bad_directions.csv", ["ball", "p", "q"], rows)

        b0 = float(cfg.physics["b0"])
        grid = self.grid
        b = ScalarField(grid, np.full((grid.n, grid.n), b0))
        cert = certify_bending(b, float(cfg.bending["threshold"]), threads=self.threads, **params)
        report.results["bending_certificate"] = cert.to_dict()
        report.add_criterion("bending_certified", cert.valid, cert.diagnostic or None)
        expected = 0.5 * cert.d * cert.b_lower
        report.add_criterion("bending_gamma", math.isclose(cert.gamma, expected, rel_tol=1e-9, abs_tol=1e-12),
                             cert.gamma, expected)

    # ========== maxwell-evolve ==========

    def _plane_wave(self, grid: GridSpec, mode: Sequence[int], amplitude: float) -> VectorField:
        k1, k2 = int(mode[0]), int(mode[1])
        if (k1, k2) == (0, 0) or max(abs(k1), abs(k2)) > grid.k_max:
            raise ConfigError("maxwell.mode", f"must be a nonzero mode with |k|_inf <= grid.k_max = {grid.k_max}")
        x1, x2 = grid.nodes
        norm = math.hypot(k1, k2)
        wave = amplitude * np.cos(2.0 * np.pi * (k1 * x1 + k2 * x2))
        return VectorField(grid, np.stack([-k2 / norm * wave, k1 / norm * wave]))

    def run_maxwell_evolve(self, report: RunReport) -> None:
        mx = self.config.maxwell
        grid = self.grid
        c, T, dt = float(mx["c"]), float(mx["T"]), float(mx["dt"])
        E0 = self._plane_wave(grid, mx["mode"], float(mx["amplitude"]))
        zero_B = ScalarField(grid, np.zeros((grid.n, grid.n)))
        state0 = EMState(0.0, E0, zero_B, c)

        times = uniform_times(T, dt)
        if times.shape[0] % 2 == 0:
            times = times[:-1]
        x2 = grid.nodes[1]
        pattern = spectral_coeffs(grid, np.stack([np.sin(2.0 * np.pi * x2), np.zeros_like(x2)]))
        profile = float(mx["source_amplitude"]) * np.cos(2.0 * np.pi * times)
        j_hat = profile[:, None, None, None] * pattern
        src = SourceMoments(grid, times, np.zeros((times.shape[0], grid.m, grid.m)), j_hat)

        with log_duration(logger, "closed-form evolution"):
            exact = evolve_maxwell(state0, src)
        with log_duration(logger, "RK4 oracle"):
            oracle = step_maxwell_rk4(state0, src)
        band = np.max(np.abs(grid.modes), axis=0) <= int(mx["oracle_k"])
        ref_E, ref_B = exact.E_hat[::2][..., band], exact.B_hat[::2][..., band]
        scale = max(float(np.max(np.abs(ref_E))), float(np.max(np.abs(ref_B))), 1e-300)
        gap_t = np.maximum(np.max(np.abs(oracle.E_hat[..., band] - ref_E), axis=(1, 2)),
                           np.max(np.abs(oracle.B_hat[..., band] - ref_B), axis=1)) / scale
        oracle_gap = float(np.max(gap_t))
        report.add_criterion("oracle_agreement", oracle_gap <= MaxwellDefaults.ORACLE_TOLERANCE, oracle_gap,
                             MaxwellDefaults.ORACLE_TOLERANCE)
        stride = max(1, len(gap_t) // 500)
        self._csv(report, "oracle.csv", ["t", "relative_gap"], zip(oracle.times[::stride], gap_t[::stride]))

        coarse = uniform_times(T, T / 100.0)
        free = evolve_maxwell(state0, SourceMoments.zeros(grid, coarse))
        energy = field_energy(free.E_hat, free.B_hat)
        drift = float(np.max(np.abs(energy - energy[0])) / energy[0])
        report.add_criterion("energy_conservation", drift <= MaxwellDefaults.ENERGY_TOLERANCE, drift,
                             MaxwellDefaults.ENERGY_TOLERANCE)
        self._csv(report, "energy.csv", ["t", "energy"], zip(coarse, energy))

        # Poisson E0 with constant B0 leaves no free rotation
        rho0 = ScalarField(grid, np.cos(2.0 * np.pi * grid.nodes[0]) * np.sin(2.0 * np.pi * grid.nodes[1]))
        B_const = ScalarField(grid, np.full((grid.n, grid.n), float(self.config.physics["b0"])))
        tilde = compute_tilde_fields(solve_poisson(rho0), B_const, rho0, c, coarse)
        tilde_max = max(float(np.max(np.abs(tilde.E_tilde.values))), float(np.max(np.abs(tilde.B_tilde.values))))
        report.add_criterion("well_prepared_identity", tilde_max <= MaxwellDefaults.ENERGY_TOLERANCE, tilde_max,
                             MaxwellDefaults.ENERGY_TOLERANCE)

        final = exact.final
        write_field_dump(self._path("final_E.tkf"), final.E.values)
        write_field_dump(self._path("final_B.tkf"), final.B.values)
        report.artifacts.extend(["final_E.tkf", "final_B.tkf"])
        report.results.update({"steps": int(times.shape[0] - 1), "oracle_gap": oracle_gap, "energy_drift": drift,
                               "tilde_max": tilde_max})

    # ========== approx-sweep ==========

    def run_approx_sweep(self, report: RunReport) -> None:
        ap = self.config.approx
        grid = self.grid
        c_list = [float(c) for c in self.config.physics["c_list"]]
        src = approx_sweep_source(grid, float(ap["T"]), float(ap["dt"]), float(ap["alpha"]), float(ap["beta"]))
        rho0 = ScalarField(grid, src.rho_values()[0])
        state0 = EMState(0.0, solve_poisson(rho0), ScalarField(grid, np.zeros((grid.n, grid.n))), c_list[0])
        sweep = verify_approx_lemma(state0, src, c_list)

        self._csv(report, "approx_errors.csv", sweep.header, sweep.rows)
        self._csv(report, "approx_summary.csv", ["c", "sup_errE", "sup_errB"],
                  zip(c_list, sweep.sup_errors_E, sweep.sup_errors_B))
        lo, hi = MaxwellDefaults.SLOPE_RANGE
        report.results.update({"slope_E": sweep.slope_E, "slope_B": sweep.slope_B,
                               "C_rho_j": sweep.bound.C_rho_j, "C_prime_rho_j": sweep.bound.C_prime_rho_j,
                               "sup_errors_E": sweep.sup_errors_E, "sup_errors_B": sweep.sup_errors_B})
        report.add_criterion("slope_E", lo <= sweep.slope_E <= hi, sweep.slope_E, [lo, hi])
        report.add_criterion("slope_B", lo <= sweep.slope_B <= hi, sweep.slope_B, [lo, hi])
        report.add_criterion("within_bound", sweep.within_bound)

    # ========== control-maxwell ==========

    def _steering_problem(self, grid: GridSpec, c: float) -> SteeringProblem:
        ctrl = self.config.control
        args = (grid, c, float(ctrl["target_amplitude"]), float(ctrl["T"]), float(ctrl["dt"]), int(ctrl["k_ctrl"]),
                float(ctrl["reg"]))
        if ctrl["target"] == "random":
            return random_target_problem(*args, rng=self._rng("control-maxwell", "target"))
        problem = constant_field_problem(*args)
        if ctrl["target"] == "zero":
            return SteeringProblem(problem.E1, problem.B1, problem.E0, problem.B0, problem.T, c, problem.k_ctrl,
                                   problem.reg, problem.dt)
        return problem

    def run_control_maxwell(self, report: RunReport) -> None:
        ctrl = self.config.control
        grid = self.grid
        c = float(self.config.physics["c"])
        omega = control_set_from_spec(ctrl["omega"])
        gcc = check_gcc(omega, threads=self.threads, **self._gcc_params())
        report.results["gcc"] = gcc.to_dict()
        if not gcc.holds:
            logger.warning("Control set fails the geometric control condition; steering may not converge")

        problem = self._steering_problem(grid, c)
        basis = ControlBasis.build(grid, omega, problem.T, c, problem.k_ctrl,
                                   bump_radius=float(ctrl["bump_radius"]), time_profiles=int(ctrl["time_profiles"]),
                                   loop_band=float(ctrl["loop_band"]))
        support = basis.check_support(grid, omega)
        result = solve_steering(problem, basis, omega, float(ctrl["tolerance"]))
        report.results["steering"] = result.to_dict()
        report.results["support_leak"] = support

        report.add_criterion("steering_residual", result.relative_residual < float(ctrl["tolerance"]),
                             result.relative_residual, float(ctrl["tolerance"]))
        current_scale = max(1.0, float(np.max(np.abs(result.current_hat), initial=0.0)))
        report.add_criterion("divergence_free",
                             result.divergence_max <= ControlDefaults.CURRENT_DIVERGENCE * current_scale,
                             result.divergence_max, ControlDefaults.CURRENT_DIVERGENCE * current_scale)
        report.add_criterion("support_in_omega", result.outside_max <= ControlDefaults.SUPPORT_TOLERANCE,
                             result.outside_max, ControlDefaults.SUPPORT_TOLERANCE)

        back = reverse_steering(problem, result)
        reversal = max(float(np.max(np.abs(back.E.values - problem.E0.values))),
                       float(np.max(np.abs(back.B.values + problem.B0.values))))
        tol = ControlDefaults.REVERSAL_TOLERANCE * max(1.0, float(ctrl["target_amplitude"]))
        report.add_criterion("reversal", reversal <= tol, reversal, tol)

        mid = len(result.times) // 2
        write_field_csv(self._path("current_mid.csv"), result.current_values(grid, mid))
        report.artifacts.append("current_mid.csv")
        self._csv(report, "coefficients.csv", ["element"] + [f"profile{i}" for i in range(result.coefficients.shape[1])],
                  [(i,) + tuple(row) for i, row in enumerate(result.coefficients)])

    # ========== bend-verify ==========

    def run_bend_verify(self, report: RunReport) -> None:
        cfg = self.config
        bend = cfg.bending
        grid = self.grid
        params_gcc = self._gcc_params()
        x0, r0 = cfg.geometry["x0"], float(cfg.geometry["r0"])
        b = ScalarField(grid, np.full((grid.n, grid.n), float(cfg.physics["b0"])))

        cert = certify_bending(b, float(bend["threshold"]), threads=self.threads, **params_gcc)
        report.results["certificate"] = cert.to_dict()
        if not report.add_criterion("certificate", cert.valid, cert.diagnostic or None):
            return
        params = derive_bending_params(cert, x0, r0, float(bend["M_bar"]), n_dirs=params_gcc["n_dirs"],
                                       n_starts=params_gcc["n_starts"], threads=self.threads)
        report.results["parameters"] = params.to_dict()

        c = float(bend["c_factor"]) * params.c0
        F_sup = float(bend["F_extra"])
        F_extra = constant_vector((F_sup, 0.0)) if F_sup > 0 else None
        census = verify_bending_lemma(cert, params, x0, r0, b, c, bend["samples"], F_extra=F_extra,
                                      F_extra_sup=F_sup, dt=float(bend["dt"]), threads=self.threads)
        report.results["census"] = census.to_dict()
        report.results["c"] = c
        self._csv(report, "bending_census.csv", census.header, census.rows())
        report.add_criterion("hit_fraction", census.hit_fraction == 1.0, census.hit_fraction, 1.0)
        report.add_criterion("speed_band", census.band_fraction == 1.0, census.band_fraction, 1.0)

    # ========== reference-build ==========

    def run_reference_build(self, report: RunReport) -> None:
        ref = self.config.reference
        plan = self._build_plan(with_sweep=True)
        checks = plan.checks
        report.results["plan"] = plan.to_dict()

        if plan.case == "strip":
            report.add_criterion("lcc", checks["lcc"] <= ReferenceDefaults.LCC_TOLERANCE, checks["lcc"],
                                 ReferenceDefaults.LCC_TOLERANCE)
            sweep = checks.get("c_sweep")
            if sweep is not None:
                self._csv(report, "c_sweep.csv", ["c", "deviation"], [(r["c"], r["deviation"]) for r in sweep["rows"]])
                report.add_criterion("deviation_halving", sweep["halving"],
                                     [r["ratio"] for r in sweep["ratios"]], ReferenceDefaults.DEVIATION_RATIO)
        report.add_criterion("zero_mean_current", checks["zero_mean_current"] <= ReferenceDefaults.ZM_TOLERANCE,
                             checks["zero_mean_current"], ReferenceDefaults.ZM_TOLERANCE)
        if plan.census is not None:
            self._csv(report, "reference_census.csv", plan.census.header, plan.census.rows())
            report.add_criterion("census", plan.census.passed, plan.census.hit_fraction, 1.0)

        rng = self._rng("reference-build", "reversibility")
        count = ReferenceDefaults.REVERSIBILITY_SAMPLES
        x = rng.random((count, 2))
        angle = 2.0 * np.pi * rng.random(count)
        speed = float(ref["census_speed"]) * rng.random(count)
        v = np.column_stack([speed * np.cos(angle), speed * np.sin(angle)])
        mismatch = check_reversibility(plan, x, v, float(ref["dt"]))
        report.add_criterion("reversibility", mismatch <= ReferenceDefaults.REVERSIBILITY_TOLERANCE, mismatch,
                             ReferenceDefaults.REVERSIBILITY_TOLERANCE)

    # ========== absorb-run ==========

    def run_absorb_run(self, report: RunReport) -> None:
        cfg = self.config
        ab = cfg.absorption
        grid, c = self.grid, float(cfg.physics["c"])
        x0, r0 = cfg.geometry["x0"], float(cfg.geometry["r0"])

        plan = self._build_plan(with_sweep=False)
        report.results["plan"] = {"case": plan.case, "T": plan.T, "census": None if plan.census is None
                                  else plan.census.to_dict()}
        acfg = AbsorptionConfig(np.asarray([x0], dtype=np.float64), r0, float(ab["T"]), float(ab["dt"]),
                                weight_floor=float(ab["weight_floor"]))
        pcfg = PicardConfig(float(ab["epsilon"]), float(ab["R"]), int(ab["max_iter"]), float(ab["tol"]),
                            float(ab["kappa"]))
        f0 = sample_ensemble(int(cfg.ensemble["n_particles"]), pcfg.kappa, float(ab["source_speed"]),
                             self._rng("absorb-run", "f0"))
        fill = make_neutral_fill(acfg, int(ab["mu_particles"]), self._rng("absorb-run", "fill"))
        state0 = compatible_state(f0, grid, c)

        fixed = fixed_point_solve(f0, state0, acfg, pcfg, plan=plan, omega=self._reference_omega(), fill=fill,
                                  strict=False, threads=self.threads)
        record = fixed.result.record
        report.results.update({"absorption": acfg.to_dict(), "fixed_point": fixed.to_dict()})

        self._csv(report, "iterations.csv", ["iteration", "residual", "in_set"], fixed.rows())
        self._csv(report, "bookkeeping.csv", TransportRecord.bookkeeping_header(), record.bookkeeping)
        final = fixed.result.final
        write_particle_dump(self._path("final_particles.bin"), final.x, final.v, final.w)
        report.artifacts.append("final_particles.bin")
        census = {"fraction": fixed.census_fraction, "absorbed": fixed.result.census.astype(bool).tolist()}
        with open(self._path("census.json"), "w", encoding="utf-8") as f:
            json.dump(_jsonable(census), f, indent=CLIConstants.JSON_INDENT)
        report.artifacts.append("census.json")

        report.add_criterion("bookkeeping", fixed.bookkeeping_error <= AbsorptionDefaults.BOOKKEEPING_TOLERANCE,
                             fixed.bookkeeping_error, AbsorptionDefaults.BOOKKEEPING_TOLERANCE)
        contraction = fixed.converged or (fixed.monotone and fixed.iterations >= AbsorptionDefaults.MIN_ITERATIONS)
        report.add_criterion("contraction", contraction, fixed.history)
        outside = fixed.outside_fraction
        report.add_criterion("outside_charge", outside is not None and outside < AbsorptionDefaults.OUTSIDE_FRACTION,
                             outside, AbsorptionDefaults.OUTSIDE_FRACTION)

        if ab["kappa_scan"]:
            subset = sample_ensemble(int(ab["scan_particles"]), 1.0, float(ab["source_speed"]),
                                     self._rng("absorb-run", "kappa-scan"))
            scan = kappa_scan(subset, ab["kappa_scan"], lambda ens: compatible_state(ens, grid, c), acfg, pcfg,
                              plan=plan, fill=fill, threads=self.threads)
            report.results["kappa_scan"] = scan.to_dict()
            self._csv(report, "kappa_scan.csv", ["kappa", "census_fraction", "baseline_kept"], scan.rows())

    # ========== rescale-check ==========

    def run_rescale_check(self, report: RunReport) -> None:
        cfg = self.config
        rs = cfg.rescale
        grid, c = self.grid, float(cfg.physics["c"])
        T, dt = float(rs["T"]), float(rs["dt"])
        ens = sample_ensemble(int(rs["n_particles"]), float(cfg.absorption["kappa"]),
                              float(cfg.absorption["source_speed"]), self._rng("rescale-check", "ensemble"))
        state0 = compatible_state(ens, grid, c, b_mean=c * float(cfg.physics["b0"]))
        traj = solve_kinetic(ens, state0, T, dt, threads=self.threads)
        base = kinetic_residual(traj)
        report.results["residual"] = base

        rows = []
        worst = 0.0
        for lam in rs["lambda_list"]:
            lam = float(lam)
            scaled = residual_rescaled(traj, lam)
            ratio = scaled["max"] / base["max"] if base["max"] > 0 else 1.0
            worst = max(worst, ratio)
            rows.append((lam, scaled["x"], scaled["v"], scaled["E"], scaled["B"], scaled["max"], ratio))
        self._csv(report, "rescale.csv", ["lambda", "x", "v", "E", "B", "max", "ratio"], rows)
        report.add_criterion("residual_ratio", worst <= AbsorptionDefaults.RESIDUAL_RATIO, worst,
                             AbsorptionDefaults.RESIDUAL_RATIO)

        same = rescale_solution(traj, 1.0)
        identity = all(np.array_equal(a, b) for a, b in ((same.times, traj.times), (same.x, traj.x),
                                                           (same.v, traj.v), (same.E_hat, traj.E_hat),
                                                           (same.B_hat, traj.B_hat)))
        report.add_criterion("identity", identity)
        twice = rescale_solution(rescale_solution(traj, -1.0), -1.0)
        reversal = all(np.array_equal(a, b) for a, b in ((twice.times, traj.times), (twice.x, traj.x),
                                                           (twice.v, traj.v), (twice.E_hat, traj.E_hat),
                                                           (twice.B_hat, traj.B_hat)))
        report.add_criterion("double_reversal", reversal)

        pipeline = []
        for lam in rs["lambda_list"]:
            lam = float(lam)
            if lam > 0 and lam != 1.0:
                pipeline.append(large_time_pipeline(ens, state0, T, dt, lam, threads=self.threads))
        report.results["large_time"] = pipeline
        if pipeline:
            gap = max(max(p["x"], p["v"], p["E"], p["B"]) for p in pipeline)
            report.add_criterion("large_time_pipeline", gap <= AbsorptionDefaults.PIPELINE_TOLERANCE, gap,
                                 AbsorptionDefaults.PIPELINE_TOLERANCE)

import math

import numpy as np
import pytest

from controllers import (AccelField, KineticProfile, PlanCensus, PlanSegment, ReferencePlan, assemble_reference_gcc,
                         assemble_reference_strip, build_accel_field, c_sweep, calibrate_wait, charge_correction,
                         check_accel_field, check_reversibility, lift_current, lift_moments, make_bumps,
                         reverse_plan, run_census, source_support, time_bump)
from geometry import BallUnion, Strip, census_samples, whole
from particles import ForceSpec, constant_scalar, constant_vector
from spectral import GridSpec, ScalarField, SpectralVector, divergence, spectral_coeffs
from utils import CensusFailure, ConstructionError, HodgeObstructionError, MomentError


@pytest.fixture(scope="module")
def bumps():
    return make_bumps()


@pytest.fixture
def strip():
    return Strip((1, 0), (0.0, 0.5), 0.2)


# ========== Velocity Bumps ==========

@pytest.mark.parametrize("c", [math.inf, 2.0])
def test_bump_moments(c):
    profile = make_bumps(c=c)
    density, current = profile.moments()
    np.testing.assert_allclose(density, [1.0, 0.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(current, [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], atol=1e-10)
    assert max(profile.residuals.values()) < 1e-8


def test_coarse_quadrature_raises():
    with pytest.raises(MomentError):
        make_bumps(quad_n=16)


def test_bumps_vanish_off_unit_ball(bumps):
    np.testing.assert_array_equal(bumps.values(np.array([[1.5, 0.0], [0.0, -1.0]])), 0.0)


def test_bump_gradients_match_differences(bumps):
    v = np.array([0.3, 0.2])
    h = 1e-6
    grads = bumps.gradients(v)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (bumps.values(v + e) - bumps.values(v - e)) / (2.0 * h)
        np.testing.assert_allclose(grads[:, i], fd, rtol=1e-5, atol=1e-8)


def test_lifted_profiles_carry_their_moments(grid, bumps, rng):
    rho = rng.standard_normal((grid.n, grid.n))
    j = rng.standard_normal((2, grid.n, grid.n))
    profile = lift_moments(rho, j, bumps)
    np.testing.assert_allclose(profile.density(), rho, atol=1e-9)
    np.testing.assert_allclose(profile.current(), j, atol=1e-9)
    current_only = lift_current(j, bumps)
    np.testing.assert_allclose(current_only.density(), 0.0, atol=1e-9)
    assert current_only.values(np.zeros((1, 2))).shape == (1, grid.n, grid.n)


def test_profile_outside_max(grid, bumps):
    coeffs = np.zeros((3, grid.n, grid.n))
    coeffs[0, 8, 8] = 1.0
    coeffs[1, 0, 0] = -2.0
    profile = KineticProfile(coeffs, bumps)
    assert profile.outside_max(BallUnion([(0.5, 0.5, 0.2)])) == 2.0


# ========== Time Cutoff ==========

def test_time_bump_support_and_peak():
    chi, dchi, _ = time_bump(np.array([-0.1, 0.0, 0.5, 1.0, 1.2]), 1.0)
    np.testing.assert_array_equal(chi[[0, 1, 3, 4]], 0.0)
    assert chi[2] == pytest.approx(1.0)
    assert dchi[2] == pytest.approx(0.0, abs=1e-12)


def test_time_bump_derivatives():
    tau, t, h = 1.0, 0.3, 1e-6
    f, f1, f2 = time_bump(t, tau)
    fp, f1p, _ = time_bump(t + h, tau)
    fm, f1m, _ = time_bump(t - h, tau)
    assert float(f1) == pytest.approx(float((fp - fm) / (2 * h)), rel=1e-6)
    assert float(f2) == pytest.approx(float((f1p - f1m) / (2 * h)), rel=1e-6)


# ========== Accelerating Field ==========

def test_accel_field_is_harmonic_off_the_band(strip):
    accel = build_accel_field(strip, amplitude=2.0)
    report = accel.report
    assert report.passed
    assert report.min_norm >= 2.0 * (1 - 1e-12)
    pts = np.array([[0.1, 0.5 + 0.1], [0.7, 0.5 - 0.15], [0.3, 0.05]])
    np.testing.assert_array_equal(accel.laplacian(pts), 0.0)
    assert accel.laplacian(np.array([[0.0, 0.5]]))[0] != 0.0


def test_accel_field_rejects_wide_core(strip):
    with pytest.raises(ConstructionError):
        AccelField(strip, 0.3, 1.0)
    with pytest.raises(ConstructionError):
        AccelField(strip, 0.05, 0.0)


def test_accel_check_flags_curl(strip):
    report = check_accel_field(lambda x: np.stack([np.sin(2 * np.pi * x[:, 1]), np.zeros(len(x))], axis=-1),
                               strip, 0.05, n=16)
    assert "curl" in report.failures
    assert not report.passed


# ========== Charge Correction ==========

def test_charge_correction_of_accel_field(strip):
    grid = GridSpec(32, 8)
    accel = build_accel_field(strip, amplitude=1.0)
    correction = charge_correction(accel, strip, grid)
    assert correction.div_residual < 1e-8
    assert correction.outside_max < 1e-12
    assert abs(correction.alpha) < 1e-9

    pts = grid.nodes.reshape(2, -1).T
    h_hat = spectral_coeffs(grid, accel.laplacian(pts).reshape(grid.n, grid.n))
    h_hat = np.where(grid.nonzero, h_hat, 0.0)
    u_hat = correction.projected_hat(grid, h_hat)
    div_hat = 1j * (grid.xi[0] * u_hat[0] + grid.xi[1] * u_hat[1])
    assert np.max(np.abs(div_hat - h_hat)) < 1e-10 * np.max(np.abs(h_hat))
    k = grid.k_max
    assert np.all(u_hat[:, k, k] == 0)


def test_charge_with_flux_is_obstructed(grid, strip):
    h = ScalarField(grid, np.sin(2 * np.pi * grid.nodes[1]))
    with pytest.raises(HodgeObstructionError) as info:
        charge_correction(h, strip)
    assert abs(info.value.alpha) > 0.1


def test_charge_with_mean_is_rejected(grid, strip):
    h = ScalarField(grid, 1.0 + np.sin(2 * np.pi * grid.nodes[0]))
    with pytest.raises(ConstructionError):
        charge_correction(h, strip)


# ========== Plans ==========

def _wave(t, x):
    return 0.5 * t * np.stack([np.sin(2 * np.pi * x[..., 1]), np.cos(2 * np.pi * x[..., 0])], axis=-1)


def _field_b(t, x):
    return 1.5 + 0.5 * np.cos(2 * np.pi * x[..., 0])


def _toy_plan(grid, bumps):
    rho = np.full((grid.m, grid.m), 1.0 + 0j)
    j = np.full((2, grid.m, grid.m), 2.0 + 0j)
    segments = [PlanSegment("bend-wait", 0.0, 0.5, _wave, _field_b),
                PlanSegment("poisson-accelerate", 0.5, 1.0, _wave, _field_b,
                            lambda t: (t * rho, t * j),
                            lambda t: t * np.ones((3, grid.n, grid.n)))]
    return ReferencePlan("strip", grid, 2.0, segments, bumps, b_background=1.5)


def test_unknown_segment_mode():
    with pytest.raises(ConstructionError):
        PlanSegment("drift", 0.0, 1.0)


def test_reverse_plan_flips_time_and_sign(grid, bumps):
    plan = _toy_plan(grid, bumps)
    back = reverse_plan(plan)
    assert [s.mode for s in back.segments] == ["poisson-accelerate", "bend-wait"]
    assert back.segments[0].t0 == 0.0 and back.segments[0].t1 == 0.5
    assert back.is_reversed and back.b_background == -1.5

    pts = grid.nodes.reshape(2, -1).T
    np.testing.assert_allclose(back.field_E(0.2, pts), plan.field_E(0.8, pts))
    np.testing.assert_allclose(back.field_b(0.2, pts), -plan.field_b(0.8, pts))
    rho, j = back.moments(0.25)
    np.testing.assert_allclose(rho, 0.75)
    np.testing.assert_allclose(j, -1.5)
    coeffs = back.profile_at(0.25).coeffs
    np.testing.assert_allclose(coeffs[0], 0.75)
    np.testing.assert_allclose(coeffs[1:], -0.75)
    assert reverse_plan(back).is_reversed is False


def test_reversed_plan_retraces_characteristics(grid, bumps, rng):
    plan = _toy_plan(grid, bumps)
    x = rng.uniform(0.0, 1.0, (4, 2))
    v = rng.uniform(-1.0, 1.0, (4, 2))
    assert check_reversibility(plan, x, v, 1e-3) < 1e-8


def test_idle_plan_has_no_fields_or_moments(grid, bumps):
    plan = ReferencePlan("gcc", grid, 1.0, [PlanSegment("idle", 0.0, 1.0)], bumps)
    pts = grid.nodes.reshape(2, -1).T
    np.testing.assert_array_equal(plan.field_E(0.5, pts), 0.0)
    np.testing.assert_array_equal(plan.field_b(0.5, pts), 0.0)
    rho, j = plan.moments(0.5)
    assert rho.shape == (grid.m, grid.m) and j.shape == (2, grid.m, grid.m)
    assert plan.source_on(np.linspace(0.0, 1.0, 3)).nt == 3


def test_transport_source_stays_near_its_profile(grid, bumps):
    x1, x2 = grid.nodes
    inside = (np.hypot(x1 - 0.5, x2 - 0.5) < 0.2).astype(np.float64)

    def nodes(t):
        return t * np.stack([inside, np.zeros_like(inside), np.zeros_like(inside)])

    plan = ReferencePlan("gcc", grid, 1.0, [PlanSegment("idle", 0.0, 1.0, nodes=nodes)], bumps)
    total, outside = source_support(plan, BallUnion([(0.5, 0.5, 0.3)]), [0.25, 0.5])
    assert total > 0.0
    assert outside == 0.0


# ========== Census ==========

def test_census_evaluate_windows():
    samples = np.array([[0.1, 0.1, 0.0, 5.0], [0.2, 0.3, 1.0, 6.0]])
    hits = np.zeros((4, 2), dtype=bool)
    hits[1, 0] = True
    hits[2, 1] = True
    record = PlanCensus(samples, np.arange(5.0), hits, 4.0, {})

    full = record.evaluate(0.0, 4.0)
    assert full.passed
    np.testing.assert_array_equal(full.first_hit, [1.0, 2.0])

    early = record.evaluate(0.0, 2.0)
    assert not early.passed
    assert early.hit_fraction == 0.5
    assert early.worst["first_hit"] is None
    assert early.worst["x"] == [0.2, 0.3]

    wait, result = calibrate_wait(record, 0.5, 4.0, window=(0.0, 1.0), ladder=2.0)
    assert wait == 2.0
    assert result.passed
    with pytest.raises(CensusFailure):
        calibrate_wait(record, 0.5, 1.0, window=(0.0, 1.0), ladder=2.0)


def test_run_census_straight_line():
    force = ForceSpec(math.inf, constant_vector((0.0, 0.0)), constant_scalar(0.0))
    samples = np.array([[0.1, 0.5, 0.0, 5.0]])
    target = BallUnion([(0.5, 0.5, 0.1)])
    record = run_census(force, samples, 0.0, 0.2, 0.01, target, 4.0)
    result = record.evaluate(0.0, 0.2)
    assert result.first_hit[0] == pytest.approx(0.06, abs=1e-9)
    slow = run_census(force, samples, 0.0, 0.2, 0.01, target, 6.0).evaluate(0.0, 0.2)
    assert not slow.passed


# ========== Strip Reference ==========

def test_strip_reference_without_census(strip, bumps):
    grid = GridSpec(32, 8)
    plan = assemble_reference_strip(strip, grid, math.inf, 1.0, (0.5, 0.5), 0.2, bumps=bumps, dt=1e-2,
                                    census=None)
    assert [s.mode for s in plan.segments] == ["bend-wait", "poisson-accelerate", "bend-wait"]
    assert plan.T == pytest.approx(1.5)
    assert plan.checks["lcc"] < 1e-6
    assert plan.checks["zero_mean_current"] < 1e-10
    assert plan.checks["source_outside"] == 0.0
    assert plan.checks["profile_outside"] == 0.0
    assert plan.census is None

    pts = grid.nodes.reshape(2, -1).T
    np.testing.assert_array_equal(plan.field_E(0.0, pts), 0.0)
    np.testing.assert_array_equal(plan.field_b(0.0, pts), 1.0)
    accel = build_accel_field(strip, 40.0)
    np.testing.assert_allclose(plan.field_E(0.75, pts), accel.gradient(pts))
    assert reverse_plan(plan).b_background == -1.0


def test_maxwell_deviation_halves_when_c_doubles(strip, bumps):
    grid = GridSpec(32, 8)
    plan = assemble_reference_strip(strip, grid, math.inf, 1.0, (0.5, 0.5), 0.2, bumps=bumps, dt=2e-3,
                                    census=None)
    sweep = c_sweep(plan, [200.0, 400.0], 1.0, census_samples((2, 2, 2, 2), 1.0, 4.0), 2e-3)
    first, second = (row["deviation"] for row in sweep["rows"])
    assert first > 0.0
    assert sweep["ratios"][0]["ratio"] == pytest.approx(second / first)
    assert sweep["halving"]


def test_gcc_reference_on_the_torus(grid, rng):
    plan = assemble_reference_gcc(whole(), grid, 1.0, (0.2, 1.0, 0.2), dt=2e-3, amplitude=0.1, census=None,
                                  gcc_params={"n_dirs": 8, "n_starts": 4},
                                  basis_params={"bump_radius": 0.2, "spacing": 0.25})
    assert [s.mode for s in plan.segments] == ["idle", "idle", "maxwell-steer-up", "hold-constant-E",
                                               "maxwell-steer-down", "idle"]
    assert plan.T == pytest.approx(2.4 * 9.0 / 7.0)
    checks = plan.checks
    assert checks["steer_up"]["relative_residual"] < 1e-3
    assert checks["steer_down"]["relative_residual"] < 1e-3
    assert checks["start_field"] == {"E": 0.0, "b": 0.0}
    assert checks["lcc_finite_difference"] < 1e-8
    assert checks["source_outside"] == 0.0
    assert checks["profile_outside"] == 0.0

    pts = grid.nodes.reshape(2, -1).T
    pad = checks["pad"]
    for t in (pad + 0.7, pad + 1.3, pad + 1.9):
        E = plan.field_E(t, pts).T.reshape(2, grid.n, grid.n)
        assert np.max(np.abs(E)) > 0.0
        div = divergence(SpectralVector(grid, spectral_coeffs(grid, E))).coeffs
        assert np.max(np.abs(div)) < 1e-8

    x = rng.uniform(0.0, 1.0, (4, 2))
    v = rng.uniform(-1.0, 1.0, (4, 2))
    assert check_reversibility(plan, x, v, 2e-3) < 1e-3

import math

import numpy as np
import pytest

from particles import (AbsorptionConfig, ForceSpec, GammaSets, ParticleEnsemble, PicardConfig, ball_current_patch,
                       classify, compatible_state, deposit_moments, enforce_charge_conservation, extend_neutral,
                       fixed_point_solve, free_transport_moments, kappa_scan, kinetic_residual, large_time_pipeline,
                       make_neutral_fill, opacity, picard_step, push_with_absorption, rescale_solution, sample_ensemble,
                       solve_kinetic)
from spectral import EMState, GridSpec, SourceMoments, check_charge_conservation, uniform_times
from utils import GeometryError, InfeasibleParametersError, TrajectoryError

CENTER = (0.5, 0.5)


def _config(**kwargs) -> AbsorptionConfig:
    base = dict(centers=[CENTER], r0=0.1, T=1.0, dt=0.01)
    base.update(kwargs)
    return AbsorptionConfig(**base)


def _single(x, v, w=1.0) -> ParticleEnsemble:
    return ParticleEnsemble(np.array([x]), np.array([v]), np.array([w]))


@pytest.mark.parametrize("v, label", [((-3.0, 0.0), "gamma3"), ((-1.0, 0.0), "gamma2"), ((-0.6, 0.0), "gamma1"),
                                      ((1.0, 0.0), "gamma_plus"), ((-0.3, 0.0), "none")])
def test_classify_on_the_sphere(v, label):
    assert classify(np.array([0.7, 0.5]), np.array(v), CENTER, 0.2)[0] == label


def test_classify_rejects_points_off_the_sphere():
    with pytest.raises(GeometryError):
        classify(np.array([0.75, 0.5]), np.array([-1.0, 0.0]), CENTER, 0.2)


def test_gamma_sets_must_nest():
    with pytest.raises(InfeasibleParametersError):
        GammaSets(gamma1=(0.5, 0.1), gamma2=(3.0, 0.125), gamma3=(2.0, 0.2))


def test_absorption_config_validation():
    with pytest.raises(InfeasibleParametersError):
        _config(r0=0.3)
    with pytest.raises(InfeasibleParametersError):
        _config(dt=2.0)
    with pytest.raises(InfeasibleParametersError):
        _config(upsilon=(0.3, 0.2))


def test_opacity_is_off_at_the_ends_and_zero_on_gamma3():
    cfg = _config()
    x, fast_in, outward = np.array([[0.7, 0.5]]), np.array([[-3.0, 0.0]]), np.array([[3.0, 0.0]])
    assert opacity(0.0, x, fast_in, cfg)[0] == pytest.approx(1.0)
    assert opacity(1.0, x, fast_in, cfg)[0] == pytest.approx(1.0)
    assert opacity(0.5, x, fast_in, cfg)[0] == pytest.approx(0.0)
    assert opacity(0.5, x, outward, cfg)[0] == pytest.approx(1.0)


def test_fast_head_on_particle_is_absorbed():
    cfg = _config()
    ens, tally = push_with_absorption(_single((0.25, 0.5), (3.0, 0.0)), ForceSpec(), cfg, 0.4, 0.5)
    assert ens.size == 0
    assert tally.absorbed == pytest.approx(1.0)
    assert tally.crossings == 1
    assert tally.labels["gamma3"] == 1


def test_intermediate_speed_is_half_absorbed():
    cfg = _config()
    ens, tally = push_with_absorption(_single((0.25, 0.5), (1.5, 0.0)), ForceSpec(), cfg, 0.4, 0.5)
    assert ens.size == 1
    assert ens.w[0] == pytest.approx(0.5, abs=1e-9)
    assert ens.charge + tally.absorbed + tally.dropped == pytest.approx(1.0, abs=1e-15)


def test_grazing_particle_keeps_its_weight():
    cfg = _config()
    ens, tally = push_with_absorption(_single((0.25, 0.6999), (3.0, 0.0)), ForceSpec(), cfg, 0.4, 0.5)
    assert ens.w[0] == 1.0
    assert tally.absorbed == 0.0


def test_disabled_absorption_only_pushes():
    cfg = _config(enabled=False)
    ens, tally = push_with_absorption(_single((0.25, 0.5), (3.0, 0.0)), ForceSpec(), cfg, 0.4, 0.5)
    assert ens.w[0] == 1.0
    np.testing.assert_allclose(ens.x[0], [0.55, 0.5], atol=1e-12)


def test_ensemble_rejects_negative_weights():
    with pytest.raises(TrajectoryError):
        ParticleEnsemble(np.zeros((1, 2)), np.zeros((1, 2)), np.array([-1.0]))


def test_deposits_integrate_to_the_weights(grid, rng):
    ens = sample_ensemble(200, 0.7, 2.0, rng)
    rho, j = deposit_moments(ens, grid, 5.0)
    h2 = grid.spacing ** 2
    assert rho.values.sum() * h2 == pytest.approx(0.7, rel=1e-12)
    vhat = ens.v / np.sqrt(1.0 + np.sum(ens.v ** 2, axis=1, keepdims=True) / 25.0)
    np.testing.assert_allclose(j.values.sum(axis=(1, 2)) * h2, (ens.w[:, None] * vhat).sum(axis=0), atol=1e-12)


def test_deposits_are_thread_independent(grid, rng):
    ens = sample_ensemble(9000, 1.0, 1.0, rng)
    a, _ = deposit_moments(ens, grid, 2.0, threads=1)
    b, _ = deposit_moments(ens, grid, 2.0, threads=3)
    np.testing.assert_array_equal(a.values, b.values)


def test_neutral_fill_carries_no_current(grid, rng):
    cfg = _config()
    fill = make_neutral_fill(cfg, 100, rng)
    assert fill.charge == pytest.approx(1.0)
    assert np.all(fill.ids == -1)
    _, j = deposit_moments(fill, grid, math.inf)
    assert np.max(np.abs(j.values)) < 1e-12
    with pytest.raises(InfeasibleParametersError):
        make_neutral_fill(cfg, 7, rng)


def test_extension_adds_nothing_when_no_charge_was_lost(rng):
    cfg = _config()
    ens = sample_ensemble(10, 1.0, 1.0, rng)
    view, lam = extend_neutral(ens, cfg, 0.0, ens.charge, make_neutral_fill(cfg, 10, rng))
    assert lam == 0.0
    assert view.charge == pytest.approx(1.0)


def test_extension_restores_the_charge_at_the_end(rng):
    cfg = _config()
    ens = ParticleEnsemble(np.array([[0.5, 0.55], [0.1, 0.1]]), np.zeros((2, 2)), np.array([0.5, 0.25]))
    view, lam = extend_neutral(ens, cfg, 1.0, 1.0, make_neutral_fill(cfg, 10, rng))
    assert lam == pytest.approx(1.0 - 0.25)
    assert view.charge == pytest.approx(1.0)
    assert view.w[0] == 0.0


def _growing_charge(grid, conserving=False):
    times = uniform_times(0.2, 0.01)

    def current(t, x1, x2):
        j1 = -np.sin(2 * np.pi * x1) / (2 * np.pi) if conserving else np.zeros_like(x1)
        return j1, np.zeros_like(x1)

    return SourceMoments.from_callables(grid, times, lambda t, x1, x2: 1.0 + t * np.cos(2 * np.pi * x1), current)


def test_charge_enforcement_zeroes_the_residual(grid):
    src = _growing_charge(grid)
    assert check_charge_conservation(src) > 0.5
    fixed, fix = enforce_charge_conservation(src)
    assert check_charge_conservation(fixed) < 1e-10
    assert fix.patch == 0.0
    assert fix.projection == pytest.approx(1.0 / (2 * np.pi), rel=1e-6)


def test_ball_patch_stays_inside_the_ball():
    grid = GridSpec(32, 8)
    cfg = _config(r0=0.2)
    src = _growing_charge(grid)
    fixed, fix = enforce_charge_conservation(src, cfg)
    dist = np.linalg.norm(np.moveaxis(grid.nodes, 0, -1) - np.array(CENTER), axis=-1)
    outside = dist >= cfg.radius
    assert fix.patch > 0.0
    assert np.all(fix.current[..., outside] == 0.0)
    assert np.array_equal(fixed.rho_hat, src.rho_hat)
    assert check_charge_conservation(fixed) < 1e-10


def test_conserving_sources_are_left_alone():
    grid = GridSpec(32, 8)
    src = _growing_charge(grid, conserving=True)
    fixed, fix = enforce_charge_conservation(src, _config(r0=0.2))
    assert fix.patch < 1e-10
    assert fix.projection < 1e-10
    assert np.max(np.abs(fixed.j_values() - src.j_values())) < 1e-10


def test_ball_patch_skips_balls_without_ring_nodes():
    grid = GridSpec(8, 3)
    residual = np.ones((2, grid.n, grid.n))
    h = ball_current_patch(grid, residual, np.array([0.5625, 0.5625]), 0.02)
    assert h.shape == (2, 2, grid.n, grid.n)
    assert not np.any(h)


def test_picard_config_validation():
    with pytest.raises(InfeasibleParametersError):
        PicardConfig(epsilon=0.0, R=1.0, max_iter=3, tol=1e-6, kappa=1.0)
    with pytest.raises(InfeasibleParametersError):
        PicardConfig(epsilon=1.0, R=1.0, max_iter=0, tol=1e-6, kappa=1.0)


def test_empty_data_is_a_fixed_point(grid):
    cfg = _config(T=0.1)
    pcfg = PicardConfig(epsilon=1.0, R=10.0, max_iter=5, tol=1e-8, kappa=1.0)
    report = fixed_point_solve(ParticleEnsemble.empty(), EMState.zero(grid, 10.0), cfg, pcfg)
    assert report.converged
    assert report.iterations == 1
    assert report.census_fraction == 1.0
    assert report.bookkeeping_error == 0.0


def test_small_data_iteration_contracts(grid, rng):
    cfg = _config(r0=0.05, T=0.2)
    f0 = sample_ensemble(20, 0.01, 0.5, rng, center=(0.0, 0.0), radius=0.05)
    state0 = compatible_state(f0, grid, 10.0)
    pcfg = PicardConfig(epsilon=10.0, R=10.0, max_iter=2, tol=1e-12, kappa=1.0)
    report = fixed_point_solve(f0, state0, cfg, pcfg, strict=False)
    assert report.monotone
    assert report.history[-1] < 1e-3
    assert report.bookkeeping_error < 1e-12
    assert report.charge_error < 1e-12
    assert report.result.record.tally.crossings == 0
    assert len(report.rows()) == report.iterations


def test_picard_step_marks_only_the_head_on_particle(grid):
    cfg = _config(T=0.3)
    pcfg = PicardConfig(epsilon=10.0, R=10.0, max_iter=1, tol=1e-8, kappa=1.0)
    f0 = ParticleEnsemble([[0.5, 0.0], [0.1, 0.1]], [[0.0, 3.0], [0.0, 0.1]], [0.005, 0.005])
    g = free_transport_moments(f0, uniform_times(cfg.T, cfg.dt), grid, 10.0)
    result = picard_step(g, compatible_state(f0, grid, 10.0), f0, cfg, pcfg)
    assert result.census.tolist() == [True, False]
    assert result.record.tally.crossings >= 1
    np.testing.assert_allclose(result.fields.times, g.times)
    assert result.moments.rho_hat.shape == g.rho_hat.shape
    assert result.patch >= 0.0


def test_kappa_scan_keeps_head_on_hits(grid):
    cfg = _config(T=0.3)
    pcfg = PicardConfig(epsilon=10.0, R=10.0, max_iter=1, tol=1e-8, kappa=1.0)
    f0 = ParticleEnsemble([[0.5, 0.0], [0.1, 0.1]], [[0.0, 3.0], [0.0, 0.1]], [0.5, 0.5])
    scan = kappa_scan(f0, [1e-2, 1e-4], lambda ens: compatible_state(ens, grid, 10.0), cfg, pcfg)
    assert scan.kappas == [1e-4, 1e-2]
    assert scan.fractions == [0.5, 0.5]
    assert scan.preserved == [True, True]
    assert scan.largest_passing == 1e-2
    assert scan.rows()[0] == (1e-4, 0.5, True)


def test_kappa_scan_rejects_bad_input(grid):
    cfg = _config(T=0.3)
    pcfg = PicardConfig(epsilon=10.0, R=10.0, max_iter=1, tol=1e-8, kappa=1.0)
    f0 = ParticleEnsemble([[0.5, 0.0]], [[0.0, 3.0]], [1.0])
    with pytest.raises(InfeasibleParametersError):
        kappa_scan(ParticleEnsemble.empty(), [1e-3], lambda ens: EMState.zero(grid, 10.0), cfg, pcfg)
    with pytest.raises(InfeasibleParametersError):
        kappa_scan(f0, [0.0, 1e-3], lambda ens: EMState.zero(grid, 10.0), cfg, pcfg)


@pytest.fixture
def kinetic(grid):
    rng = np.random.default_rng(99)
    ens = sample_ensemble(12, 0.05, 1.0, rng)
    state0 = compatible_state(ens, grid, 4.0, b_mean=1.0)
    return ens, state0, solve_kinetic(ens, state0, 0.2, 0.01)


def test_unit_rescaling_is_the_identity(kinetic):
    _, _, traj = kinetic
    same = rescale_solution(traj, 1.0)
    for name in ("times", "x", "v", "w", "E_hat", "B_hat", "rho_hat", "j_hat"):
        np.testing.assert_array_equal(getattr(same, name), getattr(traj, name))


def test_double_reversal_is_the_identity(kinetic):
    _, _, traj = kinetic
    back = rescale_solution(rescale_solution(traj, -1.0), -1.0)
    assert back.c == traj.c
    for name in ("times", "x", "v", "E_hat", "B_hat", "j_hat"):
        np.testing.assert_array_equal(getattr(back, name), getattr(traj, name))


def test_rescaled_fields_start_scaled(kinetic):
    _, _, traj = kinetic
    scaled = rescale_solution(traj, 2.0)
    np.testing.assert_array_equal(scaled.E_hat[0], 4.0 * traj.E_hat[0])
    assert scaled.c == 2.0 * traj.c
    with pytest.raises(TrajectoryError):
        rescale_solution(traj, 0.0)


@pytest.mark.parametrize("lam", [2.0, 0.5, -1.0])
def test_residuals_are_scale_invariant(kinetic, lam):
    _, _, traj = kinetic
    base = kinetic_residual(traj)
    scaled = kinetic_residual(rescale_solution(traj, lam))
    for key in ("x", "v", "E", "B"):
        assert scaled[key] == pytest.approx(base[key], rel=1e-6, abs=1e-12)


def test_large_time_pipeline_matches_direct_solve(kinetic):
    ens, state0, _ = kinetic
    gaps = large_time_pipeline(ens, state0, 0.2, 0.01, 2.0)
    assert gaps["steps"] == 20
    for key in ("times", "x", "v", "E", "B"):
        assert gaps[key] < 1e-8

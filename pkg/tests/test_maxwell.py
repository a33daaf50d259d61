import numpy as np
import pytest

from spectral import (EMState, GridSpec, ScalarField, SourceMoments, VectorField, approx_constants,
                      approx_sweep_source, check_charge_conservation, check_compatibility, check_zero_mean_current,
                      compute_tilde_fields, evolve_maxwell, field_energy, real_values, scalar_field,
                      solve_poisson, step_maxwell_rk4, time_derivative, uniform_times, vector_field,
                      verify_approx_lemma)
from utils import ChargeConservationError, FieldError, ZeroMeanCurrentError


def _plane_wave_state(grid, c):
    E0 = vector_field(grid, lambda x1, x2: (np.zeros_like(x1), np.cos(2 * np.pi * x1)))
    return EMState(0.0, E0, ScalarField(grid, np.zeros((grid.n, grid.n))), c)


def test_uniform_times_land_on_the_end():
    times = uniform_times(1.0, 0.1)
    assert len(times) == 11
    assert times[-1] == 1.0


def test_time_derivative_is_exact_on_cubics():
    t = np.linspace(0.0, 1.0, 21)
    d = time_derivative(t ** 3, t[1] - t[0])
    np.testing.assert_allclose(d, 3 * t ** 2, atol=1e-10)


def test_time_derivative_needs_two_samples():
    with pytest.raises(FieldError):
        time_derivative(np.zeros(1), 0.1)


def test_poisson_of_cosine(grid):
    rho = scalar_field(grid, lambda x1, x2: np.cos(2 * np.pi * x1))
    E = solve_poisson(rho).values
    x1, _ = grid.nodes
    np.testing.assert_allclose(E[0], np.sin(2 * np.pi * x1) / (2 * np.pi), atol=1e-13)
    np.testing.assert_allclose(E[1], 0.0, atol=1e-13)


def test_compatibility_of_poisson_field(grid):
    rho = scalar_field(grid, lambda x1, x2: 1.0 + np.cos(2 * np.pi * (x1 - x2)))
    state = EMState(0.0, solve_poisson(rho), ScalarField(grid, np.zeros((grid.n, grid.n))), 1.0)
    assert check_compatibility(state, rho).passed


def test_plane_wave_is_exact(grid):
    c = 3.0
    times = uniform_times(0.7, 0.01)
    traj = evolve_maxwell(_plane_wave_state(grid, c), SourceMoments.zeros(grid, times))
    x1, _ = grid.nodes
    E = traj.E_values()
    B = traj.B_values()
    for i in (1, len(times) // 2, len(times) - 1):
        t = times[i]
        np.testing.assert_allclose(E[i, 1], np.cos(2 * np.pi * x1) * np.cos(2 * np.pi * c * t), atol=1e-10)
        np.testing.assert_allclose(E[i, 0], 0.0, atol=1e-10)
        np.testing.assert_allclose(B[i], np.sin(2 * np.pi * x1) * np.sin(2 * np.pi * c * t), atol=1e-10)


def test_energy_is_conserved_without_sources(grid, hermitian_coeffs):
    B0 = ScalarField(grid, real_values(grid, hermitian_coeffs(11)))
    state = EMState(0.0, VectorField(grid, np.zeros((2, grid.n, grid.n))), B0, 5.0)
    traj = evolve_maxwell(state, SourceMoments.zeros(grid, uniform_times(2.0, 0.02)))
    energy = field_energy(traj.E_hat, traj.B_hat)
    np.testing.assert_allclose(energy, energy[0], rtol=1e-12)


def test_charge_violation_is_rejected(grid):
    times = uniform_times(0.5, 0.01)
    src = SourceMoments.from_callables(grid, times, lambda t, x1, x2: t * np.cos(2 * np.pi * x1),
                                       lambda t, x1, x2: (np.zeros_like(x1), np.zeros_like(x1)))
    assert check_charge_conservation(src) > 0.5
    with pytest.raises(ChargeConservationError):
        evolve_maxwell(EMState.zero(grid, 1.0), src)


def test_gauss_violation_is_rejected(grid):
    E0 = vector_field(grid, lambda x1, x2: (np.cos(2 * np.pi * x1), np.zeros_like(x1)))
    state = EMState(0.0, E0, ScalarField(grid, np.zeros((grid.n, grid.n))), 1.0)
    with pytest.raises(ChargeConservationError):
        evolve_maxwell(state, SourceMoments.zeros(grid, uniform_times(0.1, 0.01)))


def test_start_time_must_match_sources(grid):
    with pytest.raises(FieldError):
        evolve_maxwell(EMState.zero(grid, 1.0, t=0.5), SourceMoments.zeros(grid, uniform_times(0.1, 0.01)))


def test_time_reversal_returns_to_the_start(grid):
    c = 2.0
    state = _plane_wave_state(grid, c)
    times = uniform_times(0.4, 0.005)
    forward = evolve_maxwell(state, SourceMoments.zeros(grid, times))
    back_start = forward.reversed().state_at(0)
    back = evolve_maxwell(back_start, SourceMoments.zeros(grid, times))
    np.testing.assert_allclose(back.E_values()[-1], state.E.values, atol=1e-10)
    np.testing.assert_allclose(-back.B_values()[-1], state.B.values, atol=1e-10)


def test_well_prepared_data_has_no_free_part(grid):
    rho = scalar_field(grid, lambda x1, x2: 1.0 + 0.4 * np.sin(2 * np.pi * x2))
    E0 = solve_poisson(rho)
    B0 = ScalarField(grid, np.full((grid.n, grid.n), 0.7))
    tilde = compute_tilde_fields(E0, B0, rho, 4.0, np.linspace(0.0, 1.0, 5))
    assert np.max(np.abs(tilde.E_tilde.values)) < 1e-12
    assert np.max(np.abs(tilde.B_tilde.values)) < 1e-12


def test_tilde_fields_start_from_the_transverse_part(grid):
    rho = scalar_field(grid, lambda x1, x2: np.cos(2 * np.pi * x1))
    wave = vector_field(grid, lambda x1, x2: (np.zeros_like(x1), np.cos(2 * np.pi * x1)))
    E0 = VectorField(grid, solve_poisson(rho).values + wave.values)
    B0 = ScalarField(grid, np.zeros((grid.n, grid.n)))
    tilde = compute_tilde_fields(E0, B0, rho, 1.0, 0.0)
    np.testing.assert_allclose(tilde.E_tilde.values, wave.values, atol=1e-12)


def test_rk4_oracle_agrees_with_exact_evolution(grid):
    src = approx_sweep_source(grid, 0.5, 1e-3, 0.5, 0.5)
    assert src.nt % 2 == 1
    state = EMState.zero(grid, 1.0)
    exact = evolve_maxwell(state, src)
    oracle = step_maxwell_rk4(state, src)
    np.testing.assert_allclose(oracle.times, exact.times[::2])
    assert np.max(np.abs(oracle.E_hat - exact.E_hat[::2])) < 1e-7
    assert np.max(np.abs(oracle.B_hat - exact.B_hat[::2])) < 1e-7


def test_rk4_oracle_needs_odd_sample_count(grid):
    with pytest.raises(FieldError):
        step_maxwell_rk4(EMState.zero(grid, 1.0), SourceMoments.zeros(grid, np.linspace(0.0, 0.3, 4)))


def test_zero_mean_current_value(grid):
    times = uniform_times(0.1, 0.05)
    src = SourceMoments.from_callables(grid, times, lambda t, x1, x2: np.ones_like(x1),
                                       lambda t, x1, x2: (np.full_like(x1, 0.3), np.full_like(x1, 0.4)))
    assert check_zero_mean_current(src) == pytest.approx(0.5)
    with pytest.raises(ZeroMeanCurrentError):
        verify_approx_lemma(EMState.zero(grid, 1.0), src, [10.0, 20.0])


def test_classical_limit_error_falls_with_c():
    grid = GridSpec(16, 3)
    src = approx_sweep_source(grid, 0.25, 1e-3, 0.5, 0.5)
    report = verify_approx_lemma(EMState.zero(grid, 1.0), src, [10.0, 40.0])
    assert report.within_bound
    assert report.sup_errors_E[1] < 0.5 * report.sup_errors_E[0]
    assert report.sup_errors_B[1] < 0.5 * report.sup_errors_B[0]
    assert report.slope_E < 0
    assert len(report.rows) == 2 * src.nt


def test_approx_constants_vanish_without_sources(grid):
    bound = approx_constants(SourceMoments.zeros(grid, uniform_times(0.5, 0.01)))
    assert bound.C_rho_j == 0.0
    assert bound.C_prime_rho_j == 0.0


def test_approx_constants_of_a_single_current_mode(grid):
    a = 0.3
    src = SourceMoments.from_callables(grid, uniform_times(0.5, 0.01), lambda t, x1, x2: np.ones_like(x1),
                                       lambda t, x1, x2: (a * np.sin(2 * np.pi * x2), np.zeros_like(x1)))
    bound = approx_constants(src)
    assert bound.C_rho_j == pytest.approx(a, abs=1e-9)
    assert bound.C_prime_rho_j == pytest.approx(a, abs=1e-9)


@pytest.mark.parametrize("T", [1.0, 0.5])
def test_mean_current_drives_the_mean_field(grid, T):
    src = SourceMoments.from_callables(grid, uniform_times(T, 0.01), lambda t, x1, x2: np.zeros_like(x1),
                                       lambda t, x1, x2: (np.full_like(x1, -1.0 / T), np.zeros_like(x1)))
    traj = evolve_maxwell(EMState.zero(grid, 1.0), src)
    E = traj.E_values()[-1]
    np.testing.assert_allclose(E[0], 1.0, atol=1e-12)
    np.testing.assert_allclose(E[1], 0.0, atol=1e-12)
    np.testing.assert_allclose(traj.B_values()[-1], 0.0, atol=1e-12)


def test_tilde_fields_by_hand(grid):
    c, t = 3.0, 0.1
    theta = 2 * np.pi * c * t
    E0 = vector_field(grid, lambda x1, x2: (np.zeros_like(x1), np.cos(2 * np.pi * x1)))
    B0 = scalar_field(grid, lambda x1, x2: np.cos(2 * np.pi * x1))
    rho0 = scalar_field(grid, lambda x1, x2: np.cos(2 * np.pi * x2))
    tilde = compute_tilde_fields(E0, B0, rho0, c, t)
    x1, x2 = grid.nodes
    E2 = (np.cos(theta) * np.cos(2 * np.pi * x1) + np.sin(theta) * np.sin(2 * np.pi * x1)
          - np.cos(theta) * np.sin(2 * np.pi * x2) / (2 * np.pi))
    B = np.sin(theta) * np.sin(2 * np.pi * x1) + np.cos(theta) * np.cos(2 * np.pi * x1)
    np.testing.assert_allclose(tilde.E_tilde.values[0], 0.0, atol=1e-12)
    np.testing.assert_allclose(tilde.E_tilde.values[1], E2, atol=1e-12)
    np.testing.assert_allclose(tilde.B_tilde.values, B, atol=1e-12)


def test_tilde_fields_follow_free_evolution(grid):
    c = 2.0
    E0 = vector_field(grid, lambda x1, x2: (np.cos(2 * np.pi * x2), np.cos(2 * np.pi * x1)))
    B0 = scalar_field(grid, lambda x1, x2: 0.5 * np.sin(2 * np.pi * (x1 + x2)))
    times = uniform_times(0.3, 0.01)
    traj = evolve_maxwell(EMState(0.0, E0, B0, c), SourceMoments.zeros(grid, times))
    tilde = compute_tilde_fields(E0, B0, ScalarField(grid, np.zeros((grid.n, grid.n))), c, times)
    np.testing.assert_allclose(traj.E_values(), tilde.E_tilde.values, atol=1e-10)
    np.testing.assert_allclose(traj.B_values(), tilde.B_tilde.values, atol=1e-10)

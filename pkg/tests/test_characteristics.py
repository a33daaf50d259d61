import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from particles import (ForceSpec, GriddedField, PhaseState, SpectralSeriesField, angle_rate, constant_vector,
                       gronwall_compare, integrate, lorentz_factor, perp, relativistic_velocity, speed_rate, steps,
                       w1inf_norm)
from spectral import ScalarField, real_values, spectral_coeffs
from utils import TrajectoryError

speeds = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)


@given(speeds, speeds, st.floats(min_value=0.1, max_value=100.0))
@settings(max_examples=80, deadline=None)
def test_relativistic_velocity_stays_below_c(v1, v2, c):
    vhat = relativistic_velocity(np.array([v1, v2]), c)
    assert np.linalg.norm(vhat) < c


@pytest.mark.parametrize("c", [0.0, -1.0])
def test_non_positive_c_is_rejected(c):
    with pytest.raises(TrajectoryError):
        relativistic_velocity(np.array([1.0, 0.0]), c)
    with pytest.raises(TrajectoryError):
        ForceSpec(c)


def test_infinite_c_is_classical():
    v = np.array([[3.0, -4.0]])
    np.testing.assert_array_equal(relativistic_velocity(v, math.inf), v)
    assert lorentz_factor(v, math.inf)[0] == 1.0


def test_perp_twice_is_minus_identity():
    v = np.array([[0.3, -1.2], [2.0, 5.0]])
    np.testing.assert_array_equal(perp(perp(v)), -v)
    np.testing.assert_array_equal(perp(np.array([1.0, 0.0])), [0.0, -1.0])


def test_phase_state_shapes_must_match():
    with pytest.raises(TrajectoryError):
        PhaseState(np.zeros((2, 2)), np.zeros((3, 2)))


@pytest.mark.parametrize("c", [1.0, 10.0, math.inf])
def test_gyration_radius_and_period(c):
    start = PhaseState(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
    gamma = float(lorentz_factor(start.v, c))
    period = 2 * math.pi * gamma
    traj = integrate(start, ForceSpec.magnetic(1.0, c), 0.0, period, 1e-3)
    displacement = np.linalg.norm(traj.x_lift - start.x, axis=-1)
    assert displacement.max() == pytest.approx(2.0, abs=1e-4)
    np.testing.assert_allclose(traj.x_lift[-1], start.x, atol=1e-8)
    np.testing.assert_allclose(traj.v[-1], start.v, atol=1e-8)


def test_magnetic_force_keeps_the_speed():
    start = PhaseState(np.array([[0.1, 0.2], [0.7, 0.4]]), np.array([[2.0, 1.0], [-0.5, 3.0]]))
    traj = integrate(start, ForceSpec.magnetic(1.7, 5.0), 0.0, 2.0, 1e-3)
    np.testing.assert_allclose(traj.speed, traj.speed[0], rtol=1e-9)


def test_angle_rate_matches_the_trajectory():
    c = 2.0
    start = PhaseState(np.array([0.0, 0.0]), np.array([1.5, 0.5]))
    traj = integrate(start, ForceSpec.magnetic(1.0, c), 0.0, 0.5, 1e-3)
    measured = np.gradient(traj.theta, traj.times)
    predicted = float(angle_rate(start, 1.0, c))
    assert predicted == pytest.approx(1.0 / float(lorentz_factor(start.v, c)))
    np.testing.assert_allclose(measured[5:-5], predicted, rtol=1e-6)


def test_angle_and_speed_rates_with_an_extra_force():
    state = PhaseState(np.zeros(2), np.array([1.0, 0.0]))
    assert float(angle_rate(state, 0.0, math.inf, F_extra=np.array([0.0, 2.0]))) == pytest.approx(-2.0)
    assert float(speed_rate(state, F_extra=np.array([3.0, 1.0]))) == pytest.approx(3.0)
    assert speed_rate(state) == 0.0


def test_angle_rate_needs_a_velocity():
    with pytest.raises(TrajectoryError):
        angle_rate(PhaseState(np.zeros(2), np.zeros(2)), 1.0, math.inf)


def test_w1inf_norm_of_constant_and_wave(grid):
    assert w1inf_norm(-2.5) == 2.5
    x1, _ = grid.nodes
    b = ScalarField(grid, np.sin(2 * np.pi * x1))
    assert w1inf_norm(b) == pytest.approx(1.0 + 2 * np.pi, rel=1e-3)


def test_gronwall_bound_holds_for_a_small_push():
    start = PhaseState(np.array([[0.2, 0.3]]), np.array([[1.0, 0.5]]))
    report = gronwall_compare(start, 1.0, constant_vector((0.01, 0.0)), 0.01, 1.0, dt=1e-3)
    assert report.passed
    assert report.dev_v[-1, 0] > 0.0


def test_steps_land_on_the_end_time():
    force = ForceSpec.magnetic(1.0)
    times = [t for t, _, _ in steps(np.zeros(2), np.array([1.0, 0.0]), force, 0.0, 0.35, 0.1)]
    assert times[0] == 0.0
    assert len(times) == 5
    assert times[-1] == pytest.approx(0.35, abs=1e-15)


def test_backward_integration_retraces():
    force = ForceSpec.magnetic(1.3, 3.0, constant_vector((0.2, -0.1)))
    start = PhaseState(np.array([0.4, 0.9]), np.array([0.8, -1.1]))
    forward = integrate(start, force, 0.0, 1.0, 1e-3)
    back = integrate(forward.final, force, 1.0, 0.0, 1e-3)
    np.testing.assert_allclose(np.mod(back.x_lift[-1], 1.0), start.x, atol=1e-10)
    np.testing.assert_allclose(back.v[-1], start.v, atol=1e-10)


def test_gridded_field_interpolates_nodes(grid, rng):
    values = rng.standard_normal((grid.n, grid.n))
    field = GriddedField.constant(values)
    nodes = grid.nodes.reshape(2, -1).T
    np.testing.assert_allclose(field(0.0, nodes), values.ravel(), atol=1e-9)


def test_gridded_field_is_linear_in_time(grid):
    values = np.stack([np.zeros((2, grid.n, grid.n)), np.ones((2, grid.n, grid.n))])
    field = GriddedField(np.array([0.0, 1.0]), values)
    np.testing.assert_allclose(field(0.25, np.array([[0.3, 0.6]])), [[0.25, 0.25]], atol=1e-12)
    np.testing.assert_allclose(field(2.0, np.array([[0.3, 0.6]])), [[1.0, 1.0]], atol=1e-12)


def test_spectral_series_field_is_linear_in_time(grid, hermitian_coeffs):
    coeffs = np.stack([hermitian_coeffs(1), hermitian_coeffs(2)])
    field = SpectralSeriesField(grid, np.array([0.0, 2.0]), coeffs)
    nodes = grid.nodes.reshape(2, -1).T
    expected = 0.5 * (real_values(grid, coeffs[0]) + real_values(grid, coeffs[1])).ravel()
    np.testing.assert_allclose(field(1.0, nodes), expected, atol=1e-12)


def test_magnetic_force_from_a_field(grid):
    b = ScalarField(grid, np.full((grid.n, grid.n), 2.0))
    force = ForceSpec.magnetic(b)
    f = force.force(0.0, np.array([[0.3, 0.3]]), np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(f, [[0.0, -2.0]], atol=1e-12)
    assert spectral_coeffs(grid, b.values)[grid.k_max, grid.k_max] == pytest.approx(2.0)

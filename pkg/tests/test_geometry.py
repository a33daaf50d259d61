import math

import numpy as np
import pytest

from geometry import (BallUnion, BendingParams, GridMask, MagneticCertificate, Strip, bending_gamma,
                      census_samples, certify_bending, check_gcc, control_set_from_spec, derive_bending_params,
                      direction_angles, enumerate_bad_directions, first_ball_hit, min_angular_gap,
                      verify_bending_lemma, whole)
from spectral import ScalarField
from utils import GeometryError, InfeasibleParametersError


def test_whole_torus_satisfies_gcc_immediately():
    report = check_gcc(whole(), n_dirs=8, n_starts=4)
    assert report.holds
    assert report.L == 0.0
    assert report.witness is None
    assert report.n_rays == 8 * 16


def test_strip_is_refuted_by_a_parallel_ray():
    strip = Strip((1, 0), (0.0, 0.5), 0.1)
    report = check_gcc(strip, n_dirs=8, n_starts=4, L_max=5.0)
    assert not report.holds
    x, e = report.witness
    np.testing.assert_allclose(e, [1.0, 0.0], atol=1e-12)
    assert not strip.contains(np.array(x))
    assert report.to_dict()["L"] is None


def test_cross_mask_satisfies_gcc():
    n = 32
    values = np.zeros((n, n), dtype=bool)
    values[12:20, :] = True
    values[:, 12:20] = True
    report = check_gcc(GridMask(values), n_dirs=8, n_starts=4, L_max=5.0)
    assert report.holds
    assert 0.0 < report.L < 2.0


def test_single_ball_fails_gcc():
    report = check_gcc(BallUnion([(0.5, 0.5, 0.3)]), n_dirs=8, n_starts=4, L_max=5.0)
    assert not report.holds


@pytest.mark.parametrize("direction, half_width", [((2, 2), 0.1), ((0, 0), 0.1), ((1, 1), 0.36), ((1, 0), 0.0)])
def test_invalid_strips_are_rejected(direction, half_width):
    with pytest.raises(GeometryError):
        Strip(direction, (0.0, 0.0), half_width)


def test_strip_depth_and_erosion():
    strip = Strip((1, 0), (0.0, 0.5), 0.1)
    assert strip.depth(np.array([0.3, 0.5])) == pytest.approx(0.1)
    assert strip.depth(np.array([0.3, 0.7])) == pytest.approx(-0.1)
    assert strip.eroded(0.05).half_width == pytest.approx(0.05)
    assert isinstance(strip.eroded(0.2), BallUnion)


def test_strip_first_hit_crossing():
    strip = Strip((1, 0), (0.0, 0.5), 0.1)
    y = strip.first_hit(np.array([[0.2, 0.0]]), np.array([[0.0, 1.0]]), 2.0)
    assert y[0] == pytest.approx(0.4)
    inside = strip.first_hit(np.array([[0.2, 0.5]]), np.array([[1.0, 0.0]]), 2.0)
    assert inside[0] == 0.0


def test_ball_union_wraps_around():
    balls = BallUnion([(0.05, 0.5, 0.1), (0.5, 0.5, 0.2)])
    assert balls.contains(np.array([0.98, 0.5]))
    assert balls.depth(np.array([0.5, 0.5])) == pytest.approx(0.2)
    assert not balls.contains(np.array([0.0, 0.0]))
    assert len(balls.eroded(0.15).balls) == 1


def test_ball_radius_must_stay_below_half():
    with pytest.raises(GeometryError):
        BallUnion([(0.5, 0.5, 0.5)])


def test_first_ball_hit_distance():
    hits = first_ball_hit(np.array([[-0.5, 0.0], [-0.5, 0.3]]), np.array([[1.0, 0.0], [1.0, 0.0]]), 0.1, 10.0)
    assert hits[0] == pytest.approx(0.4)
    assert math.isinf(hits[1])


def test_control_set_kinds():
    assert control_set_from_spec({"kind": "whole"}).contains(np.array([0.1, 0.9]))
    cross = control_set_from_spec({"kind": "cross", "center": [0.5, 0.5], "radius": 0.1, "spacing": 0.25})
    assert len(cross.balls) == 7
    mask = control_set_from_spec({"kind": "mask", "values": np.ones((8, 8), dtype=bool).tolist()})
    assert mask.is_whole
    with pytest.raises(GeometryError):
        control_set_from_spec({"kind": "hexagon"})
    with pytest.raises(GeometryError):
        control_set_from_spec({"kind": "strip", "direction": [1, 0]})


def test_bad_directions_for_a_wide_ball():
    bad = enumerate_bad_directions((0.5, 0.5), 0.3)
    assert len(bad) == 8
    assert bad[:4] == [(1, 0), (0, 1), (-1, 0), (0, -1)]
    assert set(bad[4:]) == {(1, 1), (-1, 1), (-1, -1), (1, -1)}
    assert min_angular_gap(direction_angles(bad)) == pytest.approx(math.pi / 4)


def test_bad_directions_edge_cases():
    assert enumerate_bad_directions((0.5, 0.5), 0.5) == []
    with pytest.raises(GeometryError):
        enumerate_bad_directions((0.5, 0.5), 0.0)
    assert min_angular_gap(np.array([1.0])) == pytest.approx(2 * math.pi)


def test_bending_gamma():
    assert bending_gamma(0.0, 0.125, 1.0, 1.0) == pytest.approx(0.0625)
    assert bending_gamma(1.0, 0.1, 2.0, -0.5) == pytest.approx(-0.4)


def test_constant_field_certificate(grid):
    b = ScalarField(grid, np.ones((grid.n, grid.n)))
    cert = certify_bending(b, 0.5, n_dirs=8, n_starts=4)
    assert cert.valid
    assert cert.sign == 1
    assert cert.D == 0.0
    assert cert.gamma == pytest.approx(0.5 * cert.d * cert.b_lower)
    assert cert.b_lower == pytest.approx(1.0)
    assert cert.window == pytest.approx(0.5 * cert.d)


def test_negative_field_flips_the_sign(grid):
    cert = certify_bending(ScalarField(grid, -np.ones((grid.n, grid.n))), 0.5, n_dirs=8, n_starts=4)
    assert cert.valid
    assert cert.sign == -1


def test_weak_field_has_no_certificate(grid):
    cert = certify_bending(ScalarField(grid, np.full((grid.n, grid.n), 0.1)), 0.5, n_dirs=8, n_starts=4)
    assert not cert.valid
    assert "empty" in cert.diagnostic
    with pytest.raises(GeometryError):
        certify_bending(ScalarField(grid, np.ones((grid.n, grid.n))), 0.0)


def test_parameters_need_a_valid_certificate():
    with pytest.raises(InfeasibleParametersError):
        derive_bending_params(MagneticCertificate(False), (0.5, 0.5), 0.3, 1.0)


def test_parameters_pass_their_own_constraints(grid):
    cert = certify_bending(ScalarField(grid, np.ones((grid.n, grid.n))), 0.5, n_dirs=8, n_starts=4)
    params = derive_bending_params(cert, (0.5, 0.5), 0.8, 1.0, n_dirs=16, n_starts=8)
    assert params.N_bad == 8
    assert params.c0 == params.m
    assert params.M > params.m
    assert all(check["ok"] for check in params.constraints.values())
    assert params.T == pytest.approx(4.0 * (params.T_m + params.tau))


def test_census_sample_grid():
    table = census_samples([2, 2, 3, 2], 1.0, 4.0)
    assert table.shape == (24, 4)
    assert set(np.unique(table[:, 3])) == {1.0, 4.0}


def _straight_params(T: float) -> BendingParams:
    return BendingParams(m=1.0, c0=1.0, M=1.0, tau=0.0, beta=0.1, N_bad=0, L=1.0, T=T, T_m=0.0, kappa=0.0,
                         window=0.0, n_rotations=0, gap=1.0)


def test_straight_census_hits_only_the_diagonals():
    census = verify_bending_lemma(None, _straight_params(1.6), (0.5, 0.5), 0.4, 0.0, math.inf, [1, 1, 8, 1])
    assert census.n_samples == 8
    assert census.hit_fraction == pytest.approx(0.5)
    assert census.band_fraction == 1.0
    assert not census.passed
    hit = np.isfinite(census.hit_times)
    np.testing.assert_array_equal(hit, [False, True, False, True, False, True, False, True])
    np.testing.assert_allclose(census.hit_times[hit], math.sqrt(0.5) - 0.198, atol=1e-3)
    assert len(list(census.rows())) == 8

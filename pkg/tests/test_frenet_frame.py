"""Tests for reference lines and Frenet conversion."""

from __future__ import annotations

import math

import numpy as np
import pytest

from ecoplan.errors import AmbiguousProjectionError, DomainError
from ecoplan.frenet_frame import (
    CartesianPoint,
    FrenetPoint,
    GlobalPath,
    ParticleFootprint,
    PolygonFootprint,
    ReferenceLine,
    SLBox,
    SmoothingWeights,
    STParticle,
    extract_window,
    project_obstacle,
    smooth_reference,
    to_cartesian,
    to_frenet,
)


def _arc(radius: float = 50.0, sweep: float = math.pi / 2, count: int = 200) -> ReferenceLine:
    angles = np.linspace(0.0, sweep, count)
    points = np.column_stack([radius * np.sin(angles), radius * (1 - np.cos(angles))])
    return ReferenceLine.from_points(points)


def test_global_path_geometry():
    path = GlobalPath.from_points([(0, 0), (3, 4), (3, 10)])
    np.testing.assert_allclose(path.arc_lengths, [0.0, 5.0, 11.0])
    np.testing.assert_allclose(path.point_at(8.0), [3.0, 7.0])
    s, distance = path.project((5.0, 7.0))
    assert s == pytest.approx(8.0)
    assert distance == pytest.approx(2.0)
    assert path.resample(1.0).shape == (12, 2)


def test_global_path_rejects_repeated_waypoints():
    with pytest.raises(ValueError, match="distinct"):
        GlobalPath.from_points([(0, 0), (0, 0), (1, 0)])


def test_window_is_clamped_and_keeps_route_offset():
    path = GlobalPath.from_points([(0, 0), (100, 0), (200, 0)])
    window = extract_window(path, (150.0, 1.0), behind_m=30.0, ahead_m=150.0)
    assert window.s_offset_m == pytest.approx(120.0)
    assert window.length_m == pytest.approx(80.0)
    start = extract_window(path, (10.0, 0.0), behind_m=30.0, ahead_m=50.0)
    assert start.s_offset_m == 0.0
    assert start.length_m == pytest.approx(60.0)


def test_window_collapsing_to_a_point_is_a_domain_error():
    path = GlobalPath.from_points([(0, 0), (100, 0)])
    with pytest.raises(DomainError):
        extract_window(path, (100.0, 0.0), behind_m=0.0, ahead_m=10.0)


def test_straight_line_frenet_roundtrip(straight_line):
    point = to_frenet((42.0, 1.5), straight_line)
    assert point.s == pytest.approx(42.0)
    assert point.l == pytest.approx(1.5)
    back = to_cartesian(FrenetPoint(42.0, -2.0), straight_line)
    assert back.x == pytest.approx(42.0)
    assert back.y == pytest.approx(-2.0)


def test_arc_curvature_and_offsets():
    line = _arc()
    assert float(line.curvature_at(line.length_m / 2)) == pytest.approx(1 / 50.0, rel=1e-3)
    inner = to_cartesian(FrenetPoint(line.length_m / 2, 2.0), line)
    point = to_frenet(inner, line)
    assert point.s == pytest.approx(line.length_m / 2, abs=1e-6)
    assert point.l == pytest.approx(2.0, abs=1e-6)
    assert math.hypot(inner.x, inner.y - 50.0) == pytest.approx(48.0, abs=1e-3)


def test_offset_beyond_the_curvature_radius_is_rejected():
    line = _arc()
    with pytest.raises(DomainError, match="folds"):
        to_cartesian(FrenetPoint(line.length_m / 2, 60.0), line)


def test_points_beyond_the_line_are_rejected(straight_line):
    with pytest.raises(DomainError):
        to_frenet((250.0, 0.0), straight_line)
    with pytest.raises(DomainError):
        to_cartesian(FrenetPoint(-1.0, 0.0), straight_line)


def test_equidistant_pose_is_ambiguous():
    theta = np.linspace(0.0, 2 * math.pi * 0.9, 200)
    line = ReferenceLine.from_points(np.column_stack([10 * np.cos(theta), 10 * np.sin(theta)]))
    with pytest.raises(AmbiguousProjectionError) as info:
        to_frenet((0.0, 0.0), line)
    assert len(info.value.candidates) >= 2


def test_smoothing_pins_ends_and_reduces_roughness():
    rng = np.random.default_rng(2)
    xs = np.linspace(0.0, 60.0, 61)
    raw = GlobalPath(waypoints=np.column_stack([xs, rng.normal(0.0, 0.2, xs.size)]))
    line = smooth_reference(raw, SmoothingWeights(), ds_m=1.0)
    assert not line.smoothing_fallback
    np.testing.assert_allclose([line.x[0], line.y[0]], raw.waypoints[0], atol=1e-6)
    np.testing.assert_allclose([line.x[-1], line.y[-1]], raw.waypoints[-1], atol=1e-6)
    raw_roughness = np.sum(np.diff(raw.waypoints[:, 1], 2) ** 2)
    assert np.sum(np.diff(line.y, 2) ** 2) < raw_roughness


def test_smoothing_keeps_route_offset():
    raw = GlobalPath.from_points([(0, 0), (10, 0)], s_offset_m=250.0)
    line = smooth_reference(raw)
    assert line.s_offset_m == 250.0
    assert line.to_rows()[0]["s"] == pytest.approx(250.0)


def test_smoothing_needs_three_points():
    raw = GlobalPath.from_points([(0, 0), (0.5, 0)])
    with pytest.raises(DomainError):
        smooth_reference(raw, ds_m=1.0)


def test_polygon_projects_to_box(straight_line):
    corners = tuple(CartesianPoint(x, y) for x, y in [(50, -1), (55, -1), (55, 1), (50, 1)])
    box = project_obstacle(PolygonFootprint(corners), straight_line)
    assert isinstance(box, SLBox)
    assert (box.s_lo, box.s_hi) == pytest.approx((50.0, 55.0))
    assert (box.l_lo, box.l_hi) == pytest.approx((-1.0, 1.0))
    assert box.lateral_gap(2.0, 3.0) == pytest.approx(1.0)
    assert box.longitudinal_gap(40.0) == pytest.approx(10.0)


def test_particle_projects_along_the_line(straight_line):
    footprint = ParticleFootprint(
        centre=CartesianPoint(30.0, 3.5), heading_rad=math.pi / 3, speed_ms=10.0, length_m=4.0
    )
    particle = project_obstacle(footprint, straight_line)
    assert isinstance(particle, STParticle)
    assert particle.s0_m == pytest.approx(30.0)
    assert particle.l_m == pytest.approx(3.5)
    assert particle.speed_ms == pytest.approx(5.0)
    assert particle.s_at(2.0) == pytest.approx(40.0)
    assert particle.gap(0.0, 20.0, 4.0) == pytest.approx(6.0)


def test_obstacles_off_the_line_are_dropped(straight_line):
    corners = tuple(CartesianPoint(x, y) for x, y in [(300, 0), (305, 0), (305, 1), (300, 1)])
    assert project_obstacle(PolygonFootprint(corners), straight_line) is None
    far = ParticleFootprint(centre=CartesianPoint(-50.0, 0.0), heading_rad=0.0, speed_ms=5.0)
    assert project_obstacle(far, straight_line) is None

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajclone.geometry import (
    ARC,
    STRAIGHT,
    FrenetCoord,
    Pose,
    ProjectionError,
    SegmentSpec,
    TrackSpec,
    build_track,
    car_frame_to_world,
    centerline_pose,
    curvature_at,
    frenet_to_world,
    wrap_angle,
    world_to_car_frame,
    world_to_frenet,
)
from trajclone.trackgen import generate_track


def straight_track(length=100.0, closed=False, **kw):
    return build_track(TrackSpec((SegmentSpec(STRAIGHT, length),),
                                 closed=closed, **kw))


def circle_track(radius=100.0, ccw=True):
    k = (1.0 if ccw else -1.0) / radius
    return build_track(TrackSpec(
        (SegmentSpec(ARC, 2.0 * math.pi * radius, k),), closed=True))


class TestBuildTrack:
    def test_single_straight(self):
        t = straight_track(100.0)
        assert t.total_length == 100.0
        assert centerline_pose(t, 0.0) == Pose(0.0, 0.0, 0.0)
        end = centerline_pose(t, 100.0)
        assert end.x == pytest.approx(100.0, abs=1e-12)
        assert end.y == pytest.approx(0.0, abs=1e-12)

    def test_full_circle_closes(self):
        t = circle_track(100.0)
        end = t.segments[-1].end_pose()
        assert math.hypot(end.x, end.y) < 1e-9
        assert abs(wrap_angle(end.heading)) < 1e-9

    def test_straight_plus_arc_heading(self):
        # heading integrates curvature: 0.02 * 78.5398 = 1.570796
        spec = TrackSpec((SegmentSpec(STRAIGHT, 50.0),
                          SegmentSpec(ARC, 78.5398, 0.02)), closed=False)
        t = build_track(spec)
        end = centerline_pose(t, t.total_length)
        assert end.heading == pytest.approx(0.02 * 78.5398, abs=1e-9)

    def test_rejects_empty_and_bad_specs(self):
        with pytest.raises(ValueError):
            TrackSpec(())
        with pytest.raises(ValueError):
            SegmentSpec(STRAIGHT, -5.0)
        with pytest.raises(ValueError):
            SegmentSpec(ARC, 10.0, 0.0)
        with pytest.raises(ValueError):
            TrackSpec((SegmentSpec(ARC, 10.0, 0.2),), lane_width=3.5, num_lanes=2)
        with pytest.raises(ValueError):
            TrackSpec((SegmentSpec(STRAIGHT, 10.0),), num_lanes=1)

    def test_open_track_not_closing_is_fine_but_closed_must_close(self):
        spec = TrackSpec((SegmentSpec(STRAIGHT, 10.0),), closed=True)
        with pytest.raises(ValueError, match="does not close"):
            build_track(spec)

    def test_heading_continuity_at_joins(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            t = generate_track(rng)
            for seg, nxt in zip(t.segments, t.segments[1:]):
                assert abs(wrap_angle(seg.end_pose().heading - nxt.psi0)) < 1e-9


class TestCurvatureAt:
    def test_piecewise_values_and_join_tiebreak(self):
        spec = TrackSpec((SegmentSpec(STRAIGHT, 50.0),
                          SegmentSpec(ARC, 100.0, 0.02)), closed=False)
        t = build_track(spec)
        assert curvature_at(t, 10.0) == 0.0
        assert curvature_at(t, 70.0) == 0.02
        # the join belongs to the following segment
        assert curvature_at(t, 50.0) == 0.02
        assert curvature_at(t, 50.0 - 1e-9) == 0.0
        assert curvature_at(t, 50.0 + 1e-9) == 0.02

    def test_closed_wraps_open_errors(self):
        t = circle_track(100.0)
        s = t.total_length + 5.0
        assert curvature_at(t, s) == curvature_at(t, 5.0)
        t_open = straight_track(100.0)
        with pytest.raises(ValueError):
            curvature_at(t_open, 150.0)


class TestFrenet:
    def test_centerline_point(self):
        t = straight_track(100.0)
        fc = world_to_frenet(t, (10.0, 0.0))
        assert fc.s == pytest.approx(10.0, abs=1e-12)
        assert fc.d == pytest.approx(0.0, abs=1e-12)

    def test_left_offset_on_straight(self):
        t = straight_track(100.0)
        fc = world_to_frenet(t, (10.0, 2.0))
        assert fc.d == pytest.approx(2.0, abs=1e-12)

    def test_circle_radius_offset(self):
        # ccw circle of radius 100, center (0, 100): a point at radius 98
        # sits 2 m toward the center, i.e. 2 m left of the centerline
        t = circle_track(100.0)
        fc = world_to_frenet(t, (0.0, 2.0))
        assert abs(fc.d) == pytest.approx(2.0, abs=1e-9)
        assert fc.d == pytest.approx(2.0, abs=1e-9)

    def test_projection_failure(self):
        t = straight_track(100.0)
        with pytest.raises(ProjectionError):
            world_to_frenet(t, (50.0, 500.0))

    def test_round_trip_random_points(self):
        rng = np.random.default_rng(42)
        for track_seed in range(4):
            t = generate_track(np.random.default_rng(track_seed))
            s = rng.uniform(0.0, t.total_length, 2500)
            d = rng.uniform(-t.half_width, t.half_width, 2500)
            for si, di in zip(s, d):
                x, y = frenet_to_world(t, (si, di))
                fc = world_to_frenet(t, (x, y))
                xx, yy = frenet_to_world(t, fc)
                assert math.hypot(xx - x, yy - y) < 1e-6


class TestCarFrame:
    def test_identity_pose(self):
        assert world_to_car_frame(Pose(0, 0, 0), (5.0, 0.0)) == (5.0, 0.0)

    def test_hand_computed_rotation(self):
        ex, ey = world_to_car_frame(Pose(1.0, 1.0, math.pi / 2), (1.0, 3.0))
        assert ex == pytest.approx(2.0, abs=1e-12)
        assert ey == pytest.approx(0.0, abs=1e-12)

    @given(st.floats(-100, 100), st.floats(-100, 100),
           st.floats(-math.pi, math.pi), st.floats(-50, 50), st.floats(-50, 50))
    @settings(max_examples=100)
    def test_round_trip(self, x, y, heading, px, py):
        pose = Pose(x, y, heading)
        back = car_frame_to_world(pose, world_to_car_frame(pose, (px, py)))
        assert math.hypot(back[0] - px, back[1] - py) < 1e-9

    @given(st.floats(-10, 10), st.floats(-10, 10),
           st.floats(-math.pi, math.pi),
           st.tuples(st.floats(-20, 20), st.floats(-20, 20)),
           st.tuples(st.floats(-20, 20), st.floats(-20, 20)))
    @settings(max_examples=100)
    def test_preserves_distances(self, x, y, heading, p, q):
        pose = Pose(x, y, heading)
        tp = world_to_car_frame(pose, p)
        tq = world_to_car_frame(pose, q)
        d_world = math.hypot(p[0] - q[0], p[1] - q[1])
        d_car = math.hypot(tp[0] - tq[0], tp[1] - tq[1])
        assert abs(d_world - d_car) < 1e-9


class TestWrapAngle:
    @given(st.floats(-100.0, 100.0))
    @settings(max_examples=200)
    def test_range(self, theta):
        w = wrap_angle(theta)
        assert -math.pi < w <= math.pi
        # same angle modulo 2pi
        assert abs(math.remainder(w - theta, 2 * math.pi)) < 1e-9

    def test_boundary(self):
        assert wrap_angle(math.pi) == math.pi
        assert wrap_angle(-math.pi) == math.pi

"""Piecewise straight/arc track centerlines, Frenet coordinates, and rigid-frame transforms.

A track is an ordered chain of constant-curvature segments, so every quantity
(poses, arc lengths, projections) is closed-form per segment: there is no
spline fitting and no discretization error in the centerline itself.
Sign conventions: positive curvature turns left, positive lateral offset d is
left of the centerline, headings are radians in (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

STRAIGHT = "straight"
ARC = "arc"


class ProjectionError(ValueError):
    """Point is too far from the centerline to project meaningfully."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = theta - TWO_PI * math.floor((theta + math.pi) / TWO_PI)
    return math.pi if w <= -math.pi else w


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))


@dataclass(frozen=True)
class FrenetCoord:
    s: float  # arc length along centerline, meters
    d: float  # signed lateral offset, meters, positive left


@dataclass(frozen=True)
class SegmentSpec:
    kind: str  # STRAIGHT or ARC
    length: float
    curvature: float = 0.0

    def __post_init__(self):
        if self.kind not in (STRAIGHT, ARC):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if not self.length > 0.0:
            raise ValueError(f"segment length must be positive, got {self.length}")
        if self.kind == STRAIGHT and self.curvature != 0.0:
            raise ValueError("straight segments must have zero curvature")
        if self.kind == ARC and self.curvature == 0.0:
            raise ValueError("arc segments need nonzero curvature")


@dataclass(frozen=True)
class TrackSpec:
    segments: tuple[SegmentSpec, ...]
    lane_width: float = 3.5
    num_lanes: int = 3
    closed: bool = True

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("track needs at least one segment")
        if self.lane_width <= 0.0:
            raise ValueError("lane_width must be positive")
        if self.num_lanes < 2:
            raise ValueError("need at least two lanes so overtaking is possible")
        road_width = self.lane_width * self.num_lanes
        for seg in self.segments:
            if abs(seg.curvature) * road_width >= 1.0:
                raise ValueError(
                    f"curvature {seg.curvature} too tight for road width {road_width}"
                )


class _Segment:
    """Precomputed closed-form geometry for one constant-curvature piece."""

    __slots__ = ("kind", "length", "curvature", "x0", "y0", "psi0",
                 "cos0", "sin0", "cx", "cy", "phi0")

    def __init__(self, spec: SegmentSpec, start: Pose):
        self.kind = spec.kind
        self.length = spec.length
        self.curvature = spec.curvature
        self.x0 = start.x
        self.y0 = start.y
        self.psi0 = start.heading
        self.cos0 = math.cos(start.heading)
        self.sin0 = math.sin(start.heading)
        if spec.kind == ARC:
            k = spec.curvature
            # circle center sits 1/k to the left of the start heading
            self.cx = self.x0 - self.sin0 / k
            self.cy = self.y0 + self.cos0 / k
            self.phi0 = math.atan2(self.y0 - self.cy, self.x0 - self.cx)
        else:
            self.cx = self.cy = self.phi0 = 0.0

    def pose_at(self, s_local: float) -> Pose:
        if self.kind == STRAIGHT:
            return Pose(self.x0 + s_local * self.cos0,
                        self.y0 + s_local * self.sin0,
                        self.psi0)
        k = self.curvature
        psi = self.psi0 + k * s_local
        x = self.x0 + (math.sin(psi) - self.sin0) / k
        y = self.y0 - (math.cos(psi) - self.cos0) / k
        return Pose(x, y, psi)

    def end_pose(self) -> Pose:
        return self.pose_at(self.length)

    def project(self, px: float, py: float):
        """Perpendicular projection of a point onto this piece.

        Returns (s_local, d, dist) with s_local clamped to [0, length]; dist is
        the point-to-curve distance at the clamped parameter.
        """
        if self.kind == STRAIGHT:
            dx = px - self.x0
            dy = py - self.y0
            along = dx * self.cos0 + dy * self.sin0
            lateral = -dx * self.sin0 + dy * self.cos0
            if 0.0 <= along <= self.length:
                return along, lateral, abs(lateral)
            s_c = min(max(along, 0.0), self.length)
            ex = self.x0 + s_c * self.cos0
            ey = self.y0 + s_c * self.sin0
            return s_c, lateral, math.hypot(px - ex, py - ey)
        k = self.curvature
        r = 1.0 / abs(k)
        vx = px - self.cx
        vy = py - self.cy
        dist_c = math.hypot(vx, vy)
        d = (r - dist_c) if k > 0.0 else (dist_c - r)
        phi = math.atan2(vy, vx)
        sweep = (phi - self.phi0) * (1.0 if k > 0.0 else -1.0)
        sweep = sweep % TWO_PI
        s_along = sweep * r
        if s_along <= self.length:
            return s_along, d, abs(d)
        # closest point is one of the two endpoints
        # (measure the leftover sweep to decide which end is nearer in angle)
        if sweep - self.length / r < TWO_PI - sweep:
            s_c = self.length
        else:
            s_c = 0.0
        end = self.pose_at(s_c)
        return s_c, d, math.hypot(px - end.x, py - end.y)


class Track:
    """Immutable arc-length parameterized centerline with lane metadata."""

    def __init__(self, spec: TrackSpec):
        self.spec = spec
        self.closed = spec.closed
        self.lane_width = spec.lane_width
        self.num_lanes = spec.num_lanes
        self.half_width = 0.5 * spec.lane_width * spec.num_lanes

        segs = []
        cursor = Pose(0.0, 0.0, 0.0)
        bounds = [0.0]
        for sp in spec.segments:
            seg = _Segment(sp, cursor)
            segs.append(seg)
            cursor = seg.end_pose()
            bounds.append(bounds[-1] + sp.length)
        self.segments = segs
        self.seg_bounds = np.asarray(bounds, dtype=np.float64)
        self.total_length = float(bounds[-1])

        if self.closed:
            gap = math.hypot(cursor.x, cursor.y)
            dpsi = abs(wrap_angle(cursor.heading))
            if gap > 1e-6 or dpsi > 1e-8:
                raise ValueError(
                    f"closed track does not close: position gap {gap:.3e} m, "
                    f"heading gap {dpsi:.3e} rad"
                )

    def lane_center(self, lane: int) -> float:
        """Signed lateral offset of a lane center; lane 0 is the rightmost."""
        if not 0 <= lane < self.num_lanes:
            raise ValueError(f"lane {lane} out of range")
        return -self.half_width + self.lane_width * (lane + 0.5)

    def lane_of(self, d: float) -> int:
        idx = int(math.floor((d + self.half_width) / self.lane_width))
        return min(max(idx, 0), self.num_lanes - 1)

    def wrap_s(self, s: float) -> float:
        if self.closed:
            return s % self.total_length
        if not 0.0 <= s <= self.total_length:
            raise ValueError(f"s={s} outside open track [0, {self.total_length}]")
        return s

    def locate(self, s: float):
        """Segment index and local arc length for s; joins belong to the following segment."""
        s = self.wrap_s(s)
        if s == self.total_length:  # open-track endpoint
            return len(self.segments) - 1, self.segments[-1].length
        idx = int(np.searchsorted(self.seg_bounds[1:], s, side="right"))
        return idx, s - float(self.seg_bounds[idx])


def build_track(spec: TrackSpec) -> Track:
    return Track(spec)


def curvature_at(track: Track, s: float) -> float:
    idx, _ = track.locate(s)
    return track.segments[idx].curvature


def centerline_pose(track: Track, s: float) -> Pose:
    idx, s_local = track.locate(s)
    return track.segments[idx].pose_at(s_local)


def tangent_heading_at(track: Track, s: float) -> float:
    return centerline_pose(track, s).heading


def frenet_to_world(track: Track, fc) -> tuple[float, float]:
    s, d = (fc.s, fc.d) if isinstance(fc, FrenetCoord) else (fc[0], fc[1])
    pose = centerline_pose(track, s)
    return (pose.x - d * math.sin(pose.heading),
            pose.y + d * math.cos(pose.heading))


def world_to_frenet(track: Track, point, max_distance: float | None = None) -> FrenetCoord:
    """Project a world point onto the centerline.

    max_distance defaults to 3x the road half-width; projections farther than
    that raise ProjectionError.
    """
    if max_distance is None:
        max_distance = 3.0 * track.half_width
    px, py = float(point[0]), float(point[1])
    best = None
    for idx, seg in enumerate(track.segments):
        s_local, d, dist = seg.project(px, py)
        if best is None or dist < best[0]:
            best = (dist, idx, s_local, d)
    dist, idx, s_local, d = best
    if dist > max_distance:
        raise ProjectionError(
            f"point ({px:.2f}, {py:.2f}) is {dist:.2f} m from the centerline "
            f"(max {max_distance:.2f})"
        )
    s = float(track.seg_bounds[idx]) + s_local
    return FrenetCoord(track.wrap_s(s), d)


class FrenetTracker:
    """Incremental projection for a point that moves continuously along the track.

    Seeds from a global search, then each update only examines the previous
    segment and its neighbors, which keeps per-step cost O(1).
    """

    def __init__(self, track: Track, point):
        self.track = track
        fc = world_to_frenet(track, point)
        self.seg_idx, _ = track.locate(fc.s)
        self.coord = fc

    def update(self, point) -> FrenetCoord:
        track = self.track
        n = len(track.segments)
        px, py = float(point[0]), float(point[1])
        best = None
        for off in (0, -1, 1, -2, 2):
            idx = self.seg_idx + off
            if track.closed:
                idx %= n
            elif not 0 <= idx < n:
                continue
            s_local, d, dist = track.segments[idx].project(px, py)
            if best is None or dist < best[0]:
                best = (dist, idx, s_local, d)
        dist, idx, s_local, d = best
        if dist > 3.0 * track.half_width:
            # moved too far for the local window; redo the global search
            fc = world_to_frenet(track, point)
            self.seg_idx, _ = track.locate(fc.s)
            self.coord = fc
            return fc
        self.seg_idx = idx
        s = track.wrap_s(float(track.seg_bounds[idx]) + s_local)
        self.coord = FrenetCoord(s, d)
        return self.coord


def world_to_car_frame(pose: Pose, point) -> tuple[float, float]:
    """Rigid transform into the car frame: x along heading, y to the left."""
    dx = point[0] - pose.x
    dy = point[1] - pose.y
    c = math.cos(pose.heading)
    s = math.sin(pose.heading)
    return (c * dx + s * dy, -s * dx + c * dy)


def car_frame_to_world(pose: Pose, point) -> tuple[float, float]:
    c = math.cos(pose.heading)
    s = math.sin(pose.heading)
    return (pose.x + c * point[0] - s * point[1],
            pose.y + s * point[0] + c * point[1])


def edge_polylines(track: Track, ds: float = 0.5):
    """Sampled left/right road-edge polylines as (N, 2) arrays.

    Straight segments contribute exact endpoints; arcs are sampled every ds
    meters (chord error < 2 mm for the default radii). Closed tracks repeat
    the first vertex at the end so consecutive rows always form edge segments.
    """
    s_values = [0.0]
    for seg, s0 in zip(track.segments, track.seg_bounds[:-1]):
        if seg.kind == STRAIGHT:
            interior = []
        else:
            n = max(1, int(math.ceil(seg.length / ds)))
            interior = [seg.length * i / n for i in range(1, n)]
        s_values.extend(float(s0) + sl for sl in interior)
        s_values.append(float(s0) + seg.length)
    if track.closed:
        s_values[-1] = 0.0  # exact wrap instead of the numerically-closed end pose

    left = np.empty((len(s_values), 2))
    right = np.empty((len(s_values), 2))
    hw = track.half_width
    for i, s in enumerate(s_values):
        pose = centerline_pose(track, s)
        nx, ny = -math.sin(pose.heading), math.cos(pose.heading)
        left[i] = (pose.x + hw * nx, pose.y + hw * ny)
        right[i] = (pose.x - hw * nx, pose.y - hw * ny)
    return left, right

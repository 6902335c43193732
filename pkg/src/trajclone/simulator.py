"""Kinematic vehicle simulation: bicycle stepping, static obstacles, ray sensor, collision tests.

The world is deliberately minimal: a closed track, axis-of-road oriented
rectangular obstacles, and one ego vehicle integrated with forward Euler at a
fixed dt. Everything is deterministic given (seed, config).
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_left
from dataclasses import dataclass, replace

import numpy as np

from .geometry import (
    FrenetCoord,
    FrenetTracker,
    Pose,
    Track,
    centerline_pose,
    edge_polylines,
    frenet_to_world,
    wrap_angle,
)


@dataclass(frozen=True)
class VehicleLimits:
    steer_max: float = 0.5          # rad
    accel_min: float = -6.0         # m/s^2
    accel_max: float = 3.0          # m/s^2
    v_hard_max: float = 30.0        # m/s

    def clamp_action(self, steer: float, accel: float) -> "Action":
        return Action(
            min(max(steer, -self.steer_max), self.steer_max),
            min(max(accel, self.accel_min), self.accel_max),
        )


@dataclass(frozen=True)
class Action:
    steer: float   # rad, positive turns left
    accel: float   # m/s^2


@dataclass(frozen=True)
class VehicleState:
    pose: Pose
    speed: float      # m/s, never negative
    wheelbase: float  # m

    def __post_init__(self):
        if self.wheelbase <= 0.0:
            raise ValueError("wheelbase must be positive")


def step(state: VehicleState, action: Action, dt: float,
         v_hard_max: float = 30.0) -> VehicleState:
    """One forward-Euler update of the kinematic bicycle model.

    Position and heading advance with the pre-step speed; speed then updates
    and clamps to [0, v_hard_max]. No reverse driving.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    v = state.speed
    psi = state.pose.heading
    x = state.pose.x + v * math.cos(psi) * dt
    y = state.pose.y + v * math.sin(psi) * dt
    psi_new = wrap_angle(psi + (v / state.wheelbase) * math.tan(action.steer) * dt)
    v_new = min(max(v + action.accel * dt, 0.0), v_hard_max)
    return VehicleState(Pose(x, y, psi_new), v_new, state.wheelbase)


@dataclass(frozen=True)
class Obstacle:
    frenet: FrenetCoord
    half_length: float
    half_width: float
    # world-frame placement, derived from frenet at construction
    pose: Pose
    corners: tuple[tuple[float, float], ...]

    @staticmethod
    def at(track: Track, s: float, d: float,
           half_length: float = 2.25, half_width: float = 0.9) -> "Obstacle":
        if abs(d) + half_width > track.half_width:
            raise ValueError("obstacle would stick off the road")
        s = track.wrap_s(s)
        cx, cy = frenet_to_world(track, (s, d))
        heading = centerline_pose(track, s).heading
        pose = Pose(cx, cy, heading)
        corners = _rect_corners(pose, half_length, half_width)
        return Obstacle(FrenetCoord(s, d), half_length, half_width, pose, corners)


def _rect_corners(pose: Pose, half_length: float, half_width: float):
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    pts = []
    for lx, ly in ((half_length, half_width), (half_length, -half_width),
                   (-half_length, -half_width), (-half_length, half_width)):
        pts.append((pose.x + c * lx - s * ly, pose.y + s * lx + c * ly))
    return tuple(pts)


def _rects_overlap(corners_a, corners_b) -> bool:
    """Separating-axis test for two convex quads (here: oriented rectangles)."""
    for quad_a, quad_b in ((corners_a, corners_b), (corners_b, corners_a)):
        for i in range(4):
            ax, ay = quad_a[i]
            bx, by = quad_a[(i + 1) % 4]
            # outward normal of edge i
            nx, ny = by - ay, ax - bx
            proj_a = [nx * px + ny * py for px, py in quad_a]
            proj_b = [nx * px + ny * py for px, py in quad_b]
            if max(proj_a) < min(proj_b) or max(proj_b) < min(proj_a):
                return False
    return True


@dataclass(frozen=True)
class ObstacleConfig:
    spacing: tuple[float, float] = (50.0, 200.0)
    count_range: tuple[int, int] | None = None  # None: scaled from track length
    spawn_clear_zone: float = 60.0
    half_length: float = 2.25
    half_width: float = 0.9


def place_obstacles(track: Track, rng: np.random.Generator,
                    config: ObstacleConfig = ObstacleConfig()) -> list[Obstacle]:
    """Scatter parked vehicles along the track.

    Successive anchors are separated by i.i.d. Uniform[spacing] draws, each in
    a uniformly chosen lane, starting right after the spawn clear zone.
    Placement stops early if a draw would run past the track end, so the
    requested count is an upper target on short tracks.
    """
    smin, smax = config.spacing
    if not 0 < smin <= smax:
        raise ValueError("bad spacing range")
    length = track.total_length
    capacity = int(math.floor((length - config.spawn_clear_zone) / smin))
    if config.count_range is None:
        lo = max(2, int(round(length / 300.0)))
        hi = max(lo, int(round(length / 150.0)))
    else:
        lo, hi = config.count_range
    if lo > capacity:
        raise ValueError(
            f"cannot fit {lo} obstacles with min spacing {smin} on a "
            f"{length:.0f} m track (capacity {capacity})"
        )
    count = int(rng.integers(lo, hi + 1))

    obstacles = []
    s = config.spawn_clear_zone
    for i in range(count):
        if i > 0:
            s += float(rng.uniform(smin, smax))
        if s > length - config.spawn_clear_zone:
            break
        lane = int(rng.integers(track.num_lanes))
        obstacles.append(Obstacle.at(track, s, track.lane_center(lane),
                                     config.half_length, config.half_width))
    for a, b in zip(obstacles, obstacles[1:]):
        assert b.frenet.s - a.frenet.s > a.half_length + b.half_length, \
            "spacing_min must exceed obstacle extents"
    return obstacles


class RayField:
    """Static occluder set (road edges + obstacle outlines) for batched ray casts."""

    def __init__(self, track: Track, obstacles: list[Obstacle], edge_ds: float = 0.5):
        left, right = edge_polylines(track, ds=edge_ds)
        seg_a = [left[:-1], right[:-1]]
        seg_b = [left[1:], right[1:]]
        for obs in obstacles:
            pts = np.asarray(obs.corners + (obs.corners[0],))
            seg_a.append(pts[:-1])
            seg_b.append(pts[1:])
        self.a = np.concatenate(seg_a)
        self.b = np.concatenate(seg_b)
        self.e = self.b - self.a
        self.mid = 0.5 * (self.a + self.b)
        self.half_len = 0.5 * np.linalg.norm(self.e, axis=1)

    def cast(self, x: float, y: float, bearings: np.ndarray,
             max_range: float) -> np.ndarray:
        """Distances from (x, y) along world-frame bearing angles."""
        o = np.array((x, y))
        near = np.linalg.norm(self.mid - o, axis=1) <= max_range + self.half_len
        a = self.a[near]
        e = self.e[near]
        ao = a - o
        u = np.column_stack((np.cos(bearings), np.sin(bearings)))
        denom = u[:, 0:1] * e[None, :, 1] - u[:, 1:2] * e[None, :, 0]
        t_num = ao[None, :, 0] * e[None, :, 1] - ao[None, :, 1] * e[None, :, 0]
        w_num = ao[None, :, 0] * u[:, 1:2] - ao[None, :, 1] * u[:, 0:1]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = t_num / denom
            w = w_num / denom
        ok = (np.abs(denom) > 1e-12) & (t > 1e-9) & (w >= -1e-12) & (w <= 1.0 + 1e-12)
        t = np.where(ok, t, np.inf)
        ranges = t.min(axis=1, initial=np.inf)
        return np.clip(ranges, 1e-9, max_range)


@dataclass(frozen=True)
class Observation:
    ranges: np.ndarray  # (n_beams,) meters, clipped to max_range
    speed: float        # m/s


@dataclass(frozen=True)
class SensorConfig:
    n_beams: int = 19
    fov: float = math.pi
    max_range: float = 60.0

    def __post_init__(self):
        if self.n_beams < 3:
            raise ValueError("need at least 3 beams")
        if not 0.0 < self.fov <= 2.0 * math.pi:
            raise ValueError("fov must be in (0, 2pi]")

    @property
    def bearings(self) -> np.ndarray:
        i = np.arange(self.n_beams)
        return -0.5 * self.fov + i * self.fov / (self.n_beams - 1)


def cast_rays(world: "WorldState", pose: Pose, n_beams: int, fov: float,
              max_range: float) -> np.ndarray:
    """Ray ranges at evenly spaced bearings across the field of view."""
    sensor = SensorConfig(n_beams, fov, max_range)
    return world.ray_field.cast(pose.x, pose.y, pose.heading + sensor.bearings,
                                max_range)


class CollisionKind(enum.Enum):
    NONE = "none"
    OBSTACLE = "obstacle"
    OFF_ROAD = "off_road"


class WorldState:
    """Track + static obstacles + one ego vehicle; mutated only by its episode loop."""

    def __init__(self, track: Track, obstacles: list[Obstacle], ego: VehicleState,
                 ego_half_length: float = 2.25, ego_half_width: float = 0.9):
        self.track = track
        self.obstacles = sorted(obstacles, key=lambda o: o.frenet.s)
        self.ego = ego
        self.sim_time = 0.0
        self.ego_half_length = ego_half_length
        self.ego_half_width = ego_half_width
        self.ray_field = RayField(track, self.obstacles)
        self.obstacle_s = [o.frenet.s for o in self.obstacles]
        self.ego_tracker = FrenetTracker(track, (ego.pose.x, ego.pose.y))

    @property
    def ego_frenet(self) -> FrenetCoord:
        return self.ego_tracker.coord

    def apply(self, action: Action, dt: float, v_hard_max: float = 30.0):
        self.ego = step(self.ego, action, dt, v_hard_max)
        self.sim_time += dt
        self.ego_tracker.update((self.ego.pose.x, self.ego.pose.y))

    def observe(self, sensor: SensorConfig) -> Observation:
        pose = self.ego.pose
        ranges = self.ray_field.cast(pose.x, pose.y,
                                     pose.heading + sensor.bearings,
                                     sensor.max_range)
        return Observation(ranges, self.ego.speed)

    def obstacles_near(self, s: float, window: float) -> list[Obstacle]:
        """Obstacles whose anchor s lies within +-window of s (wrap-aware)."""
        if not self.obstacles:
            return []
        length = self.track.total_length
        lo, hi = s - window, s + window
        idx_lo = bisect_left(self.obstacle_s, lo)
        idx_hi = bisect_left(self.obstacle_s, hi)
        found = list(self.obstacles[idx_lo:idx_hi])
        if self.track.closed:
            if lo < 0.0:
                idx = bisect_left(self.obstacle_s, lo + length)
                found.extend(self.obstacles[idx:])
            if hi > length:
                idx = bisect_left(self.obstacle_s, hi - length)
                found.extend(self.obstacles[:idx])
        return found


def check_collision(world: WorldState) -> CollisionKind:
    """Obstacle contact beats off-road when both hold in the same step."""
    ego_corners = _rect_corners(world.ego.pose, world.ego_half_length,
                                world.ego_half_width)
    reach = world.ego_half_length + world.ego_half_width
    fc = world.ego_frenet
    for obs in world.obstacles_near(fc.s, reach + obs_window(world)):
        if _rects_overlap(ego_corners, obs.corners):
            return CollisionKind.OBSTACLE
    hw = world.track.half_width
    hint = world.ego_tracker.seg_idx
    for corner in ego_corners:
        _, d, _ = _project_with_hint(world.track, hint, corner)
        if abs(d) > hw:
            return CollisionKind.OFF_ROAD
    return CollisionKind.NONE


def obs_window(world: WorldState) -> float:
    return 2.5 + max((o.half_length + o.half_width for o in world.obstacles),
                     default=0.0)


def _project_with_hint(track: Track, hint_idx: int, point):
    """Local Frenet projection trying segments around hint_idx; falls back globally."""
    n = len(track.segments)
    best = None
    px, py = point
    for off in (0, -1, 1, -2, 2):
        idx = hint_idx + off
        if track.closed:
            idx %= n
        elif not 0 <= idx < n:
            continue
        s_local, d, dist = track.segments[idx].project(px, py)
        if best is None or dist < best[0]:
            best = (dist, idx, s_local, d)
    dist, idx, s_local, d = best
    s = track.wrap_s(float(track.seg_bounds[idx]) + s_local)
    return s, d, dist

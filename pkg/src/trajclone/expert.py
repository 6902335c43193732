"""Rule-based demonstrator and the demonstration recorder.

The expert drives a finite state machine (lane keep, initiate overtake, pass,
return) with per-encounter randomized initiation and finish distances, a
curvature-aware speed limit, a headway governor that can always brake to a
stop behind anything in an occupied lane, and smooth cosine lane-change
references tracked by a PD steering law. Exploration noise on steering and
target speed is redrawn every few steps.

Recording logs one sample every sample_dt seconds (observation, affordance,
executed action, FSM tag) and back-fills each sample's trajectory label from
the realized future poses expressed in that sample's ego frame.
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    Pose,
    Track,
    curvature_at,
    frenet_to_world,
    tangent_heading_at,
    world_to_car_frame,
    wrap_angle,
)
from .simulator import (
    Action,
    CollisionKind,
    Observation,
    ObstacleConfig,
    SensorConfig,
    VehicleLimits,
    VehicleState,
    WorldState,
    check_collision,
    place_obstacles,
)

GRAVITY = 9.81


@dataclass(frozen=True)
class ExpertConfig:
    v_cruise: float = 20.0            # m/s cap on straights
    friction_mu: float = 0.7
    curvature_floor: float = 1e-4
    comfort_decel: float = 2.5        # m/s^2 used to approach slow zones
    governor_decel: float = 3.5       # m/s^2 guaranteed-stop budget behind obstacles
    standoff: float = 8.0             # m bumper gap the governor preserves
    k_lateral: float = 0.0055         # rad per meter of offset
    k_heading: float = 0.243
    k_speed: float = 0.8
    steer_noise_std: float = 0.01     # rad
    v_noise_std: float = 0.5          # m/s
    noise_hold_steps: int = 10
    trigger_range: tuple[float, float] = (25.0, 45.0)
    clear_range: tuple[float, float] = (8.0, 20.0)
    lane_change_time: float = 2.0     # s
    lane_tol: float = 0.3             # m, "re-centered" threshold
    side_clear_ahead: float = 50.0    # m of free target lane needed to commit
    side_overlap_margin: float = 15.0 # m, no target-lane obstacle this close in s
    home_lane: int | None = None      # None: middle lane


def speed_limit(curvature: float, friction_mu: float,
                v_cruise: float = 20.0, curvature_floor: float = 1e-4) -> float:
    """Cruise cap or the lateral-friction limit sqrt(mu*g/|k|), whichever binds."""
    if friction_mu <= 0.0:
        raise ValueError("friction_mu must be positive")
    k = max(abs(curvature), curvature_floor)
    return min(v_cruise, math.sqrt(friction_mu * GRAVITY / k))


class SpeedProfile:
    """Curvature speed limit swept backward so braking starts early enough."""

    def __init__(self, track: Track, cfg: ExpertConfig, ds: float = 2.0):
        n = max(2, int(math.ceil(track.total_length / ds)))
        self.ds = track.total_length / n
        s_grid = np.arange(n) * self.ds
        raw = np.array([
            speed_limit(curvature_at(track, s), cfg.friction_mu,
                        cfg.v_cruise, cfg.curvature_floor)
            for s in s_grid
        ])
        v = raw.copy()
        sweeps = 2 if track.closed else 1
        for _ in range(sweeps):
            for i in range(n - 1, -1, -1):
                nxt = v[(i + 1) % n]
                v[i] = min(v[i], math.sqrt(nxt * nxt + 2.0 * cfg.comfort_decel * self.ds))
        self.values = v
        self.length = track.total_length

    def limit(self, s: float) -> float:
        x = (s % self.length) / self.ds
        i = int(x)
        frac = x - i
        j = (i + 1) % len(self.values)
        return float(self.values[i] * (1.0 - frac) + self.values[j] * frac)


class FsmKind(enum.Enum):
    LANE_KEEP = "lane_keep"
    INITIATE = "initiate"
    PASSING = "passing"
    RETURN = "return"


@dataclass
class FsmState:
    kind: FsmKind = FsmKind.LANE_KEEP
    overtake_trigger_dist: float = 35.0
    return_clear_dist: float = 14.0
    pass_lane: int | None = None
    target_obstacle_s: float | None = None
    change_t0: float = 0.0
    change_from_d: float = 0.0


@dataclass(frozen=True)
class AffordanceVector:
    heading_error: float          # rad, ego heading minus road tangent
    lateral_offset: float         # m, signed d
    dist_left_mark: float         # m to the left marking of the current lane
    dist_right_mark: float
    dist_ahead_same_lane: float   # m, clipped to sensor range
    dist_ahead_adjacent_lane: float

    def as_array(self) -> np.ndarray:
        return np.array([self.heading_error, self.lateral_offset,
                         self.dist_left_mark, self.dist_right_mark,
                         self.dist_ahead_same_lane,
                         self.dist_ahead_adjacent_lane])

    @staticmethod
    def dim() -> int:
        return 6


class LaneGaps:
    """Per-lane sorted obstacle positions for O(log n) ahead/behind queries."""

    def __init__(self, world: WorldState):
        self.length = world.track.total_length
        self.closed = world.track.closed
        self.by_lane = {lane: [] for lane in range(world.track.num_lanes)}
        for obs in world.obstacles:
            self.by_lane[world.track.lane_of(obs.frenet.d)].append(obs.frenet.s)

    def ahead(self, lane: int, s: float) -> float:
        """Anchor-to-anchor distance to the next obstacle ahead in a lane."""
        arr = self.by_lane.get(lane, [])
        if not arr:
            return math.inf
        i = bisect_right(arr, s)
        if i < len(arr):
            return arr[i] - s
        return arr[0] + self.length - s if self.closed else math.inf

    def behind(self, lane: int, s: float) -> float:
        arr = self.by_lane.get(lane, [])
        if not arr:
            return math.inf
        i = bisect_right(arr, s)
        if i > 0:
            return s - arr[i - 1]
        return s + self.length - arr[-1] if self.closed else math.inf

    def clear_window(self, lane: int, s: float, margin: float) -> bool:
        return self.ahead(lane, s) > margin and self.behind(lane, s) > margin


def compute_affordance(world: WorldState, max_range: float = 60.0,
                       gaps: LaneGaps | None = None) -> AffordanceVector:
    """Perception-proxy vector from ground-truth world state."""
    track = world.track
    fc = world.ego_frenet
    heading_err = wrap_angle(world.ego.pose.heading - tangent_heading_at(track, fc.s))
    lane = track.lane_of(fc.d)
    local = fc.d - track.lane_center(lane)
    gaps = gaps if gaps is not None else LaneGaps(world)
    same = min(gaps.ahead(lane, fc.s), max_range)
    adjacent = min(
        (gaps.ahead(nb, fc.s) for nb in (lane - 1, lane + 1)
         if 0 <= nb < track.num_lanes),
        default=math.inf,
    )
    return AffordanceVector(
        heading_error=heading_err,
        lateral_offset=fc.d,
        dist_left_mark=0.5 * track.lane_width - local,
        dist_right_mark=0.5 * track.lane_width + local,
        dist_ahead_same_lane=same,
        dist_ahead_adjacent_lane=min(adjacent, max_range),
    )


def _steer_command(d: float, d_ref: float, d_ref_rate: float, d_ref_accel: float,
                   heading_err: float, kappa_road: float, speed: float,
                   wheelbase: float, cfg: ExpertConfig) -> float:
    v_eff = max(speed, 5.0)
    kappa_ref = kappa_road / (1.0 - d_ref * kappa_road) + d_ref_accel / (v_eff * v_eff)
    e_psi = heading_err - math.atan2(d_ref_rate, v_eff)
    return (math.atan(wheelbase * kappa_ref)
            - cfg.k_heading * e_psi
            - cfg.k_lateral * (d - d_ref))


def lane_keep_action(world: WorldState, target_lane: int, v_target: float,
                     noise_rng: np.random.Generator | None = None,
                     cfg: ExpertConfig = ExpertConfig(),
                     limits: VehicleLimits = VehicleLimits()) -> Action:
    """PD steering toward a lane center plus proportional speed control."""
    track = world.track
    fc = world.ego_frenet
    heading_err = wrap_angle(world.ego.pose.heading - tangent_heading_at(track, fc.s))
    steer = _steer_command(fc.d, track.lane_center(target_lane), 0.0, 0.0,
                           heading_err, curvature_at(track, fc.s),
                           world.ego.speed, world.ego.wheelbase, cfg)
    accel = cfg.k_speed * (v_target - world.ego.speed)
    if noise_rng is not None:
        steer += cfg.steer_noise_std * noise_rng.standard_normal()
        accel += cfg.k_speed * cfg.v_noise_std * noise_rng.standard_normal()
    return limits.clamp_action(steer, accel)


def fsm_step(fsm: FsmState, world: WorldState, cfg: ExpertConfig,
             rng: np.random.Generator, gaps: LaneGaps | None = None,
             t: float | None = None) -> FsmState:
    """Advance the overtake state machine one step (pure given its arguments)."""
    track = world.track
    gaps = gaps if gaps is not None else LaneGaps(world)
    t = world.sim_time if t is None else t
    fc = world.ego_frenet
    home = cfg.home_lane if cfg.home_lane is not None else (track.num_lanes - 1) // 2

    if fsm.kind is FsmKind.LANE_KEEP:
        if gaps.ahead(home, fc.s) < fsm.overtake_trigger_dist:
            sides = [lane for lane in (home - 1, home + 1)
                     if 0 <= lane < track.num_lanes
                     and gaps.ahead(lane, fc.s) > cfg.side_clear_ahead
                     and gaps.clear_window(lane, fc.s, cfg.side_overlap_margin)]
            if sides:
                pass_lane = sides[int(rng.integers(len(sides)))] if len(sides) > 1 else sides[0]
                target_s = (fc.s + gaps.ahead(home, fc.s)) % track.total_length
                return FsmState(
                    kind=FsmKind.INITIATE,
                    overtake_trigger_dist=float(rng.uniform(*cfg.trigger_range)),
                    return_clear_dist=float(rng.uniform(*cfg.clear_range)),
                    pass_lane=pass_lane,
                    target_obstacle_s=target_s,
                    change_t0=t,
                    change_from_d=track.lane_center(home),
                )
        return fsm

    if fsm.kind is FsmKind.INITIATE:
        if abs(fc.d - track.lane_center(fsm.pass_lane)) < cfg.lane_tol:
            return replace(fsm, kind=FsmKind.PASSING)
        return fsm

    if fsm.kind is FsmKind.PASSING:
        behind = (fc.s - fsm.target_obstacle_s) % track.total_length
        passed = behind < 0.5 * track.total_length and behind >= fsm.return_clear_dist
        if (passed
                and gaps.ahead(home, fc.s) > cfg.side_clear_ahead
                and gaps.clear_window(home, fc.s, cfg.side_overlap_margin)):
            return replace(fsm, kind=FsmKind.RETURN, change_t0=t,
                           change_from_d=track.lane_center(fsm.pass_lane))
        return fsm

    # RETURN
    if abs(fc.d - track.lane_center(home)) < cfg.lane_tol:
        return replace(fsm, kind=FsmKind.LANE_KEEP, pass_lane=None,
                       target_obstacle_s=None)
    return fsm


def _change_reference(fsm: FsmState, track: Track, home: int, t: float,
                      cfg: ExpertConfig):
    """Lateral reference (d_ref, rate, accel) for the current FSM state."""
    if fsm.kind is FsmKind.LANE_KEEP:
        return track.lane_center(home), 0.0, 0.0
    if fsm.kind is FsmKind.PASSING:
        return track.lane_center(fsm.pass_lane), 0.0, 0.0
    target = track.lane_center(fsm.pass_lane if fsm.kind is FsmKind.INITIATE else home)
    delta = target - fsm.change_from_d
    tau = min(max((t - fsm.change_t0) / cfg.lane_change_time, 0.0), 1.0)
    T = cfg.lane_change_time
    d_ref = fsm.change_from_d + 0.5 * delta * (1.0 - math.cos(math.pi * tau))
    rate = 0.5 * delta * math.pi / T * math.sin(math.pi * tau)
    accel = 0.5 * delta * (math.pi / T) ** 2 * math.cos(math.pi * tau)
    if tau >= 1.0:
        rate = accel = 0.0
        d_ref = target
    return d_ref, rate, accel


class ExpertDriver:
    """Closed-loop expert for one episode; call act() every simulator step."""

    def __init__(self, world: WorldState, cfg: ExpertConfig,
                 limits: VehicleLimits, rng: np.random.Generator):
        self.world = world
        self.cfg = cfg
        self.limits = limits
        self.rng = rng
        self.gaps = LaneGaps(world)
        self.profile = SpeedProfile(world.track, cfg)
        self.home = (cfg.home_lane if cfg.home_lane is not None
                     else (world.track.num_lanes - 1) // 2)
        self.fsm = FsmState(
            overtake_trigger_dist=float(rng.uniform(*cfg.trigger_range)),
            return_clear_dist=float(rng.uniform(*cfg.clear_range)),
        )
        self._steer_noise = 0.0
        self._v_noise = 0.0
        self._noise_age = cfg.noise_hold_steps  # force draw on first step

    def _refresh_noise(self):
        cfg = self.cfg
        if self._noise_age >= cfg.noise_hold_steps:
            self._steer_noise = cfg.steer_noise_std * self.rng.standard_normal()
            self._v_noise = cfg.v_noise_std * self.rng.standard_normal()
            self._noise_age = 0
        self._noise_age += 1

    def _governor(self, fc, d_ref: float) -> float:
        """Speed that can still stop behind the nearest obstacle in occupied lanes."""
        cfg = self.cfg
        world = self.world
        track = world.track
        lanes = set()
        for d in (fc.d, d_ref):
            lane = track.lane_of(d)
            lanes.add(lane)
            local = d - track.lane_center(lane)
            edge = 0.5 * track.lane_width - (world.ego_half_width + 0.2)
            if local > edge and lane + 1 < track.num_lanes:
                lanes.add(lane + 1)
            if local < -edge and lane - 1 >= 0:
                lanes.add(lane - 1)
        v_max = math.inf
        for lane in lanes:
            gap = self.gaps.ahead(lane, fc.s)
            if not math.isfinite(gap):
                continue
            free = gap - world.ego_half_length - 2.25 - cfg.standoff
            v_max = min(v_max, math.sqrt(max(0.0, 2.0 * cfg.governor_decel * free)))
        return v_max

    def act(self) -> Action:
        cfg = self.cfg
        world = self.world
        track = world.track
        fc = world.ego_frenet
        t = world.sim_time

        self.fsm = fsm_step(self.fsm, world, cfg, self.rng, self.gaps, t)
        d_ref, d_rate, d_accel = _change_reference(self.fsm, track, self.home, t, cfg)

        heading_err = wrap_angle(world.ego.pose.heading
                                 - tangent_heading_at(track, fc.s))
        self._refresh_noise()
        steer = _steer_command(fc.d, d_ref, d_rate, d_accel, heading_err,
                               curvature_at(track, fc.s), world.ego.speed,
                               world.ego.wheelbase, cfg) + self._steer_noise

        v_target = min(self.profile.limit(fc.s), self._governor(fc, d_ref))
        v_target = max(v_target + self._v_noise, 0.0)
        accel = cfg.k_speed * (v_target - world.ego.speed)
        return self.limits.clamp_action(steer, accel)


@dataclass
class Demonstration:
    observation: Observation
    trajectory: np.ndarray        # (K, 2) ego-frame meters
    affordance: AffordanceVector
    action: Action                # executed expert action at the tick
    track_id: str
    episode: int
    t: float
    fsm_state: str


def spawn_state(track: Track, cfg: ExpertConfig, speed: float,
                wheelbase: float) -> VehicleState:
    home = cfg.home_lane if cfg.home_lane is not None else (track.num_lanes - 1) // 2
    x, y = frenet_to_world(track, (0.0, track.lane_center(home)))
    return VehicleState(Pose(x, y, tangent_heading_at(track, 0.0)),
                        speed, wheelbase)


def run_demo_episode(track: Track, track_id: str, episode: int, rng,
                     setup) -> tuple[list, CollisionKind]:
    """One expert episode; returns its demonstrations and how it ended.

    setup bundles timing, expert/sensor/vehicle/obstacle configs and ego
    geometry -- see harness config EpisodeSetup.
    """
    cfg: ExpertConfig = setup.expert
    sensor: SensorConfig = setup.sensor
    limits: VehicleLimits = setup.limits
    dt = setup.dt_sim
    steps_per_tick = int(round(setup.sample_dt / dt))
    label_stride = int(round(setup.dt_label / setup.sample_dt))
    n_steps = int(round(setup.episode_duration / dt))

    obstacles = place_obstacles(track, rng, setup.obstacles)
    spawn = spawn_state(track, cfg, setup.spawn_speed, setup.wheelbase)
    world = WorldState(track, obstacles, spawn,
                       setup.ego_half_length, setup.ego_half_width)
    driver = ExpertDriver(world, cfg, limits, rng)
    gaps = driver.gaps

    tick_poses: list[Pose] = []
    partial = []  # (tick_index, Observation, AffordanceVector, Action, fsm, t)
    ended = CollisionKind.NONE
    for i in range(n_steps):
        action = driver.act()
        if i % steps_per_tick == 0:
            tick_idx = len(tick_poses)
            tick_poses.append(world.ego.pose)
            obs = world.observe(sensor)
            aff = compute_affordance(world, sensor.max_range, gaps)
            partial.append((tick_idx, obs, aff, action,
                            driver.fsm.kind.value, world.sim_time))
        world.apply(action, dt, limits.v_hard_max)
        collision = check_collision(world)
        if collision is not CollisionKind.NONE:
            ended = collision
            break
    else:
        tick_poses.append(world.ego.pose)  # final pose can serve as a label point

    k = setup.k_points
    horizon = k * label_stride
    records = []
    for tick_idx, obs, aff, action, fsm_tag, t in partial:
        if tick_idx + horizon >= len(tick_poses):
            continue  # future crosses the episode end: no label
        base = tick_poses[tick_idx]
        future = [tick_poses[tick_idx + (j + 1) * label_stride] for j in range(k)]
        traj = np.array([world_to_car_frame(base, (p.x, p.y)) for p in future])
        records.append(Demonstration(obs, traj, aff, action, track_id,
                                     episode, t, fsm_tag))
    return records, ended

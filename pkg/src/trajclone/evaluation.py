"""Closed-loop evaluation: drive an agent on the validation tracks and count collisions.

All agents share one episode loop: the sensor fires every replan interval,
the agent turns the observation into either a trajectory (followed by the LQR
at simulator rate) or a raw held action, and the episode ends on collision,
the per-episode mileage cap, or a time cap. Off-road excursions count as
collisions in the rate, matching how the safety metric is used.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .baseline import baseline_policy
from .controller import TrajectoryFollower
from .dataset import observation_matrix
from .expert import ExpertDriver, spawn_state
from .geometry import build_track
from .losses import GmmParams, select_trajectory
from .network import forward
from .simulator import (
    Action,
    CollisionKind,
    SensorConfig,
    VehicleLimits,
    WorldState,
    check_collision,
    place_obstacles,
)

METERS_PER_MILE = 1609.344


@dataclass
class EpisodeResult:
    track_id: str
    miles: float
    duration_s: float
    collision: str              # CollisionKind value
    trace: list                 # dicts {t, x, y, heading, speed, steer, accel}


@dataclass
class EvalReport:
    agent: str
    miles_driven: float
    collisions: int
    collisions_obstacle: int
    collisions_offroad: int
    collisions_per_100mi: float
    mean_speed_mph: float
    episodes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "miles_driven": self.miles_driven,
            "collisions": self.collisions,
            "collisions_obstacle": self.collisions_obstacle,
            "collisions_offroad": self.collisions_offroad,
            "collisions_per_100mi": self.collisions_per_100mi,
            "mean_speed_mph": self.mean_speed_mph,
            "episodes": [
                {k: v for k, v in dataclasses.asdict(ep).items() if k != "trace"}
                for ep in self.episodes
            ],
        }


class TrajectoryGmmAgent:
    """Picks the maximum-weight mixture mode and hands it to the controller."""

    def __init__(self, model):
        if "gmm" not in model.spec.heads:
            raise ValueError("checkpoint has no mixture trajectory head")
        self.model = model
        self.head = model.spec.heads["gmm"]

    def plan(self, x: np.ndarray) -> np.ndarray:
        outputs, _ = forward(self.model.params, self.model.spec, x)
        params = GmmParams.from_raw(outputs["gmm"], self.head.k_modes,
                                    self.head.d_target)
        return select_trajectory(params, self.model.normalizers["trajectory"])


class TrajectoryL2Agent:
    def __init__(self, model):
        if "trajectory_l2" not in model.spec.heads:
            raise ValueError("checkpoint has no linear trajectory head")
        self.model = model

    def plan(self, x: np.ndarray) -> np.ndarray:
        outputs, _ = forward(self.model.params, self.model.spec, x)
        mu = self.model.normalizers["trajectory"].invert(outputs["trajectory_l2"])
        return mu.reshape(-1, 2)


class BaselineActuationAgent:
    def __init__(self, model, limits: VehicleLimits):
        if "actuation" not in model.spec.heads:
            raise ValueError("checkpoint has no actuation head")
        self.model = model
        self.limits = limits

    def act(self, x: np.ndarray) -> Action:
        return baseline_policy(self.model, x, self.limits)


def make_agent(model, agent_kind: str, limits: VehicleLimits):
    if agent_kind == "trajectory-gmm":
        return TrajectoryGmmAgent(model)
    if agent_kind == "trajectory-l2":
        return TrajectoryL2Agent(model)
    if agent_kind == "baseline-actuation":
        return BaselineActuationAgent(model, limits)
    raise ValueError(f"unknown agent kind {agent_kind!r}")


def _observation_input(obs, sensor: SensorConfig, v_norm: float) -> np.ndarray:
    x = np.empty(sensor.n_beams + 1)
    x[:-1] = obs.ranges / sensor.max_range
    x[-1] = obs.speed / v_norm
    return x


def run_eval_episode(track, track_id: str, agent, config, rng,
                     expert_mode: bool = False) -> EpisodeResult:
    """Drive one episode; agent is a plan/act object, or an expert when flagged."""
    limits = config.vehicle.limits()
    sensor = config.sensor
    dt = config.dt_sim
    replan_steps = int(round(config.eval.replan_interval / dt))
    max_steps = int(round(config.eval.episode_time_cap / dt))
    cap_m = config.eval.episode_miles_cap * METERS_PER_MILE

    obstacles = place_obstacles(track, rng, config.obstacles)
    spawn = spawn_state(track, config.expert, config.eval.spawn_speed,
                        config.vehicle.wheelbase)
    world = WorldState(track, obstacles, spawn,
                       config.vehicle.half_length, config.vehicle.half_width)
    driver = ExpertDriver(world, config.expert, limits, rng) if expert_mode else None
    follower = TrajectoryFollower(
        dataclasses.replace(config.lqr, dt=dt, dt_label=config.dataset.dt_label),
        limits, config.vehicle.wheelbase)

    meters = 0.0
    trace = []
    collision = CollisionKind.NONE
    current_traj = None
    held_action = Action(0.0, 0.0)
    stall_steps = 0
    stall_limit = int(round(30.0 / dt))
    for i in range(max_steps):
        if i % replan_steps == 0:
            obs = world.observe(sensor)
            x = _observation_input(obs, sensor, config.vehicle.v_hard_max)
            if not expert_mode:
                if hasattr(agent, "plan"):
                    current_traj = agent.plan(x)
                else:
                    held_action = agent.act(x)
        if expert_mode:
            action = driver.act()
        elif current_traj is not None:
            action = follower.follow(current_traj, world.ego)
        else:
            action = held_action
        if i % config.eval.trace_every == 0:
            trace.append({
                "t": round(world.sim_time, 6),
                "x": world.ego.pose.x, "y": world.ego.pose.y,
                "heading": world.ego.pose.heading, "speed": world.ego.speed,
                "steer": action.steer, "accel": action.accel,
                "collision": collision.value,
            })
        world.apply(action, dt, limits.v_hard_max)
        meters += world.ego.speed * dt
        collision = check_collision(world)
        if collision is not CollisionKind.NONE or meters >= cap_m:
            break
        stall_steps = stall_steps + 1 if world.ego.speed < 0.3 else 0
        if stall_steps >= stall_limit:
            break  # parked agent: stop burning sim time, keep miles as-is
    trace.append({
        "t": round(world.sim_time, 6),
        "x": world.ego.pose.x, "y": world.ego.pose.y,
        "heading": world.ego.pose.heading, "speed": world.ego.speed,
        "steer": action.steer, "accel": action.accel,
        "collision": collision.value,
    })
    return EpisodeResult(track_id, meters / METERS_PER_MILE, world.sim_time,
                         collision.value, trace)


def eval_closed_loop(model, agent_kind: str, config, seed: int | None = None,
                     expert_mode: bool = False) -> EvalReport:
    """Accumulate episodes on the validation tracks until the mileage target."""
    from .config import resolve_tracks

    seed = config.seed if seed is None else seed
    _, val_tracks = resolve_tracks(config, config.seed)
    built = [(tid, build_track(spec)) for tid, spec in val_tracks]
    agent = None if expert_mode else make_agent(model, agent_kind,
                                                config.vehicle.limits())

    episodes = []
    miles = 0.0
    hours = 0.0
    counts = {k: 0 for k in CollisionKind}
    episode = 0
    while miles < config.eval.miles_target:
        tid, track = built[episode % len(built)]
        rng = np.random.default_rng(np.random.SeedSequence((seed, 31, episode)))
        result = run_eval_episode(track, tid, agent, config, rng, expert_mode)
        episodes.append(result)
        miles += result.miles
        hours += result.duration_s / 3600.0
        counts[CollisionKind(result.collision)] += 1
        episode += 1
        if episode > 50_000:
            raise RuntimeError("evaluation is not accumulating miles; aborting")
    n_obstacle = counts[CollisionKind.OBSTACLE]
    n_offroad = counts[CollisionKind.OFF_ROAD]
    n_coll = n_obstacle + n_offroad
    return EvalReport(
        agent="expert" if expert_mode else agent_kind,
        miles_driven=miles,
        collisions=n_coll,
        collisions_obstacle=n_obstacle,
        collisions_offroad=n_offroad,
        collisions_per_100mi=100.0 * n_coll / miles,
        mean_speed_mph=miles / hours if hours > 0 else 0.0,
        episodes=episodes,
    )

"""Experiment configuration: dataclasses, YAML loading, derived setups.

Every default in the system lives here and is overridable from a YAML file
whose structure mirrors the dataclass tree (see README for the schema).
Validation enforces the cross-field rules: the replan interval must be an
integer multiple of the simulation step, and train/validation tracks must be
disjoint.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .controller import LqrConfig
from .expert import ExpertConfig
from .geometry import SegmentSpec, TrackSpec
from .losses import CvarConfig, MultiTaskWeights
from .simulator import ObstacleConfig, SensorConfig, VehicleLimits
from .trackgen import TrackGenConfig, generate_track_spec

AGENT_KINDS = ("trajectory-gmm", "trajectory-l2", "baseline-actuation")


@dataclass(frozen=True)
class VehicleConfig:
    wheelbase: float = 2.7
    half_length: float = 2.25
    half_width: float = 0.9
    steer_max: float = 0.5
    accel_min: float = -6.0
    accel_max: float = 3.0
    v_hard_max: float = 30.0

    def limits(self) -> VehicleLimits:
        return VehicleLimits(self.steer_max, self.accel_min, self.accel_max,
                             self.v_hard_max)


@dataclass(frozen=True)
class TrackSetConfig:
    n_train: int = 8
    n_val: int = 4
    generator: TrackGenConfig = field(default_factory=TrackGenConfig)
    # optional explicit specs keyed by id; if given they replace generation
    explicit_train: dict | None = None
    explicit_val: dict | None = None


@dataclass(frozen=True)
class DatasetParams:
    samples_total: int = 50_000
    train_fraction: float = 0.7
    k_points: int = 5
    dt_label: float = 0.3
    sample_dt: float = 0.1
    episode_duration: float = 60.0
    spawn_speed: float = 12.0


@dataclass(frozen=True)
class NetConfig:
    fusion_layers: tuple[int, ...] = (128, 128, 64)
    k_modes: int = 2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0
    freeze_epochs: int = 5
    w_aff: float = 0.0              # 0 disables the auxiliary head
    grid_epochs: int = 6            # reduced epochs for weight grid search
    finetune_lr: float = 1e-3


@dataclass(frozen=True)
class EvalConfig:
    miles_target: float = 100.0
    episode_miles_cap: float = 10.0
    episode_time_cap: float = 1800.0
    replan_interval: float = 0.1
    spawn_speed: float = 12.0
    trace_every: int = 5            # sim steps between trace rows


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    dt_sim: float = 0.02
    agent: str = "trajectory-gmm"
    tracks: TrackSetConfig = field(default_factory=TrackSetConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    obstacles: ObstacleConfig = field(default_factory=ObstacleConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    dataset: DatasetParams = field(default_factory=DatasetParams)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cvar: CvarConfig = field(default_factory=CvarConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    lqr: LqrConfig = field(default_factory=LqrConfig)

    def __post_init__(self):
        if self.agent not in AGENT_KINDS:
            raise ValueError(f"agent must be one of {AGENT_KINDS}")
        ratio = self.eval.replan_interval / self.dt_sim
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("replan_interval must be an integer multiple of dt_sim")
        ratio = self.dataset.sample_dt / self.dt_sim
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("sample_dt must be an integer multiple of dt_sim")
        ratio = self.dataset.dt_label / self.dataset.sample_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("dt_label must be an integer multiple of sample_dt")


# -- nested dict <-> dataclass plumbing --------------------------------------

_TUPLE_FIELDS = {"spacing", "count_range", "trigger_range", "clear_range",
                 "fusion_layers", "n_corners", "polygon_radius",
                 "corner_radius", "chicane_radius", "chicane_angle"}


def _build(cls, data: dict, path: str = ""):
    if not isinstance(data, dict):
        raise ValueError(f"expected mapping at {path or 'config root'}")
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in names:
            raise ValueError(f"unknown config key {path + key!r}")
        f = names[key]
        if dataclasses.is_dataclass(f.type) or (
                f.default_factory is not dataclasses.MISSING
                and dataclasses.is_dataclass(f.default_factory)):
            sub_cls = f.default_factory if f.default_factory is not dataclasses.MISSING else None
            sub_cls = sub_cls or f.type
            kwargs[key] = _build(sub_cls, value, path + key + ".")
        elif isinstance(value, list) and key in _TUPLE_FIELDS:
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {})


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(yaml.safe_load(fh) or {})


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


# -- track resolution ---------------------------------------------------------

def _spec_from_dict(d: dict) -> TrackSpec:
    segments = tuple(
        SegmentSpec(seg["kind"], float(seg["length"]),
                    float(seg.get("curvature", 0.0)))
        for seg in d["segments"]
    )
    return TrackSpec(segments, float(d.get("lane_width", 3.5)),
                     int(d.get("num_lanes", 3)), bool(d.get("closed", True)))


def resolve_tracks(config: ExperimentConfig, seed: int):
    """(train, val) lists of (track_id, TrackSpec); ids must be disjoint."""
    tc = config.tracks
    if tc.explicit_train is not None or tc.explicit_val is not None:
        train = [(tid, _spec_from_dict(d)) for tid, d in
                 sorted((tc.explicit_train or {}).items())]
        val = [(tid, _spec_from_dict(d)) for tid, d in
               sorted((tc.explicit_val or {}).items())]
    else:
        train = [(f"train-{i:02d}",
                  generate_track_spec(
                      np.random.default_rng(np.random.SeedSequence((seed, 11, i))),
                      tc.generator))
                 for i in range(tc.n_train)]
        val = [(f"val-{i:02d}",
                generate_track_spec(
                    np.random.default_rng(np.random.SeedSequence((seed, 13, i))),
                    tc.generator))
               for i in range(tc.n_val)]
    overlap = {t for t, _ in train} & {t for t, _ in val}
    if overlap:
        raise ValueError(f"train/val track ids overlap: {sorted(overlap)}")
    if not train or not val:
        raise ValueError("need at least one train and one validation track")
    return train, val


# -- per-episode bundle --------------------------------------------------------

@dataclass(frozen=True)
class EpisodeSetup:
    dt_sim: float
    sample_dt: float
    dt_label: float
    k_points: int
    episode_duration: float
    spawn_speed: float
    wheelbase: float
    ego_half_length: float
    ego_half_width: float
    expert: ExpertConfig
    sensor: SensorConfig
    limits: VehicleLimits
    obstacles: ObstacleConfig


def episode_setup(config: ExperimentConfig) -> EpisodeSetup:
    return EpisodeSetup(
        dt_sim=config.dt_sim,
        sample_dt=config.dataset.sample_dt,
        dt_label=config.dataset.dt_label,
        k_points=config.dataset.k_points,
        episode_duration=config.dataset.episode_duration,
        spawn_speed=config.dataset.spawn_speed,
        wheelbase=config.vehicle.wheelbase,
        ego_half_length=config.vehicle.half_length,
        ego_half_width=config.vehicle.half_width,
        expert=config.expert,
        sensor=config.sensor,
        limits=config.vehicle.limits(),
        obstacles=config.obstacles,
    )

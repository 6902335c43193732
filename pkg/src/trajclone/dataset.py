"""Demonstration dataset: recording orchestration, JSON-lines persistence, arrays.

File layout: a header line carrying the schema version, label geometry, sensor
parameters and normalization constants, then one JSON object per
demonstration. Record order is (track_id, episode, t), which makes output
bytes independent of recording order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .expert import AffordanceVector, Demonstration, run_demo_episode
from .geometry import build_track
from .simulator import Action, CollisionKind, Observation, SensorConfig

SCHEMA = "trajclone-dataset"
SCHEMA_VERSION = 1


@dataclass
class RecordingStats:
    episodes: int = 0
    aborted_episodes: int = 0
    expert_collisions: int = 0


@dataclass
class DemoDataset:
    records: list
    k_points: int
    dt_label: float
    sensor: SensorConfig
    v_norm: float                      # speed normalization constant
    train_track_ids: tuple
    val_track_ids: tuple
    stats: RecordingStats

    def split(self, track_ids) -> list:
        wanted = set(track_ids)
        return [r for r in self.records if r.track_id in wanted]


def record_demonstrations(config, master_seed: int) -> DemoDataset:
    """Run expert episodes over the configured tracks until sample quotas fill.

    Train and validation samples come from disjoint track sets. Episodes are
    seeded independently from (master_seed, split, index) so any one can be
    reproduced alone. An expert collision aborts and discards that episode;
    the stats record how many times that happened (it must be never).
    """
    from .config import episode_setup, resolve_tracks

    setup = episode_setup(config)
    train_tracks, val_tracks = resolve_tracks(config, master_seed)
    quota_train = int(round(config.dataset.samples_total * config.dataset.train_fraction))
    quota_val = config.dataset.samples_total - quota_train

    stats = RecordingStats()
    records = []
    for split_idx, (tracks, quota) in enumerate(
            [(train_tracks, quota_train), (val_tracks, quota_val)]):
        collected = 0
        episode = 0
        built = {tid: build_track(spec) for tid, spec in tracks}
        while collected < quota:
            tid = tracks[episode % len(tracks)][0]
            rng = np.random.default_rng(
                np.random.SeedSequence((master_seed, 17 + split_idx, episode)))
            ep_records, ended = run_demo_episode(built[tid], tid, episode, rng, setup)
            stats.episodes += 1
            if ended is not CollisionKind.NONE:
                stats.aborted_episodes += 1
                stats.expert_collisions += 1
            else:
                records.extend(ep_records)
                collected += len(ep_records)
            episode += 1
    records.sort(key=lambda r: (r.track_id, r.episode, r.t))
    return DemoDataset(
        records=records,
        k_points=config.dataset.k_points,
        dt_label=config.dataset.dt_label,
        sensor=config.sensor,
        v_norm=config.vehicle.v_hard_max,
        train_track_ids=tuple(tid for tid, _ in train_tracks),
        val_track_ids=tuple(tid for tid, _ in val_tracks),
        stats=stats,
    )


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True, allow_nan=False)


def save_dataset(ds: DemoDataset, path):
    header = {
        "schema": SCHEMA,
        "version": SCHEMA_VERSION,
        "k_points": ds.k_points,
        "dt_label": ds.dt_label,
        "n_beams": ds.sensor.n_beams,
        "fov": ds.sensor.fov,
        "max_range": ds.sensor.max_range,
        "v_norm": ds.v_norm,
        "train_tracks": list(ds.train_track_ids),
        "val_tracks": list(ds.val_track_ids),
        "stats": {
            "episodes": ds.stats.episodes,
            "aborted_episodes": ds.stats.aborted_episodes,
            "expert_collisions": ds.stats.expert_collisions,
        },
    }
    with open(path, "w") as fh:
        fh.write(_dumps(header) + "\n")
        for rec in ds.records:
            fh.write(_dumps({
                "track": rec.track_id,
                "ep": rec.episode,
                "t": rec.t,
                "fsm": rec.fsm_state,
                "ranges": rec.observation.ranges.tolist(),
                "speed": rec.observation.speed,
                "traj": rec.trajectory.tolist(),
                "aff": rec.affordance.as_array().tolist(),
                "act": [rec.action.steer, rec.action.accel],
            }) + "\n")


def load_dataset(path) -> DemoDataset:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != SCHEMA:
            raise ValueError(f"{path} is not a demonstration dataset")
        records = []
        for line in fh:
            d = json.loads(line)
            records.append(Demonstration(
                observation=Observation(np.asarray(d["ranges"]), d["speed"]),
                trajectory=np.asarray(d["traj"]),
                affordance=AffordanceVector(*d["aff"]),
                action=Action(d["act"][0], d["act"][1]),
                track_id=d["track"],
                episode=d["ep"],
                t=d["t"],
                fsm_state=d["fsm"],
            ))
    sensor = SensorConfig(header["n_beams"], header["fov"], header["max_range"])
    stats = RecordingStats(**header["stats"])
    return DemoDataset(records, header["k_points"], header["dt_label"], sensor,
                       header["v_norm"], tuple(header["train_tracks"]),
                       tuple(header["val_tracks"]), stats)


def observation_matrix(records, sensor: SensorConfig, v_norm: float) -> np.ndarray:
    """Network inputs: ranges scaled by max_range, speed scaled by v_norm."""
    n = len(records)
    x = np.empty((n, sensor.n_beams + 1))
    for i, rec in enumerate(records):
        x[i, :-1] = rec.observation.ranges / sensor.max_range
        x[i, -1] = rec.observation.speed / v_norm
    return x


def trajectory_matrix(records) -> np.ndarray:
    return np.stack([r.trajectory.reshape(-1) for r in records])


def affordance_matrix(records) -> np.ndarray:
    return np.stack([r.affordance.as_array() for r in records])

"""Direct-actuation behavioral cloning baseline.

Instead of a trajectory, the network's actuation head regresses the expert's
executed (steer, accel) pair at each sample tick; at drive time the
inverse-normalized head output is applied as-is and held until the next
replan. No feedback controller is involved, which is the point of the
comparison.
"""

from __future__ import annotations

import numpy as np

from .network import forward
from .simulator import Action, VehicleLimits


def record_actuation_labels(records) -> np.ndarray:
    """(N, 2) matrix of executed expert actions, one row per demonstration."""
    labels = np.empty((len(records), 2))
    for i, rec in enumerate(records):
        action = getattr(rec, "action", None)
        if action is None:
            raise ValueError(f"record {i} carries no executed action")
        labels[i, 0] = action.steer
        labels[i, 1] = action.accel
    return labels


def baseline_policy(model, observation_input,
                    limits: VehicleLimits = VehicleLimits()) -> Action:
    """Actuation-head output for one normalized observation, clamped to bounds."""
    outputs, _ = forward(model.params, model.spec, observation_input)
    raw = outputs["actuation"]
    act = model.normalizers["actuation"].invert(raw)
    return limits.clamp_action(float(act[0]), float(act[1]))

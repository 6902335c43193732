"""LQR trajectory follower.

Steers with an infinite-horizon discrete LQR on a 2-state error model
(lateral offset, heading) linearized at the current speed; longitudinal
control is a plain proportional law on the speed implied by the trajectory's
point spacing. Gains are recomputed only when speed drifts, since the error
model depends on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .simulator import Action, VehicleLimits, VehicleState


@dataclass(frozen=True)
class LqrConfig:
    q_lateral: float = 1.0
    q_heading: float = 0.5
    r_steer: float = 4.0
    riccati_tol: float = 1e-12
    riccati_max_iter: int = 100_000
    t_lookahead: float = 0.45       # s, mid-horizon reference point
    dt_label: float = 0.3           # s between trajectory points
    speed_gain: float = 0.8
    resolve_speed_delta: float = 1.0  # m/s of drift before re-solving gains
    dt: float = 0.02                # controller/simulator step


def solve_discrete_riccati(A, B, Q, R, tol: float = 1e-12,
                           max_iter: int = 100_000) -> np.ndarray:
    """Fixed-point iteration of the discrete algebraic Riccati equation.

    Iterates P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA from P = Q until the
    max-norm update falls below tol, then returns the gain
    K = (R + B'PB)^-1 B'PA. Raises if the iteration does not converge.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.asarray(B, dtype=np.float64).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        gain_term = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ gain_term
        if np.max(np.abs(P_next - P)) < tol:
            P = P_next
            break
        P = P_next
    else:
        raise RuntimeError(f"Riccati iteration did not converge in {max_iter} steps")
    BtP = B.T @ P
    return np.linalg.solve(R + BtP @ B, BtP @ A)


@dataclass(frozen=True)
class ReferencePoint:
    position: tuple[float, float]  # ego frame, meters
    heading: float                 # ego frame, rad
    target_speed: float            # m/s


def lookahead_reference(trajectory: np.ndarray, t_lookahead: float,
                        dt_label: float) -> ReferencePoint:
    """Time-interpolate the trajectory at the lookahead horizon.

    The ego's own position (origin, t=0) is prepended so horizons inside the
    first label interval interpolate sensibly. Target speed comes from the
    spacing of the bracketing pair of points.
    """
    traj = np.asarray(trajectory, dtype=np.float64)
    if traj.ndim != 2 or traj.shape[0] < 2 or traj.shape[1] != 2:
        raise ValueError("trajectory must be (K>=2, 2)")
    pts = np.vstack([[0.0, 0.0], traj])
    times = dt_label * np.arange(pts.shape[0])
    t = min(max(t_lookahead, 0.0), times[-1])
    i = min(int(t / dt_label), pts.shape[0] - 2)
    frac = (t - times[i]) / dt_label
    pos = pts[i] * (1.0 - frac) + pts[i + 1] * frac
    seg = pts[i + 1] - pts[i]
    seg_len = float(np.hypot(seg[0], seg[1]))
    heading = math.atan2(seg[1], seg[0]) if seg_len > 1e-9 else 0.0
    return ReferencePoint((float(pos[0]), float(pos[1])), heading,
                          seg_len / dt_label)


class TrajectoryFollower:
    """Per-episode LQR follower; owns a speed-scheduled gain cache."""

    def __init__(self, config: LqrConfig = LqrConfig(),
                 limits: VehicleLimits = VehicleLimits(),
                 wheelbase: float = 2.7):
        self.config = config
        self.limits = limits
        self.wheelbase = wheelbase
        self._gain = None
        self._gain_speed = None

    def _gains_for(self, speed: float) -> np.ndarray:
        cfg = self.config
        if (self._gain is not None
                and abs(speed - self._gain_speed) <= cfg.resolve_speed_delta):
            return self._gain
        v = max(speed, 1.0)  # error model degenerates at standstill
        A = np.array([[1.0, v * cfg.dt], [0.0, 1.0]])
        B = np.array([[0.0], [v * cfg.dt / self.wheelbase]])
        Q = np.diag([cfg.q_lateral, cfg.q_heading])
        R = np.array([[cfg.r_steer]])
        self._gain = solve_discrete_riccati(A, B, Q, R, cfg.riccati_tol,
                                            cfg.riccati_max_iter)
        self._gain_speed = speed
        return self._gain

    def follow(self, trajectory, state: VehicleState) -> Action:
        """Action that tracks an ego-frame trajectory from the current state."""
        cfg = self.config
        traj = np.asarray(trajectory, dtype=np.float64)
        if traj.ndim != 2 or traj.shape[0] < 2:
            raise ValueError("need at least 2 trajectory points")
        if float(np.max(np.hypot(traj[:, 0], traj[:, 1]))) < 0.5:
            # degenerate plan: nothing to follow, brake straight
            return self.limits.clamp_action(0.0, -3.0)
        ref = lookahead_reference(traj, cfg.t_lookahead, cfg.dt_label)
        # ego-frame errors: being below/right of the plan is a negative offset
        e_lat = -ref.position[1]
        e_head = -ref.heading
        K = self._gains_for(state.speed)
        steer = float(-(K[0, 0] * e_lat + K[0, 1] * e_head))
        accel = cfg.speed_gain * (ref.target_speed - state.speed)
        return self.limits.clamp_action(steer, accel)


def follow(trajectory, state: VehicleState, config: LqrConfig = LqrConfig(),
           limits: VehicleLimits = VehicleLimits()) -> Action:
    """One-shot form of TrajectoryFollower.follow for stateless callers."""
    return TrajectoryFollower(config, limits, state.wheelbase).follow(
        trajectory, state)

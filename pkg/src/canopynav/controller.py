"""Point-mass tracking controller for anchored reference trajectories."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .anchoring import AnchoredTrajectory
from .estimator import EstimatorState


@dataclass(frozen=True)
class ControllerParams:
    kp: float = 4.0
    kd: float = 3.0
    a_cmd_max: float = 6.0
    k_yaw: float = 2.0
    yaw_rate_max: float = 2.0
    feedforward: bool = True


@dataclass(frozen=True)
class ControlCommand:
    acceleration_W: np.ndarray
    yaw_rate: float
    timestamp: float
    tracking_error: float = 0.0
    generation: int = 0


@dataclass(frozen=True)
class SyncInput:
    """A state and the trajectory version produced by the same update event."""

    state: EstimatorState
    trajectory: AnchoredTrajectory
    generation: int = 0


def saturate(a: np.ndarray, limit: float) -> np.ndarray:
    n = float(np.linalg.norm(a))
    if n > limit:
        return a * (limit / n)
    return a


def update(inp: SyncInput, t_now: float, params: ControllerParams = ControllerParams()) -> ControlCommand:
    """PD plus feedforward on the double integrator, saturated to ``a_cmd_max``."""
    traj = inp.trajectory.trajectory
    r_ref, yaw_ref, v_ref, a_ref = traj.sample(t_now)
    s = inp.state
    err = r_ref - s.r_WS
    a = params.kp * err + params.kd * (v_ref - s.v_W)
    if params.feedforward:
        a = a + a_ref
    a = saturate(a, params.a_cmd_max)
    dyaw = math.remainder(yaw_ref - s.q_WS.yaw(), 2 * math.pi)
    yaw_rate = float(np.clip(params.k_yaw * dyaw, -params.yaw_rate_max, params.yaw_rate_max))
    return ControlCommand(a, yaw_rate, t_now, float(np.linalg.norm(err)), inp.generation)

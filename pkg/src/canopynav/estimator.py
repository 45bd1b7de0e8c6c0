"""Simulated VI-SLAM: drifting live estimates, keyframes, loop-closure corrections.

The estimate is the true pose left-multiplied by a world-frame drift
transform ``D`` (yaw + translation; roll and pitch stay drift-free since
gravity makes them observable). ``D`` grows with distance travelled, driven
by a distance-correlated random direction so that over short spans the
error grows linearly at ``drift_rate`` and over long spans like a random walk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, UnitQuaternion, compose, inverse, transform_point


@dataclass(frozen=True)
class EstimatorParams:
    drift_rate: float = 0.005            # position error per metre travelled
    yaw_drift_deg_per_100m: float = 0.5
    drift_correlation_m: float = 500.0
    keyframe_distance_m: float = 1.0
    keyframe_angle_deg: float = 15.0
    loop_closure: bool = True
    loop_radius_m: float = 3.0
    loop_min_age_kf: int = 50
    loop_cooldown_kf: int = 10
    seed: int = 0


@dataclass(frozen=True)
class EstimatorState:
    r_WS: np.ndarray
    q_WS: UnitQuaternion
    v_W: np.ndarray
    timestamp: float
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def pose(self) -> Pose:
        return Pose(self.q_WS, self.r_WS)


@dataclass
class Keyframe:
    id: int
    T_WS: Pose
    timestamp: float
    is_submap_host: bool = False
    # simulation ground truth, never exposed to the navigation stack
    T_WS_true: Pose = field(default_factory=Pose, repr=False)
    path_distance: float = field(default=0.0, repr=False)


@dataclass(frozen=True)
class StateUpdate:
    live_state: EstimatorState
    corrected_keyframes: tuple[tuple[int, Pose], ...] = ()
    is_loop_closure: bool = False
    new_keyframe: Keyframe | None = None
    generation: int = 0
    loop_keyframe_id: int | None = None
    matched_keyframe_id: int | None = None


def yaw_pose_about(pivot: np.ndarray, yaw: float, shift: np.ndarray) -> Pose:
    """Rotation by ``yaw`` about the vertical axis through ``pivot``, then ``shift``."""
    q = UnitQuaternion.from_yaw(yaw)
    t = pivot - q.matrix() @ pivot + shift
    return Pose(q, t)


class DriftingEstimator:
    def __init__(self, params: EstimatorParams = EstimatorParams(), t0: float = 0.0):
        self.params = params
        self.rng = np.random.default_rng(params.seed)
        self.drift = Pose.identity()
        self.timestamp = t0
        self.keyframes: list[Keyframe] = []
        self.generation = 0
        self.path_distance = 0.0
        self._last_true: Pose | None = None
        self._last_closure_kf: int | None = None
        # distance-correlated drift directions, stationary variance 1 in total
        self._dir = self.rng.normal(0.0, math.sqrt(1.0 / 3.0), size=3)
        self._yaw_dir = float(self.rng.normal())

    @property
    def live_pose(self) -> Pose:
        if self._last_true is None:
            raise RuntimeError("estimator has not been stepped")
        return compose(self.drift, self._last_true)

    def estimate(self, true_pose: Pose, true_velocity, timestamp: float | None = None) -> EstimatorState:
        """Apply the current drift to a true state (used between SLAM frames)."""
        est = compose(self.drift, true_pose)
        v = self.drift.R @ np.asarray(true_velocity, dtype=float)
        return EstimatorState(est.translation, est.rotation, v,
                              self.timestamp if timestamp is None else timestamp)

    def _advance_drift(self, ds: float) -> None:
        p = self.params
        noise = self.rng.normal(size=4)
        rho = math.exp(-ds / p.drift_correlation_m) if p.drift_correlation_m > 0 else 0.0
        k = math.sqrt(max(0.0, 1.0 - rho * rho))
        self._dir = rho * self._dir + k * math.sqrt(1.0 / 3.0) * noise[:3]
        self._yaw_dir = rho * self._yaw_dir + k * noise[3]
        shift = p.drift_rate * ds * self._dir
        dyaw = math.radians(p.yaw_drift_deg_per_100m) / 100.0 * ds * self._yaw_dir
        if ds == 0.0 or (not np.any(shift) and dyaw == 0.0):
            return
        p_est = transform_point(self.drift, self._last_true.translation)
        self.drift = compose(yaw_pose_about(p_est, dyaw, shift), self.drift)

    def step(self, true_pose: Pose, true_velocity, dt: float) -> StateUpdate:
        if dt <= 0:
            raise ValueError("dt must be positive")
        ds = 0.0
        if self._last_true is not None:
            ds = float(np.linalg.norm(true_pose.translation - self._last_true.translation))
        self._last_true = true_pose
        self.path_distance += ds
        self._advance_drift(ds)
        self.timestamp += dt
        state = self.estimate(true_pose, true_velocity)
        kf = self.maybe_create_keyframe(state)
        if kf is not None and self.params.loop_closure:
            closure = self.detect_and_close_loop(true_pose, true_velocity)
            if closure is not None:
                return StateUpdate(closure.live_state, closure.corrected_keyframes, True, kf,
                                   self.generation, closure.loop_keyframe_id,
                                   closure.matched_keyframe_id)
        return StateUpdate(state, (), False, kf, self.generation)

    def maybe_create_keyframe(self, state: EstimatorState) -> Keyframe | None:
        """New keyframe after ``keyframe_distance_m`` of translation or ``keyframe_angle_deg`` of rotation."""
        p = self.params
        pose = state.pose
        if self.keyframes:
            last = self.keyframes[-1].T_WS
            moved = float(np.linalg.norm(pose.translation - last.translation))
            turned = math.degrees(pose.rotation.angle_to(last.rotation))
            if moved <= p.keyframe_distance_m and turned <= p.keyframe_angle_deg:
                return None
        kf = Keyframe(len(self.keyframes), pose, state.timestamp,
                      T_WS_true=self._last_true if self._last_true is not None else pose,
                      path_distance=self.path_distance)
        self.keyframes.append(kf)
        return kf

    def keyframe_poses(self) -> dict[int, Pose]:
        return {kf.id: kf.T_WS for kf in self.keyframes}

    def detect_and_close_loop(self, true_pose: Pose, true_velocity=(0.0, 0.0, 0.0),
                              force: bool = False) -> StateUpdate | None:
        """Close a loop if the vehicle is back near an old keyframe.

        The newest keyframe is re-aligned to the oldest keyframe within
        ``loop_radius_m`` (by true position) that is at least
        ``loop_min_age_kf`` keyframes older; keyframes in between receive
        the correction scaled by their fraction of path distance along the
        loop. ``force`` ignores the cooldown between closures.
        """
        p = self.params
        if not self.keyframes:
            return None
        cur = self.keyframes[-1]
        if (not force and self._last_closure_kf is not None
                and cur.id - self._last_closure_kf < p.loop_cooldown_kf):
            return None
        pos = true_pose.translation
        match = None
        for kf in self.keyframes[: max(0, cur.id - p.loop_min_age_kf + 1)]:
            if np.linalg.norm(kf.T_WS_true.translation - pos) <= p.loop_radius_m:
                match = kf
                break
        if match is None:
            return None
        d_match = compose(match.T_WS, inverse(match.T_WS_true))
        correction = compose(d_match, inverse(self.drift))
        pivot = self.live_pose.translation
        dyaw = correction.rotation.yaw()
        tau = transform_point(correction, pivot) - pivot
        span = cur.path_distance - match.path_distance
        corrected = []
        for kf in self.keyframes[match.id + 1:]:
            f = 1.0 if span <= 0 else min(1.0, max(0.0, (kf.path_distance - match.path_distance) / span))
            kf.T_WS = compose(yaw_pose_about(pivot, f * dyaw, f * tau), kf.T_WS)
            corrected.append((kf.id, kf.T_WS))
        self.drift = compose(correction, self.drift)
        self.generation += 1
        self._last_closure_kf = cur.id
        state = self.estimate(true_pose, true_velocity)
        return StateUpdate(state, tuple(corrected), True, None, self.generation, cur.id, match.id)

"""Deterministic mission simulation wiring estimator, mapping, planning,
anchoring and control on one simulated clock.

Phase order per control tick: truth propagation, collision check,
estimator (at the SLAM rate), depth integration (at the depth rate),
planning, anchoring deformation, control.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .anchoring import AnchoredTrajectory, bind, deform, displacement
from .config import from_dict, to_dict
from .controller import ControllerParams, SyncInput, update
from .estimator import DriftingEstimator, EstimatorParams, StateUpdate
from .geometry import Pose, UnitQuaternion, compose
from .mapping import MappingParams, SubmapCollection
from .planner import PlannerParams, SegmentChecker, plan
from .trajectory import ReferenceTrajectory, corner_speed, path_to_trajectory, yaw_quaternions
from .world import (T_SC, ForestWorld, Intrinsics, collides, generate_forest, raycast_depth)


@dataclass(frozen=True)
class WorldConfig:
    side_m: float = 128.0
    density_per_ha: float = 378.0
    seed: int | None = None             # None: use the mission seed
    min_spacing_m: float = 1.5
    radius_range: tuple[float, float] = (0.15, 0.4)
    height_range: tuple[float, float] = (15.0, 25.0)
    start_clear_m: float = 2.0          # no trunk within this distance of the start
    trees: list[tuple[float, float, float, float]] | None = None


@dataclass(frozen=True)
class PatternConfig:
    kind: Literal["lawnmower", "modified", "explicit"] = "lawnmower"
    origin: tuple[float, float] = (40.0, 40.0)
    extent_m: tuple[float, float] = (48.0, 48.0)
    row_spacing_m: float = 12.0
    altitude_m: float = 2.5
    revisit_every: int = 2
    goals: list[tuple[float, float, float]] = field(default_factory=list)
    start: tuple[float, float, float] | None = None   # None: first pattern goal


@dataclass(frozen=True)
class SensorConfig:
    width: int = 96
    height: int = 72
    hfov_deg: float = 90.0
    max_range_m: float = 10.0
    noise_std_m: float = 0.0


@dataclass(frozen=True)
class NavigationConfig:
    v_max: float = 3.0
    a_max: float = 2.0
    traj_dt: float = 0.05
    anchors_K: int = 4
    horizon_m: float = 8.0
    replan_lead_s: float = 0.0
    plan_latency_s: float = 0.5
    goal_tolerance_m: float = 1.5
    unreachable_goal_radius_m: float = 4.0
    body_free_radius_m: float = 0.9
    start_free_radius_m: float = 1.5
    recovery_yaw_deg: float = 45.0
    recovery_hold_s: float = 1.0
    max_recoveries: int = 16
    max_plan_attempts: int = 6
    goal_timeout_s: float = 90.0
    commit_s: float = 0.6
    max_commit_error_m: float = 0.5


@dataclass(frozen=True)
class MissionConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    pattern: PatternConfig = field(default_factory=PatternConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    estimator: EstimatorParams = field(default_factory=EstimatorParams)
    mapping: MappingParams = field(default_factory=lambda: MappingParams(resolution=0.2, carve_invalid_m=9.5))
    planner: PlannerParams = field(default_factory=lambda: PlannerParams(z_range=(1.8, 3.2), max_iterations=300))
    controller: ControllerParams = field(default_factory=ControllerParams)
    navigation: NavigationConfig = field(default_factory=NavigationConfig)
    seed: int = 0
    slam_hz: float = 15.0
    depth_hz: float = 5.0
    control_hz: float = 40.0
    mav_radius_m: float = 0.3
    max_time_s: float = 900.0
    gt_fusion: bool = True
    dense_window: int | None = 10
    final_hover_s: float = 2.0
    force_final_loop_closure: bool = False

    def __post_init__(self):
        if min(self.slam_hz, self.depth_hz, self.control_hz) <= 0:
            raise ValueError("rates must be positive")
        if self.control_hz < 40:
            raise ValueError("control_hz must be at least 40")
        if self.mav_radius_m <= 0:
            raise ValueError("mav_radius_m must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "MissionConfig":
        if "world" not in d:
            from .config import ConfigError
            raise ConfigError("world", "missing required section")
        return from_dict(cls, d)

    def to_dict(self) -> dict:
        return to_dict(self)


# -- mission patterns ------------------------------------------------------

def _extent_xy(extent) -> tuple[float, float]:
    e = np.atleast_1d(np.asarray(extent, dtype=float))
    return (float(e[0]), float(e[-1]))


def generate_lawnmower(extent, row_spacing: float, altitude: float,
                       origin=(0.0, 0.0)) -> list[np.ndarray]:
    """Boustrophedon corner goals: rows along x, stepping ``row_spacing`` in y."""
    if row_spacing <= 0:
        raise ValueError("row_spacing must be positive")
    ex, ey = _extent_xy(extent)
    n_rows = int(math.floor(ey / row_spacing + 1e-9)) + 1
    goals = []
    for i in range(n_rows):
        y = origin[1] + i * row_spacing
        xs = (origin[0], origin[0] + ex) if i % 2 == 0 else (origin[0] + ex, origin[0])
        goals += [np.array([xs[0], y, altitude]), np.array([xs[1], y, altitude])]
    return goals


def generate_modified_lawnmower(extent, row_spacing: float, altitude: float,
                                revisit_every: float, origin=(0.0, 0.0)) -> list[np.ndarray]:
    """Lawnmower that, after every ``revisit_every`` rows, detours back to the
    previous row on the current side before moving on."""
    if revisit_every < 1:
        raise ValueError("revisit_every must be >= 1")
    base = generate_lawnmower(extent, row_spacing, altitude, origin)
    n_rows = len(base) // 2
    goals = []
    for i in range(n_rows):
        goals += base[2 * i: 2 * i + 2]
        if i >= 1 and i < n_rows - 1 and math.isfinite(revisit_every) and (i + 1) % int(revisit_every) == 0:
            end = base[2 * i + 1]
            goals.append(np.array([end[0], base[2 * i - 2][1], altitude]))
    return goals


def pattern_goals(p: PatternConfig) -> list[np.ndarray]:
    if p.kind == "lawnmower":
        return generate_lawnmower(p.extent_m, p.row_spacing_m, p.altitude_m, p.origin)
    if p.kind == "modified":
        return generate_modified_lawnmower(p.extent_m, p.row_spacing_m, p.altitude_m,
                                           p.revisit_every, p.origin)
    return [np.asarray(g, dtype=float) for g in p.goals]


def path_length(points) -> float:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def build_world(cfg: MissionConfig, start) -> ForestWorld:
    w = cfg.world
    if w.trees is not None:
        return ForestWorld.from_dict({"side_m": w.side_m, "trees": [list(t) for t in w.trees]})
    seed = cfg.seed if w.seed is None else w.seed
    return generate_forest(seed, w.side_m, w.density_per_ha, w.min_spacing_m, w.radius_range,
                           w.height_range, keep_clear=[(start[0], start[1], w.start_clear_m)])


# -- logging -----------------------------------------------------------------

TICK_COLUMNS = ["t", "x", "y", "z", "yaw", "vx", "vy", "vz",
                "est_x", "est_y", "est_z", "est_yaw", "est_vx", "est_vy", "est_vz",
                "ref_x", "ref_y", "ref_z", "ax", "ay", "az", "yaw_rate",
                "tracking_error", "est_generation", "traj_generation", "collision"]


@dataclass
class MissionLog:
    ticks: np.ndarray
    planning_events: list[dict]
    deformation_events: list[dict]
    deformation_displacements: list[np.ndarray]
    keyframes: list[dict]
    loop_closures: list[dict]
    collection: SubmapCollection | None
    gt_collection: SubmapCollection | None
    world: ForestWorld
    goals: list[np.ndarray]
    status: str
    distance_travelled_m: float
    wall_time_s: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def collided(self) -> bool:
        return bool(self.ticks[:, TICK_COLUMNS.index("collision")].any()) if len(self.ticks) else False

    def column(self, name: str) -> np.ndarray:
        return self.ticks[:, TICK_COLUMNS.index(name)]

    def summary(self) -> dict:
        return {
            "status": self.status,
            "ticks": int(len(self.ticks)),
            "duration_s": float(self.ticks[-1, 0]) if len(self.ticks) else 0.0,
            "distance_travelled_m": self.distance_travelled_m,
            "collided": self.collided,
            "n_keyframes": len(self.keyframes),
            "n_submaps": 0 if self.collection is None else len(self.collection),
            "n_plans": len(self.planning_events),
            "n_deformations": len(self.deformation_events),
            "n_loop_closures": len(self.loop_closures),
        }

    def write(self, out_dir) -> None:
        """Directory of CSVs plus JSON summary, world and submap dumps."""
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        np.savetxt(d / "ticks.csv", self.ticks, delimiter=",", fmt="%.10g",
                   header=",".join(TICK_COLUMNS), comments="")
        _write_dicts(d / "planning_events.csv", self.planning_events)
        _write_dicts(d / "deformation_events.csv", self.deformation_events)
        with open(d / "deformation_displacements.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["event", "reference", "displacement_m"])
            for e, disp in enumerate(self.deformation_displacements):
                for j, v in enumerate(disp):
                    wr.writerow([e, j, f"{v:.10g}"])
        _write_dicts(d / "keyframes.csv", self.keyframes)
        _write_dicts(d / "loop_closures.csv", self.loop_closures)
        np.savetxt(d / "goals.csv", np.array(self.goals).reshape(-1, 3), delimiter=",",
                   fmt="%.10g", header="x,y,z", comments="")
        self.world.save(d / "world.json")
        (d / "summary.json").write_text(json.dumps(self.summary(), indent=2))
        if self.collection is not None:
            self.collection.dump(d / "submaps")
        if self.gt_collection is not None:
            self.gt_collection.dump(d / "submaps_gt")


def _write_dicts(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        if not rows:
            f.write("\n")
            return
        wr = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})


def read_ticks(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


# -- the mission loop -----------------------------------------------------------

def _rate_ticks(rate: float, control_hz: float, k: int) -> bool:
    """True on control ticks where a ``rate`` event falls (integer arithmetic)."""
    return math.floor(k * rate / control_hz + 1e-9) > math.floor((k - 1) * rate / control_hz + 1e-9)


def _hover_trajectory(p, yaw: float, t0: float) -> ReferenceTrajectory:
    return ReferenceTrajectory(np.array([t0]), np.asarray(p, dtype=float)[None],
                               yaw_quaternions(np.array([yaw])), np.zeros((1, 3)))


class Mission:
    """State of one running mission; ``run_mission`` drives it to completion."""

    def __init__(self, cfg: MissionConfig):
        self.cfg = cfg
        self.goals = pattern_goals(cfg.pattern)
        if not self.goals:
            raise ValueError("mission has no goals")
        start = np.asarray(cfg.pattern.start if cfg.pattern.start is not None else self.goals[0], dtype=float)
        self.world = build_world(cfg, start)
        self.dt = 1.0 / cfg.control_hz
        self.intr = Intrinsics.from_fov(cfg.sensor.width, cfg.sensor.height, cfg.sensor.hfov_deg)
        est_params = cfg.estimator
        if est_params.seed != cfg.seed:
            est_params = dataclasses.replace(est_params, seed=cfg.seed)
        self.estimator = DriftingEstimator(est_params)
        self.collection = SubmapCollection(cfg.mapping, dense_window=cfg.dense_window)
        self.gt_collection = SubmapCollection(cfg.mapping, dense_window=cfg.dense_window) if cfg.gt_fusion else None
        # truth
        self.r = start.copy()
        self.v = np.zeros(3)
        self.yaw = 0.0
        first = self.goals[1] if np.linalg.norm(self.goals[0] - start) < 1e-6 and len(self.goals) > 1 else self.goals[0]
        if np.linalg.norm(first[:2] - start[:2]) > 1e-6:
            self.yaw = math.atan2(first[1] - start[1], first[0] - start[0])
        self.a_cmd = np.zeros(3)
        self.yaw_rate = 0.0
        self.t = 0.0
        self.state = None
        self.anchored: AnchoredTrajectory | None = None
        self.traj_generation = 0
        self.plan_target = None
        self.plan_is_final = False
        self.waypoint_idx = np.zeros(0, dtype=np.int64)
        self.goal_i = 0
        if np.linalg.norm(self.goals[0] - start) < cfg.navigation.goal_tolerance_m:
            self.goal_i = 1
        self.goal_since = 0.0
        self.goal_best = math.inf
        self.recoveries = 0
        self.recovery_until = -1.0
        self.need_plan = True
        self.rows: list[list[float]] = []
        self.planning_events: list[dict] = []
        self.deformation_events: list[dict] = []
        self.deformation_displacements: list[np.ndarray] = []
        self.loop_closures: list[dict] = []
        self.distance = 0.0
        self.status = "running"
        self.plan_count = 0
        self.depth_count = 0

    # -- truth and sensing --
    @property
    def true_pose(self) -> Pose:
        return Pose(UnitQuaternion.from_yaw(self.yaw), self.r)

    def _propagate(self):
        D = self.estimator.drift.R
        a_true = D.T @ self.a_cmd
        r_old = self.r.copy()
        self.v = self.v + a_true * self.dt
        self.r = self.r + self.v * self.dt
        self.yaw = math.remainder(self.yaw + self.yaw_rate * self.dt, 2 * math.pi)
        self.distance += float(np.linalg.norm(self.r - r_old))

    def _apply_update(self, upd: StateUpdate):
        nav = self.cfg.navigation
        if upd.new_keyframe is not None:
            kf = upd.new_keyframe
            if len(self.collection) == 0:
                self.collection.create_submap(kf.id, kf.T_WS)
                kf.is_submap_host = True
                self.collection.mark_free_sphere(kf.T_WS.translation, nav.start_free_radius_m)
                if self.gt_collection is not None:
                    self.gt_collection.create_submap(kf.id, kf.T_WS_true)
                    self.gt_collection.mark_free_sphere(kf.T_WS_true.translation, nav.start_free_radius_m)
            else:
                sid = self.collection.maybe_create_submap(kf)
                if sid is not None:
                    kf.is_submap_host = True
                    if self.gt_collection is not None:
                        self.gt_collection.create_submap(kf.id, kf.T_WS_true)
        if upd.is_loop_closure:
            self._on_correction(upd)

    def _on_correction(self, upd: StateUpdate):
        poses = dict(upd.corrected_keyframes)
        self.collection.update_poses(poses)
        self.loop_closures.append({"t": self.t, "loop_keyframe": upd.loop_keyframe_id,
                                   "matched_keyframe": upd.matched_keyframe_id,
                                   "n_corrected": len(poses), "generation": upd.generation})
        if self.anchored is not None:
            before = self.anchored
            self.anchored = deform(before, self.estimator.keyframe_poses())
            disp = displacement(before, self.anchored)
            self.deformation_events.append({
                "t": self.t, "generation": upd.generation, "n_references": len(disp),
                "max_displacement_m": float(disp.max()), "mean_displacement_m": float(disp.mean())})
            self.deformation_displacements.append(disp)
        self.traj_generation = upd.generation

    def _sense(self):
        cfg = self.cfg
        T_WC_true = compose(self.true_pose, T_SC)
        depth = raycast_depth(self.world, T_WC_true, self.intr, cfg.sensor.max_range_m,
                              cfg.sensor.noise_std_m, seed=cfg.seed * 100003 + self.depth_count,
                              timestamp=self.t)
        self.depth_count += 1
        est_pose = self.state.pose
        self.collection.integrate_depth(compose(est_pose, T_SC), depth)
        self.collection.mark_free_sphere(est_pose.translation, cfg.navigation.body_free_radius_m)
        if self.gt_collection is not None:
            self.gt_collection.integrate_depth(T_WC_true, depth)
            self.gt_collection.mark_free_sphere(self.r, cfg.navigation.body_free_radius_m)

    # -- planning --
    def _checker(self, lo, hi) -> SegmentChecker:
        p = self.cfg.planner
        view = self.collection.view(p.last_S)
        return SegmentChecker(view, p.radius, lo, hi)

    def _remaining_valid(self) -> bool:
        """Exact re-check of the not-yet-flown part of the current path."""
        if self.anchored is None or len(self.waypoint_idx) < 2:
            return True
        traj = self.anchored.trajectory
        if self.t >= traj.end_time:
            return True
        r_now = traj.sample(self.t)[0]
        nxt = self.waypoint_idx[traj.t[self.waypoint_idx] > self.t]
        pts = np.vstack([r_now[None], traj.r[nxt]])
        if len(pts) < 2:
            return True
        checker = self._checker(pts.min(axis=0), pts.max(axis=0))
        return all(checker(a, b) for a, b in zip(pts[:-1], pts[1:]))

    def _current_start(self):
        """Where the next plan starts, and the already committed path leading there.

        While tracking well, the next ``commit_s`` seconds of the current
        reference are kept so the new trajectory joins it at a waypoint and
        the corner-speed rule slows the vehicle before any direction change.
        """
        nav = self.cfg.navigation
        est = self.state
        if self.anchored is not None and self.t < self.anchored.trajectory.end_time:
            traj = self.anchored.trajectory
            r_ref, _, v_ref, _ = traj.sample(self.t)
            if np.linalg.norm(r_ref - est.r_WS) < nav.max_commit_error_m:
                t_c = min(self.t + nav.commit_s, traj.end_time)
                r_c = traj.sample(t_c)[0] if t_c < traj.end_time else traj.r[-1].copy()
                mid = self.waypoint_idx[(traj.t[self.waypoint_idx] > self.t) & (traj.t[self.waypoint_idx] < t_c)]
                prefix = np.vstack([r_ref[None], traj.r[mid], r_c[None]])
                return r_c, v_ref, prefix
        return est.r_WS.copy(), est.v_W.copy(), est.r_WS[None].copy()

    def _candidates(self, start, goal):
        nav = self.cfg.navigation
        alt = self.cfg.pattern.altitude_m
        d_goal = float(np.linalg.norm((goal - start)[:2]))
        out = []
        if d_goal <= nav.horizon_m:
            out.append((goal.copy(), True))
        heading = math.atan2(goal[1] - start[1], goal[0] - start[0])
        reach = min(nav.horizon_m, d_goal)
        for frac in (1.0, 0.75, 0.5, 0.3):
            d = reach * frac
            if d < 1.0:
                continue
            for k in (0, 1, -1, 2, -2, 3, -3, 4, -4, 5, -5, 6, -6):
                ang = heading + math.radians(15.0) * k
                c = np.array([start[0] + d * math.cos(ang), start[1] + d * math.sin(ang), alt])
                out.append((c, False))
        # prefer candidates that end closest to the goal
        out.sort(key=lambda cg: (not cg[1], float(np.linalg.norm(cg[0] - goal))))
        return out

    def _plan(self):
        cfg = self.cfg
        nav = cfg.navigation
        goal = self.goals[self.goal_i]
        start, v_now, prefix = self._current_start()
        lo = np.minimum(start, goal) - nav.horizon_m - cfg.planner.margin_m
        hi = np.maximum(start, goal) + nav.horizon_m + cfg.planner.margin_m
        lo = np.maximum(lo, start - nav.horizon_m - cfg.planner.margin_m)
        hi = np.minimum(hi, start + nav.horizon_m + cfg.planner.margin_m)
        if cfg.planner.z_range is not None:
            lo[2] = min(cfg.planner.z_range[0], start[2])
            hi[2] = max(cfg.planner.z_range[1], start[2])
        checker = self._checker(lo, hi)
        attempts = 0
        result = None
        target = None
        is_final = False
        for cand, final in self._candidates(start, goal):
            if np.linalg.norm(cand - start) < 0.5:
                continue
            if not checker(cand, cand):
                continue
            attempts += 1
            pp = cfg.planner
            pp = dataclasses.replace(pp, seed=pp.seed + cfg.seed * 7919 + self.plan_count)
            res = plan(start, cand, None, pp, checker=checker)
            self.plan_count += 1
            if res.success:
                result, target, is_final = res, cand, final
                break
            if attempts >= nav.max_plan_attempts:
                break
        ev = {"t": self.t, "goal_index": self.goal_i, "start_x": start[0], "start_y": start[1], "start_z": start[2],
              "success": result is not None, "attempts": attempts,
              "target_x": np.nan if target is None else target[0],
              "target_y": np.nan if target is None else target[1],
              "target_z": np.nan if target is None else target[2],
              "iterations": 0 if result is None else result.iterations,
              "cost": math.nan if result is None else result.cost,
              "n_waypoints": 0 if result is None else len(result.path)}
        self.planning_events.append(ev)
        if result is None:
            return False
        wp = np.vstack([prefix, result.path.waypoints[1:]])
        keep = np.concatenate([[True], np.linalg.norm(np.diff(wp, axis=0), axis=1) > 1e-6])
        wp = wp[keep]
        v0 = 0.0
        speed = float(np.linalg.norm(v_now))
        if len(wp) > 1 and speed > 1e-6:
            d0 = wp[1] - wp[0]
            c = float(np.clip(v_now @ d0 / (speed * np.linalg.norm(d0)), -1.0, 1.0))
            v0 = min(speed, corner_speed(math.acos(c), nav.v_max))
        # from rest the vehicle waits out the planning time; in motion it flies the committed prefix
        t0 = self.t + (nav.plan_latency_s if len(prefix) == 1 else 0.0)
        traj = path_to_trajectory(wp, nav.v_max, nav.a_max, nav.traj_dt, v0=v0, t0=t0,
                                  initial_yaw=self.state.q_WS.yaw())
        self.anchored = bind(traj, self.estimator.keyframes, nav.anchors_K, generation=0)
        self.traj_generation = self.estimator.generation
        self.waypoint_idx = np.searchsorted(traj.t, self._waypoint_times(traj, wp))
        self.plan_target = target
        self.plan_is_final = is_final
        return True

    @staticmethod
    def _waypoint_times(traj: ReferenceTrajectory, wp: np.ndarray) -> np.ndarray:
        idx = []
        j = 0
        for p in wp:
            d = np.linalg.norm(traj.r[j:] - p, axis=1)
            j = j + int(np.argmin(d))
            idx.append(traj.t[j])
        return np.array(idx)

    def _hover(self, yaw: float):
        self.anchored = bind(_hover_trajectory(self.state.r_WS, yaw, self.t), self.estimator.keyframes,
                             self.cfg.navigation.anchors_K)
        self.traj_generation = self.estimator.generation
        self.waypoint_idx = np.zeros(0, dtype=np.int64)
        self.plan_target = None
        self.plan_is_final = False

    def _navigate(self, depth_tick: bool):
        nav = self.cfg.navigation
        est = self.state.r_WS
        goal = self.goals[self.goal_i]
        dist = float(np.linalg.norm(goal - est))
        if dist < self.goal_best - 0.5:
            self.goal_best = dist
            self.goal_since = self.t
        reached = dist < nav.goal_tolerance_m
        if not reached and dist < nav.unreachable_goal_radius_m:
            # close enough to have observed it: a goal that is still not free is skipped
            reached = not self._checker(goal - 1.0, goal + 1.0)(goal, goal)
        if not reached and self.t - self.goal_since > nav.goal_timeout_s:
            reached = True
        if reached:
            self.goal_i += 1
            self.goal_best = math.inf
            self.goal_since = self.t
            if self.goal_i >= len(self.goals):
                return
            self.need_plan = True
        if self.t < self.recovery_until:
            return
        traj = self.anchored.trajectory if self.anchored is not None else None
        if traj is not None and not self.need_plan:
            remaining = traj.end_time - self.t
            if remaining < nav.replan_lead_s and not (self.plan_is_final and remaining > 0):
                self.need_plan = True
            elif remaining <= 0:
                self.need_plan = True
        if depth_tick and not self.need_plan and not self._remaining_valid():
            self.need_plan = True
        if not self.need_plan:
            return
        if self._plan():
            self.need_plan = False
            self.recoveries = 0
            return
        # recovery: turn in place to observe more, then retry
        self.recoveries += 1
        if self.recoveries > nav.max_recoveries:
            self.status = "aborted_planner"
            return
        self._hover(self.state.q_WS.yaw() + math.radians(nav.recovery_yaw_deg))
        self.recovery_until = self.t + nav.recovery_hold_s

    def _control(self) -> tuple[np.ndarray, float, float]:
        if self.anchored is None:
            self.a_cmd = np.zeros(3)
            self.yaw_rate = 0.0
            return self.state.r_WS.copy(), 0.0, 0.0
        cmd = update(SyncInput(self.state, self.anchored, self.estimator.generation), self.t,
                     self.cfg.controller)
        self.a_cmd = cmd.acceleration_W
        self.yaw_rate = cmd.yaw_rate
        return self.anchored.trajectory.sample(self.t)[0], cmd.tracking_error, cmd.yaw_rate

    def _log_tick(self, r_ref, err, collided):
        s = self.state
        self.rows.append([self.t, *self.r, self.yaw, *self.v, *s.r_WS, s.q_WS.yaw(), *s.v_W,
                          *r_ref, *self.a_cmd, self.yaw_rate, err,
                          self.estimator.generation, self.traj_generation, float(collided)])

    def tick(self, k: int) -> None:
        cfg = self.cfg
        if k > 0:
            self._propagate()
            self.t = k * self.dt
        collided = collides(self.world, self.r, cfg.mav_radius_m)
        if k == 0 or _rate_ticks(cfg.slam_hz, cfg.control_hz, k):
            upd = self.estimator.step(self.true_pose, self.v, 1.0 / cfg.slam_hz)
            self._apply_update(upd)
            self.state = upd.live_state
        else:
            self.state = self.estimator.estimate(self.true_pose, self.v, self.t)
        depth_tick = k == 0 or _rate_ticks(cfg.depth_hz, cfg.control_hz, k)
        if depth_tick:
            self._sense()
        if self.goal_i < len(self.goals) and self.status == "running":
            self._navigate(depth_tick)
        r_ref, err, _ = self._control()
        self._log_tick(r_ref, err, collided)
        if collided:
            self.status = "collision"

    def force_loop_closure(self) -> bool:
        upd = self.estimator.detect_and_close_loop(self.true_pose, self.v, force=True)
        if upd is None:
            return False
        self._on_correction(upd)
        self.state = upd.live_state
        return True

    def log(self, wall: float) -> MissionLog:
        kfs = [{"id": kf.id, "t": kf.timestamp, "host": int(kf.is_submap_host),
                **{f"est_{n}": v for n, v in zip(("x", "y", "z", "qw", "qx", "qy", "qz"), kf.T_WS.to_list())},
                **{f"true_{n}": v for n, v in zip(("x", "y", "z", "qw", "qx", "qy", "qz"), kf.T_WS_true.to_list())},
                "path_distance": kf.path_distance}
               for kf in self.estimator.keyframes]
        ticks = np.array(self.rows, dtype=float).reshape(-1, len(TICK_COLUMNS))
        return MissionLog(ticks, self.planning_events, self.deformation_events,
                          self.deformation_displacements, kfs, self.loop_closures,
                          self.collection, self.gt_collection, self.world, self.goals,
                          self.status, self.distance, wall, self.cfg.to_dict())


def run_mission(config: MissionConfig) -> MissionLog:
    """Fly the configured pattern to completion, abort, collision or timeout."""
    wall0 = time.perf_counter()
    m = Mission(config)
    n_max = int(math.ceil(config.max_time_s * config.control_hz))
    k = 0
    hover_left = None
    while k <= n_max:
        m.tick(k)
        k += 1
        if m.status != "running":
            break
        if m.goal_i >= len(m.goals):
            if hover_left is None:
                hover_left = int(round(config.final_hover_s * config.control_hz))
                if config.force_final_loop_closure:
                    m.force_loop_closure()
                m._hover(m.state.q_WS.yaw())
            hover_left -= 1
            if hover_left <= 0:
                m.status = "completed"
                break
    else:
        m.status = "timeout"
    return m.log(time.perf_counter() - wall0)

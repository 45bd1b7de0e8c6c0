"""Reconstruction and flight metrics, and the SLAM versus VIO comparison."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriangleMesh
from .world import ForestWorld, ground_truth_mesh, surface_distance


@dataclass(frozen=True)
class ReconstructionMetrics:
    accuracy_rmse_m: float
    completeness_pct: float
    n_reconstructed_vertices: int
    n_gt_vertices: int

    def __post_init__(self):
        if not 0.0 <= self.completeness_pct <= 100.0:
            raise ValueError("completeness must lie in [0, 100]")
        if self.accuracy_rmse_m < 0:
            raise ValueError("accuracy must be nonnegative")


@dataclass(frozen=True)
class EvalParams:
    tau_m: float = 0.5
    gt_resolution_m: float | None = None   # None: the mapping resolution
    gt_margin_m: float = 2.0
    gt_max_height_m: float | None = 6.0
    include_ground: bool = False


def accuracy(reconstructed: TriangleMesh, world: ForestWorld) -> float:
    """RMS analytic distance from reconstructed vertices to the true surfaces."""
    if reconstructed.n_vertices == 0:
        raise ValueError("accuracy is undefined for an empty reconstruction")
    d = surface_distance(world, reconstructed.vertices)
    return float(np.sqrt(np.mean(d * d)))


def completeness(reconstructed: TriangleMesh, gt: TriangleMesh, tau: float = 0.5) -> float:
    """Percent of ground-truth vertices with a reconstructed vertex within ``tau``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if gt.n_vertices == 0:
        raise ValueError("ground-truth mesh has no vertices")
    if reconstructed.n_vertices == 0:
        return 0.0
    d, _ = cKDTree(reconstructed.vertices).query(gt.vertices, k=1, distance_upper_bound=np.nextafter(tau, np.inf))  # bound is strict
    return float(100.0 * np.count_nonzero(d <= tau) / gt.n_vertices)


def evaluation_gt_mesh(world: ForestWorld, goals, resolution_m: float,
                       params: EvalParams = EvalParams()) -> TriangleMesh:
    """Ground-truth mesh cropped to the flown pattern plus a margin."""
    g = np.asarray(goals, dtype=float).reshape(-1, 3)
    lo = g[:, :2].min(axis=0) - params.gt_margin_m
    hi = g[:, :2].max(axis=0) + params.gt_margin_m
    res = params.gt_resolution_m or resolution_m
    return ground_truth_mesh(world, res, bounds=(lo[0], lo[1], hi[0], hi[1]),
                             max_height=params.gt_max_height_m, include_ground=params.include_ground)


def evaluate_reconstruction(mesh: TriangleMesh, world: ForestWorld, gt: TriangleMesh,
                            tau: float = 0.5) -> ReconstructionMetrics:
    acc = accuracy(mesh, world) if mesh.n_vertices else float("nan")
    return ReconstructionMetrics(acc, completeness(mesh, gt, tau), mesh.n_vertices, gt.n_vertices)


def trajectory_stats(log, loop_closure_times=None) -> dict:
    """Speed distribution, distance and drift of a flown mission.

    ``log`` is a MissionLog or its tick array (columns as ``sim.TICK_COLUMNS``).
    Drift before each loop closure is the estimate error on the tick before
    the closure, as a percentage of the distance flown up to then.
    """
    ticks = np.asarray(getattr(log, "ticks", log), dtype=float)
    if ticks.ndim != 2 or len(ticks) == 0:
        raise ValueError("trajectory_stats needs a nonempty log")
    if loop_closure_times is None and hasattr(log, "loop_closures"):
        loop_closure_times = [e["t"] for e in log.loop_closures]
    t = ticks[:, 0]
    pos = ticks[:, 1:4]
    speed = np.linalg.norm(ticks[:, 5:8], axis=1)
    step = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(step)])
    err = np.linalg.norm(ticks[:, 8:11] - pos, axis=1)
    q25, q50, q75 = np.percentile(speed, [25, 50, 75])
    before = []
    for tc in loop_closure_times or []:
        i = max(int(np.searchsorted(t, tc)) - 1, 0)
        if cum[i] > 0:
            before.append(100.0 * err[i] / cum[i])
    dist = float(cum[-1])
    return {
        "duration_s": float(t[-1] - t[0]),
        "distance_m": dist,
        "speed_mean": float(speed.mean()),
        "speed_q25": float(q25),
        "speed_median": float(q50),
        "speed_q75": float(q75),
        "speed_max": float(speed.max()),
        "final_drift_m": float(err[-1]),
        "final_drift_pct": float(100.0 * err[-1] / dist) if dist > 0 else 0.0,
        "max_drift_m": float(err.max()),
        "drift_before_closure_pct": before,
        "mean_drift_before_closure_pct": float(np.mean(before)) if before else None,
    }


def divergence_tick(a: np.ndarray, b: np.ndarray) -> int | None:
    """First tick where the true states of two runs differ (None if never)."""
    n = min(len(a), len(b))
    diff = np.any(a[:n, 1:8] != b[:n, 1:8], axis=1)
    idx = np.flatnonzero(diff)
    if len(idx):
        return int(idx[0])
    return None if len(a) == len(b) else n


@dataclass
class ComparisonReport:
    rows: list[dict]
    divergence_tick: int | None
    logs: dict = field(default_factory=dict, repr=False)

    def row(self, name: str) -> dict:
        return next(r for r in self.rows if r["mode"] == name)


def _metrics_row(name: str, mesh: TriangleMesh, world, gt, tau) -> dict:
    m = evaluate_reconstruction(mesh, world, gt, tau)
    return {"mode": name, **dataclasses.asdict(m)}


def compare_slam_vio(config, eval_params: EvalParams = EvalParams(), keep_logs: bool = False) -> ComparisonReport:
    """Fly the same seeded mission with and without loop closures.

    Rows: SLAM, VIO, and the ground-truth-pose fusion of each flight
    (GT-SLAM, GT-VIO).
    """
    from .sim import run_mission

    cfg_slam = dataclasses.replace(config, gt_fusion=True,
                                   estimator=dataclasses.replace(config.estimator, loop_closure=True))
    cfg_vio = dataclasses.replace(cfg_slam, estimator=dataclasses.replace(config.estimator, loop_closure=False))
    slam = run_mission(cfg_slam)
    vio = run_mission(cfg_vio)
    gt = evaluation_gt_mesh(slam.world, slam.goals, config.mapping.resolution, eval_params)
    tau = eval_params.tau_m
    rows = [
        _metrics_row("SLAM", slam.collection.extract_mesh(), slam.world, gt, tau),
        _metrics_row("VIO", vio.collection.extract_mesh(), vio.world, gt, tau),
        _metrics_row("GT-SLAM", slam.gt_collection.extract_mesh(), slam.world, gt, tau),
        _metrics_row("GT-VIO", vio.gt_collection.extract_mesh(), vio.world, gt, tau),
    ]
    for r, log in zip(rows, (slam, vio, slam, vio)):
        r["status"] = log.status
        r["n_loop_closures"] = len(log.loop_closures) if r["mode"] in ("SLAM", "VIO") else 0
        r["final_drift_m"] = trajectory_stats(log)["final_drift_m"] if r["mode"] in ("SLAM", "VIO") else 0.0
    return ComparisonReport(rows, divergence_tick(slam.ticks, vio.ticks),
                            {"SLAM": slam, "VIO": vio} if keep_logs else {})

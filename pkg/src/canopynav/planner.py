"""Informed RRT* over the last submaps, with a swept-cylinder validity rule."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from . import _voxelkernels as K
from .mapping import MapView, SubmapCollection
from .trajectory import ReferenceTrajectory, corner_speed, path_to_trajectory  # noqa: F401


@dataclass(frozen=True)
class PlannerParams:
    radius: float = 0.6
    last_S: int = 5
    alpha: float | None = None          # None: use the mapping threshold
    max_iterations: int = 600
    time_budget_s: float | None = None  # wall-clock cap on top of the iteration budget
    max_edge_m: float = 2.0
    goal_bias: float = 0.1
    rewire_gamma: float = 6.0
    margin_m: float = 4.0
    z_range: tuple[float, float] | None = None
    stop_ratio: float = 1.01            # stop once cost <= stop_ratio * straight-line distance
    shortcut: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.alpha is not None and self.alpha >= 0:
            raise ValueError("alpha must be negative")
        if self.max_iterations < 1 or self.max_edge_m <= 0:
            raise ValueError("max_iterations and max_edge_m must be positive")


@dataclass(frozen=True)
class Path:
    waypoints: np.ndarray

    def __post_init__(self):
        w = np.array(self.waypoints, dtype=float).reshape(-1, 3)
        w.setflags(write=False)
        object.__setattr__(self, "waypoints", w)

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum())

    def segments(self):
        return zip(self.waypoints[:-1], self.waypoints[1:])

    def to_csv(self, path) -> None:
        np.savetxt(FsPath(path), self.waypoints, delimiter=",", fmt="%.9g",
                   header="x,y,z", comments="")


@dataclass
class PlanResult:
    path: Path | None
    cost: float
    iterations: int
    cost_history: list[float] = field(default_factory=list)
    informed_samples: list[tuple[np.ndarray, float]] = field(default_factory=list)
    reason: str = ""

    @property
    def success(self) -> bool:
        return self.path is not None


class SegmentChecker:
    """Segment validity against one map snapshot, memoizing lattice lookups.

    Sample points form a world-aligned lattice of pitch ``resolution / 2``;
    the same lattice point is classified at most once per checker.
    """

    def __init__(self, view: MapView, radius: float, lo=None, hi=None):
        self.view = view
        self.radius = float(radius)
        self.pitch = view.resolution / 2.0
        if lo is None or hi is None:
            self.memo = np.full((1, 1, 1), -1, dtype=np.int8)
            self.origin = np.array([1 << 40] * 3, dtype=np.int64)
        else:
            lo = np.floor((np.asarray(lo) - radius) / self.pitch).astype(np.int64) - 1
            hi = np.ceil((np.asarray(hi) + radius) / self.pitch).astype(np.int64) + 1
            self.memo = np.full(tuple(hi - lo + 1), -1, dtype=np.int8)
            self.origin = lo
        self.checks = 0

    def __call__(self, a, b) -> bool:
        self.checks += 1
        if self.view.n_submaps == 0:
            return False
        return bool(K.segment_free(self.view.keys, self.view.slots, self.view.data,
                                   self.view.Rs, self.view.ts, self.view.resolution,
                                   self.view.alpha, self.view.beta,
                                   np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64),
                                   self.radius, self.pitch, self.memo, self.origin))


def _view(collection, last_S: int, alpha: float | None) -> MapView:
    view = collection if isinstance(collection, MapView) else collection.view(last_S)
    if alpha is not None and alpha != view.alpha:
        view = MapView(view.keys, view.slots, view.data, view.Rs, view.ts,
                       view.resolution, alpha, view.beta)
    return view


def is_segment_valid(a, b, radius: float, collection: SubmapCollection | MapView,
                     last_S: int = 5, alpha: float | None = None) -> bool:
    """True iff the cylinder a->b of ``radius`` and the half-ball at ``b`` are all Free."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if alpha is not None and alpha >= 0:
        raise ValueError("alpha must be negative")
    return SegmentChecker(_view(collection, last_S, alpha), radius)(a, b)


def path_is_valid(path: Path, checker: SegmentChecker) -> bool:
    if len(path) == 1:
        return checker(path.waypoints[0], path.waypoints[0])
    return all(checker(a, b) for a, b in path.segments())


def _informed_sample(rng, start, goal, c_best, c_min, C):
    """Uniform sample from the prolate hyperspheroid with foci start, goal."""
    r1 = c_best / 2.0
    ri = math.sqrt(max(c_best * c_best - c_min * c_min, 0.0)) / 2.0
    x = rng.normal(size=3)
    x *= rng.random() ** (1.0 / 3.0) / np.linalg.norm(x)
    return C @ (np.array([r1, ri, ri]) * x) + (start + goal) / 2.0


def _rotation_to_world(start, goal, c_min):
    a1 = (goal - start) / c_min
    M = np.outer(a1, [1.0, 0.0, 0.0])
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.linalg.det(U) * np.linalg.det(Vt)])
    return U @ D @ Vt


def _shortcut(points: np.ndarray, valid) -> np.ndarray:
    """Greedy forward shortcutting that keeps every kept segment valid."""
    out = [points[0]]
    i = 0
    while i < len(points) - 1:
        j = len(points) - 1
        while j > i + 1 and not valid(points[i], points[j]):
            j -= 1
        out.append(points[j])
        i = j
    return np.array(out)


def plan(start, goal, collection: SubmapCollection | MapView, params: PlannerParams = PlannerParams(),
         bounds: tuple[np.ndarray, np.ndarray] | None = None, record_samples: bool = False,
         checker: SegmentChecker | None = None) -> PlanResult:
    """Informed RRT* from ``start`` to ``goal``; deterministic for a fixed seed.

    Runs ``max_iterations`` samples (or until ``time_budget_s``), rewiring as
    RRT*. Once a solution exists, samples come from the informed ellipsoid.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    c_min = float(np.linalg.norm(goal - start))
    if c_min < 1e-9:
        return PlanResult(Path(start[None]), 0.0, 0, [0.0])
    if bounds is None:
        lo = np.minimum(start, goal) - params.margin_m
        hi = np.maximum(start, goal) + params.margin_m
        if params.z_range is not None:
            lo[2] = min(params.z_range[0], start[2], goal[2])
            hi[2] = max(params.z_range[1], start[2], goal[2])
    else:
        lo, hi = (np.asarray(x, dtype=float) for x in bounds)
    if checker is None:
        checker = SegmentChecker(_view(collection, params.last_S, params.alpha), params.radius, lo, hi)
    if not checker(goal, goal):
        return PlanResult(None, math.inf, 0, reason="goal not free")

    rng = np.random.default_rng(params.seed)
    n_max = params.max_iterations + 2
    pos = np.empty((n_max, 3))
    parent = np.full(n_max, -1, dtype=np.int64)
    cost = np.empty(n_max)
    children: list[list[int]] = [[] for _ in range(n_max)]
    pos[0] = start
    cost[0] = 0.0
    n = 1
    goal_links: dict[int, float] = {}   # node -> edge length to goal
    best_cost = math.inf
    best_node = -1
    history: list[float] = []
    informed: list[tuple[np.ndarray, float]] = []
    C = _rotation_to_world(start, goal, c_min)
    t0 = time.perf_counter()
    it = 0

    def try_goal(i: int):
        d = float(np.linalg.norm(goal - pos[i]))
        if d <= params.max_edge_m and checker(pos[i], goal):
            goal_links[i] = d

    def refresh_best():
        nonlocal best_cost, best_node
        for i, d in goal_links.items():
            if cost[i] + d < best_cost - 1e-12:
                best_cost, best_node = cost[i] + d, i

    try_goal(0)
    refresh_best()
    for it in range(1, params.max_iterations + 1):
        if params.time_budget_s is not None and time.perf_counter() - t0 > params.time_budget_s:
            break
        if best_cost <= params.stop_ratio * c_min:
            break
        if math.isfinite(best_cost):
            for _ in range(100):
                x = _informed_sample(rng, start, goal, best_cost, c_min, C)
                if np.all(x >= lo) and np.all(x <= hi):
                    break
            else:
                history.append(best_cost)
                continue
            if record_samples:
                informed.append((x, best_cost))
        elif rng.random() < params.goal_bias:
            x = goal.copy()
        else:
            x = lo + rng.random(3) * (hi - lo)
        d_all = np.linalg.norm(pos[:n] - x, axis=1)
        near_i = int(np.argmin(d_all))
        d = d_all[near_i]
        if d < 1e-9:
            history.append(best_cost)
            continue
        new = pos[near_i] + (x - pos[near_i]) * min(1.0, params.max_edge_m / d)
        r_near = min(params.max_edge_m, params.rewire_gamma * (math.log(n + 1) / (n + 1)) ** (1 / 3))
        dn = np.linalg.norm(pos[:n] - new, axis=1)
        near = np.flatnonzero(dn <= max(r_near, dn[near_i] + 1e-12))
        # best parent first, stop at the first valid one
        order = near[np.argsort(cost[near] + dn[near], kind="stable")]
        par = -1
        for j in order:
            if checker(pos[j], new):
                par = int(j)
                break
        if par < 0:
            history.append(best_cost)
            continue
        k = n
        n += 1
        pos[k] = new
        parent[k] = par
        cost[k] = cost[par] + dn[par]
        children[par].append(k)
        for j in near:
            if j == par:
                continue
            c_via = cost[k] + dn[j]
            if c_via < cost[j] - 1e-12 and checker(new, pos[j]):
                children[parent[j]].remove(int(j))
                parent[j] = k
                children[k].append(int(j))
                delta = cost[j] - c_via
                stack = [int(j)]
                while stack:
                    m = stack.pop()
                    cost[m] -= delta
                    stack.extend(children[m])
        try_goal(k)
        refresh_best()
        history.append(best_cost)

    if not math.isfinite(best_cost):
        return PlanResult(None, math.inf, it, history, informed, reason="no solution within budget")
    chain = [goal]
    i = best_node
    while i >= 0:
        chain.append(pos[i])
        i = parent[i]
    pts = np.array(chain[::-1])
    if params.shortcut and len(pts) > 2:
        pts = _shortcut(pts, checker)
    cost_out = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
    return PlanResult(Path(pts), cost_out, it, history, informed)

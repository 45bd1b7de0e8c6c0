"""Time-parameterized reference trajectories built from waypoint paths."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from .geometry import quat_to_matrix


def yaw_quaternions(yaw: np.ndarray) -> np.ndarray:
    yaw = np.asarray(yaw, dtype=float)
    q = np.zeros(yaw.shape + (4,))
    q[..., 0] = np.cos(yaw / 2)
    q[..., 3] = np.sin(yaw / 2)
    return q


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Samples ``(r_j, q_j, v_j, t_j)`` stored as parallel arrays."""

    t: np.ndarray   # (J,)
    r: np.ndarray   # (J, 3)
    q: np.ndarray   # (J, 4) w, x, y, z
    v: np.ndarray   # (J, 3)

    def __post_init__(self):
        J = len(self.t)
        if J == 0:
            raise ValueError("trajectory must hold at least one reference")
        for name, shape in (("r", (J, 3)), ("q", (J, 4)), ("v", (J, 3))):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        t = np.array(self.t, dtype=float)
        if np.any(np.diff(t) <= 0):
            raise ValueError("reference timestamps must increase strictly")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def start_time(self) -> float:
        return float(self.t[0])

    @property
    def end_time(self) -> float:
        return float(self.t[-1])

    def shifted(self, dt: float) -> "ReferenceTrajectory":
        return ReferenceTrajectory(self.t + dt, self.r, self.q, self.v)

    def sample(self, t_now: float):
        """Interpolated ``(r, yaw, v, a)`` at ``t_now``; holds the final reference past the end."""
        t = self.t
        if len(t) == 1 or t_now >= t[-1]:
            return self.r[-1].copy(), _yaw(self.q[-1]), np.zeros(3), np.zeros(3)
        if t_now <= t[0]:
            j = 0
            s = 0.0
        else:
            j = int(np.searchsorted(t, t_now, side="right")) - 1
            s = (t_now - t[j]) / (t[j + 1] - t[j])
        h = t[j + 1] - t[j]
        # consecutive samples share a straight segment, so lerp stays on the path
        r = (1 - s) * self.r[j] + s * self.r[j + 1]
        v = (1 - s) * self.v[j] + s * self.v[j + 1]
        a = (self.v[j + 1] - self.v[j]) / h
        y0, y1 = _yaw(self.q[j]), _yaw(self.q[j + 1])
        dy = math.remainder(y1 - y0, 2 * math.pi)
        return r, y0 + s * dy, v, a

    def speeds(self) -> np.ndarray:
        return np.linalg.norm(self.v, axis=1)

    def to_csv(self, path) -> None:
        data = np.column_stack([self.t, self.r, self.q, self.v])
        np.savetxt(FsPath(path), data, delimiter=",", fmt="%.9g",
                   header="t,x,y,z,qw,qx,qy,qz,vx,vy,vz", comments="")

    @classmethod
    def from_csv(cls, path) -> "ReferenceTrajectory":
        d = np.loadtxt(FsPath(path), delimiter=",", skiprows=1, ndmin=2)
        return cls(d[:, 0], d[:, 1:4], d[:, 4:8], d[:, 8:11])


def _yaw(q: np.ndarray) -> float:
    w, x, y, z = q
    return math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))


def corner_speed(theta: float, v_max: float) -> float:
    """Speed allowed through a waypoint turning by ``theta`` radians."""
    return v_max * (1.0 - min(max(theta, 0.0), math.pi) / math.pi)


def _segment_profile(L: float, va: float, vb: float, v_max: float, a: float):
    """Trapezoid (or triangle) between end speeds; returns (peak, t_acc, t_cruise, t_dec)."""
    vp = min(v_max, math.sqrt(max(0.0, (2 * a * L + va * va + vb * vb) / 2)))
    vp = max(vp, va, vb)
    t_acc = (vp - va) / a
    t_dec = (vp - vb) / a
    d_acc = (vp * vp - va * va) / (2 * a)
    d_dec = (vp * vp - vb * vb) / (2 * a)
    d_cruise = max(0.0, L - d_acc - d_dec)
    t_cruise = d_cruise / vp if vp > 0 else 0.0
    return vp, t_acc, t_cruise, t_dec


def path_to_trajectory(path, v_max: float, a_max: float, dt: float,
                       v0: float = 0.0, t0: float = 0.0,
                       initial_yaw: float | None = None) -> ReferenceTrajectory:
    """Sample a waypoint path with corner slow-downs and trapezoidal speed ramps.

    Waypoint speeds are ``v_max * (1 - theta / pi)``, start speed ``v0`` and
    terminal speed 0, all made mutually reachable under ``a_max``. Samples
    fall every ``dt`` plus one exactly at each waypoint, so each sampling
    interval lies on a single straight segment. Yaw follows the direction of
    travel.
    """
    if v_max <= 0 or a_max <= 0 or dt <= 0:
        raise ValueError("v_max, a_max and dt must be positive")
    W = np.asarray(path, dtype=float).reshape(-1, 3)
    if len(W) == 0:
        raise ValueError("path must contain at least one waypoint")
    keep = np.ones(len(W), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(W, axis=0), axis=1) > 1e-9
    W = W[keep]
    yaw0 = 0.0 if initial_yaw is None else initial_yaw
    if len(W) == 1:
        return ReferenceTrajectory(np.array([t0]), W, yaw_quaternions(np.array([yaw0])), np.zeros((1, 3)))

    seg = np.diff(W, axis=0)
    L = np.linalg.norm(seg, axis=1)
    U = seg / L[:, None]
    n = len(W)
    vc = np.empty(n)
    vc[0] = min(max(v0, 0.0), v_max)
    vc[-1] = 0.0
    for i in range(1, n - 1):
        c = float(np.clip(U[i - 1] @ U[i], -1.0, 1.0))
        vc[i] = corner_speed(math.acos(c), v_max)
    for i in range(n - 1):
        vc[i + 1] = min(vc[i + 1], math.sqrt(vc[i] ** 2 + 2 * a_max * L[i]))
    for i in range(n - 2, -1, -1):
        vc[i] = min(vc[i], math.sqrt(vc[i + 1] ** 2 + 2 * a_max * L[i]))

    profiles = [_segment_profile(L[i], vc[i], vc[i + 1], v_max, a_max) for i in range(n - 1)]
    durations = np.array([sum(p[1:]) for p in profiles])
    t_starts = np.concatenate([[0.0], np.cumsum(durations)])
    T = float(t_starts[-1])

    grid = np.arange(0.0, T, dt)
    times = np.union1d(grid, t_starts)
    times = times[np.concatenate([[True], np.diff(times) > 1e-9])]
    # snap grid samples that land next to a waypoint onto the waypoint time
    idx = np.clip(np.searchsorted(t_starts, times), 0, n - 1)
    for k in (idx, np.clip(idx - 1, 0, n - 1)):
        near = np.abs(times - t_starts[k]) <= 1e-9
        times[near] = t_starts[k[near]]
    times = np.unique(times)

    seg_idx = np.clip(np.searchsorted(t_starts, times, side="right") - 1, 0, n - 2)
    r = np.empty((len(times), 3))
    speed = np.empty(len(times))
    for j, (t, i) in enumerate(zip(times, seg_idx)):
        vp, ta, tc, td = profiles[i]
        va, vb = vc[i], vc[i + 1]
        tau = min(max(t - t_starts[i], 0.0), durations[i])
        if tau <= ta:
            s = va * tau + 0.5 * a_max * tau * tau
            sp = va + a_max * tau
        elif tau <= ta + tc:
            s = (vp * vp - va * va) / (2 * a_max) + vp * (tau - ta)
            sp = vp
        else:
            u = tau - ta - tc
            s = (vp * vp - va * va) / (2 * a_max) + vp * tc + vp * u - 0.5 * a_max * u * u
            sp = max(vp - a_max * u, 0.0)
        s = min(s, L[i])
        r[j] = W[i] + U[i] * s
        speed[j] = sp
    # the final sample is the last waypoint at rest
    seg_idx[-1] = n - 2
    r[-1] = W[-1]
    speed[-1] = 0.0
    v = U[seg_idx] * speed[:, None]

    horiz = np.hypot(U[:, 0], U[:, 1]) > 1e-6
    seg_yaw = np.arctan2(U[:, 1], U[:, 0])
    last = yaw0
    for i in range(n - 1):
        if horiz[i]:
            last = seg_yaw[i]
        else:
            seg_yaw[i] = last
    if initial_yaw is None and horiz.any():
        first = int(np.argmax(horiz))
        seg_yaw[:first] = seg_yaw[first]
    yaw = seg_yaw[seg_idx]
    return ReferenceTrajectory(times + t0, r, yaw_quaternions(yaw), v)

"""Reference trajectories anchored to keyframes and deformed with them.

Every reference pose is expressed relative to its K nearest keyframes at
binding time. When keyframe poses are corrected, each reference follows an
inverse-distance weighted blend of where its anchors now put it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose, quat_multiply, quat_to_matrix, weighted_quaternion_average_batch
from .trajectory import ReferenceTrajectory


class MissingAnchorError(KeyError):
    """An anchor keyframe has no pose in the update."""


def inverse_distance_weights(d: np.ndarray) -> np.ndarray:
    """Row-normalized ``1/d`` weights; rows containing zeros share weight among the zeros."""
    d = np.atleast_2d(np.asarray(d, dtype=float))
    zero = d <= 0.0
    with np.errstate(divide="ignore"):
        inv = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, d))
    has_zero = zero.any(axis=1)
    inv[has_zero] = zero[has_zero].astype(float)
    return inv / inv.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class AnchorBinding:
    index: int
    anchor_ids: tuple[int, ...]
    T_SsSj: tuple[Pose, ...]
    weights: tuple[float, ...]


@dataclass(frozen=True)
class AnchoredTrajectory:
    """A reference trajectory plus per-reference anchors stored as (J, K) arrays."""

    trajectory: ReferenceTrajectory
    anchor_ids: np.ndarray   # (J, K) int
    rel_t: np.ndarray        # (J, K, 3) reference position in anchor frame
    rel_q: np.ndarray        # (J, K, 4) reference orientation in anchor frame
    weights: np.ndarray      # (J, K)
    generation: int = 0

    def __post_init__(self):
        for name in ("anchor_ids", "rel_t", "rel_q", "weights"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.trajectory)

    @property
    def K(self) -> int:
        return self.anchor_ids.shape[1]

    def binding(self, j: int) -> AnchorBinding:
        poses = tuple(Pose.from_list([*self.rel_t[j, k], *self.rel_q[j, k]]) for k in range(self.K))
        return AnchorBinding(j, tuple(int(i) for i in self.anchor_ids[j]), poses,
                             tuple(float(w) for w in self.weights[j]))

    @property
    def bindings(self) -> list[AnchorBinding]:
        return [self.binding(j) for j in range(len(self))]

    def used_ids(self) -> np.ndarray:
        return np.unique(self.anchor_ids)


def _pose_arrays(poses: Sequence[Pose]):
    t = np.array([p.translation for p in poses], dtype=float).reshape(-1, 3)
    q = np.array([p.rotation.as_array() for p in poses], dtype=float).reshape(-1, 4)
    return t, q


def bind(traj: ReferenceTrajectory, keyframes, K: int = 4, generation: int = 0) -> AnchoredTrajectory:
    """Attach each reference to its ``K`` nearest keyframes (by position)."""
    kfs = list(keyframes)
    if not kfs:
        raise ValueError("binding needs at least one keyframe")
    if K < 1:
        raise ValueError("K must be >= 1")
    ids = np.array([kf.id for kf in kfs], dtype=np.int64)
    kt, kq = _pose_arrays([kf.T_WS for kf in kfs])
    k = min(K, len(kfs))
    d, nn = cKDTree(kt).query(traj.r, k=k)
    d = np.asarray(d, dtype=float).reshape(len(traj), k)
    nn = np.asarray(nn).reshape(len(traj), k)
    # exact distances; the tree only selects the neighbours
    d = np.linalg.norm(traj.r[:, None, :] - kt[nn], axis=2)
    W = inverse_distance_weights(d)
    q_inv = kq[nn] * np.array([1.0, -1.0, -1.0, -1.0])
    R_inv = quat_to_matrix(q_inv)
    rel_t = np.einsum("jkab,jkb->jka", R_inv, traj.r[:, None, :] - kt[nn])
    rel_q = quat_multiply(q_inv, traj.q[:, None, :])
    return AnchoredTrajectory(traj, ids[nn], rel_t, rel_q, W, generation)


def deform(anchored: AnchoredTrajectory, updated_keyframe_poses: Mapping[int, Pose]) -> AnchoredTrajectory:
    """Re-express every reference through the updated anchor poses.

    Positions are the weighted mean of each anchor's prediction, orientations
    the weighted quaternion average, and velocities are rotated by each
    reference's change of orientation. Times, anchors and weights are kept.
    """
    used = anchored.used_ids()
    missing = [int(i) for i in used if int(i) not in updated_keyframe_poses]
    if missing:
        raise MissingAnchorError(f"no updated pose for anchor keyframes {missing}")
    kt, kq = _pose_arrays([updated_keyframe_poses[int(i)] for i in used])
    slot = np.searchsorted(used, anchored.anchor_ids)
    R = quat_to_matrix(kq)[slot]
    W = anchored.weights
    pred = np.einsum("jkab,jkb->jka", R, anchored.rel_t) + kt[slot]
    r_new = np.einsum("jk,jka->ja", W, pred)
    q_pred = quat_multiply(kq[slot], anchored.rel_q)
    old = anchored.trajectory
    q_new = weighted_quaternion_average_batch(q_pred, W, hemisphere=old.q)
    R_corr = np.einsum("jab,jcb->jac", quat_to_matrix(q_new), quat_to_matrix(old.q))
    v_new = np.einsum("jab,jb->ja", R_corr, old.v)
    traj = ReferenceTrajectory(old.t, r_new, q_new, v_new)
    return AnchoredTrajectory(traj, anchored.anchor_ids, anchored.rel_t, anchored.rel_q,
                              anchored.weights, anchored.generation + 1)


def displacement(before: AnchoredTrajectory, after: AnchoredTrajectory) -> np.ndarray:
    """Per-reference position change between two versions of a trajectory."""
    return np.linalg.norm(after.trajectory.r - before.trajectory.r, axis=1)

"""Rigid-body transforms and rotation averaging.

Conventions: quaternions are stored ``(w, x, y, z)``; a transform ``T_AB``
maps coordinates in frame B into frame A, ``p_A = R_AB p_B + t_AB``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

QUAT_NORM_TOL = 1e-6


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product; broadcasts over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    stack = np.array if a.ndim == 1 and b.ndim == 1 else (lambda xs: np.stack(xs, axis=-1))
    return stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion; (..., 4) -> (..., 3, 3)."""
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        w, x, y, z = q
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])
    w, x, y, z = np.moveaxis(q, -1, 0)
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns a unit quaternion with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return canonical_sign(q)


def canonical_sign(q: np.ndarray) -> np.ndarray:
    """Pick the representative with w >= 0, ties broken on x, then y, then z."""
    for c in q:
        if c > 0:
            return q
        if c < 0:
            return -q
    return q


@dataclass(frozen=True)
class UnitQuaternion:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        n = math.sqrt(self.w ** 2 + self.x ** 2 + self.y ** 2 + self.z ** 2)
        if not math.isfinite(n) or abs(n - 1.0) > QUAT_NORM_TOL:
            raise ValueError(f"quaternion norm {n} is not 1")
        object.__setattr__(self, "w", self.w / n)
        object.__setattr__(self, "x", self.x / n)
        object.__setattr__(self, "y", self.y / n)
        object.__setattr__(self, "z", self.z / n)

    @classmethod
    def from_array(cls, q: Sequence[float]) -> "UnitQuaternion":
        return cls(*(float(c) for c in q))

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> "UnitQuaternion":
        a = np.asarray(axis, dtype=float)
        a = a / np.linalg.norm(a)
        s = math.sin(angle / 2.0)
        return cls(math.cos(angle / 2.0), a[0] * s, a[1] * s, a[2] * s)

    @classmethod
    def from_yaw(cls, yaw: float) -> "UnitQuaternion":
        return cls(math.cos(yaw / 2.0), 0.0, 0.0, math.sin(yaw / 2.0))

    @classmethod
    def from_matrix(cls, R: np.ndarray) -> "UnitQuaternion":
        return cls.from_array(matrix_to_quat(R))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.as_array())

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        q = quat_multiply(self.as_array(), other.as_array())
        return UnitQuaternion.from_array(q / np.linalg.norm(q))

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def yaw(self) -> float:
        return math.atan2(2.0 * (self.w * self.z + self.x * self.y),
                          1.0 - 2.0 * (self.y ** 2 + self.z ** 2))

    def angle_to(self, other: "UnitQuaternion") -> float:
        """Geodesic angle between two rotations, sign-invariant."""
        d = abs(float(np.dot(self.as_array(), other.as_array())))
        return 2.0 * math.acos(min(1.0, d))


@dataclass(frozen=True)
class Pose:
    """Rigid transform T_AB: rotation then translation."""

    rotation: UnitQuaternion = field(default_factory=UnitQuaternion)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("pose translation must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> "Pose":
        return cls(UnitQuaternion(), np.array([x, y, z], dtype=float))

    @classmethod
    def from_yaw(cls, yaw: float, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "Pose":
        return cls(UnitQuaternion.from_yaw(yaw), np.asarray(translation, dtype=float))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        return cls(UnitQuaternion.from_matrix(T[:3, :3]), T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation.matrix()
        T[:3, 3] = self.translation
        return T

    @property
    def R(self) -> np.ndarray:
        return self.rotation.matrix()

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        return (np.allclose(self.translation, other.translation, atol=tol, rtol=0)
                and self.rotation.angle_to(other.rotation) <= max(tol, 1e-7))

    def to_list(self) -> list[float]:
        return [*self.translation.tolist(), *self.rotation.as_array().tolist()]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Pose":
        """Inverse of :meth:`to_list`: ``[tx, ty, tz, qw, qx, qy, qz]``."""
        return cls(UnitQuaternion.from_array(values[3:7]), np.asarray(values[:3], dtype=float))


def compose(a: Pose, b: Pose) -> Pose:
    """T_AC = T_AB * T_BC."""
    q = quat_multiply(a.rotation.as_array(), b.rotation.as_array())
    q /= np.linalg.norm(q)
    t = a.rotation.matrix() @ b.translation + a.translation
    return Pose(UnitQuaternion.from_array(q), t)


def inverse(T: Pose) -> Pose:
    qi = T.rotation.conjugate()
    return Pose(qi, -(qi.matrix() @ T.translation))


def transform_point(T: Pose, p: Sequence[float]) -> np.ndarray:
    return T.rotation.matrix() @ np.asarray(p, dtype=float) + T.translation


def transform_points(T: Pose, pts: np.ndarray) -> np.ndarray:
    """Apply ``T`` to an (N, 3) array of points."""
    return np.asarray(pts, dtype=float) @ T.rotation.matrix().T + T.translation


def weighted_quaternion_average(quats: Sequence[UnitQuaternion],
                                weights: Sequence[float]) -> UnitQuaternion:
    """Weighted rotation average as the dominant eigenvector of sum(w q q^T).

    The result maximizes ``sum_i w_i (q . q_i)^2`` and is therefore blind to
    the sign of each input. Output sign follows :func:`canonical_sign`.
    """
    if len(quats) == 0:
        raise ValueError("cannot average an empty set of quaternions")
    if len(quats) != len(weights):
        raise ValueError("quats and weights differ in length")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if w.sum() <= 0:
        raise ValueError("weights must not all be zero")
    Q = np.array([q.as_array() for q in quats])
    M = (Q.T * w) @ Q
    _, vecs = np.linalg.eigh(M)
    q = vecs[:, -1]
    q = canonical_sign(q / np.linalg.norm(q))
    return UnitQuaternion.from_array(q)


def weighted_quaternion_average_batch(Q: np.ndarray, W: np.ndarray,
                                      hemisphere: np.ndarray | None = None) -> np.ndarray:
    """Row-wise weighted average of ``Q`` (N, K, 4) with weights ``W`` (N, K).

    Each output is flipped to lie in the hemisphere of the matching row of
    ``hemisphere`` when given, else canonicalized to ``w >= 0``.
    """
    Q = np.asarray(Q, dtype=float)
    W = np.asarray(W, dtype=float)
    M = np.einsum("nk,nki,nkj->nij", W, Q, Q)
    _, vecs = np.linalg.eigh(M)
    q = vecs[:, :, -1]
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    ref = np.asarray(hemisphere, dtype=float) if hemisphere is not None else np.array([1.0, 0, 0, 0])
    dots = np.sum(q * ref, axis=-1)
    q[dots < 0] *= -1.0
    return q

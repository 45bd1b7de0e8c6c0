"""Keyframe-attached log-odds occupancy submaps.

Each submap stores voxels in its own frame ``S_k`` and carries the current
pose ``T_WSk`` of its host keyframe; when the estimator corrects that
keyframe, the submap moves rigidly with it and its contents stay untouched.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numba import typed

from . import _voxelkernels as K
from .geometry import Pose, compose, inverse, transform_point, transform_points
from .mesh import TriangleMesh
from .world import DepthImage


class OccupancyClass(IntEnum):
    UNKNOWN = K.UNKNOWN
    FREE = K.FREE
    OCCUPIED = K.OCCUPIED


@dataclass(frozen=True)
class MappingParams:
    resolution: float = 0.1
    l_hit: float = 1.0
    l_miss: float = -0.7
    l_min: float = -5.0
    l_max: float = 5.0
    alpha: float = -2.0
    beta: float = 1.5
    keyframes_per_submap: int = 2
    # carve free space along no-return rays up to this depth (None: skip them)
    carve_invalid_m: float | None = None

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if not (self.alpha < 0 < self.beta):
            raise ValueError("need alpha < 0 < beta")
        if not (self.l_miss < 0 < self.l_hit):
            raise ValueError("need l_miss < 0 < l_hit")
        if self.keyframes_per_submap < 1:
            raise ValueError("keyframes_per_submap must be >= 1")

    def classify_value(self, v: float) -> OccupancyClass:
        if v < self.alpha:
            return OccupancyClass.FREE
        if v > self.beta:
            return OccupancyClass.OCCUPIED
        return OccupancyClass.UNKNOWN


class VoxelGrid:
    """Sparse 8x8x8-block log-odds grid; never-touched voxels read exactly 0."""

    def __init__(self, params: MappingParams, capacity: int = 1024, pool: int = 256):
        self.params = params
        self.keys = np.full(capacity, K.EMPTY, dtype=np.int64)
        self.slots = np.zeros(capacity, dtype=np.int32)
        self.data = np.zeros((pool, K.BLOCK_VOXELS), dtype=np.float32)
        self.n_blocks = 0

    @property
    def resolution(self) -> float:
        return self.params.resolution

    def _grow(self, extra: int) -> None:
        need = self.n_blocks + extra
        if need > self.data.shape[0]:
            new_pool = max(need, 2 * self.data.shape[0])
            data = np.zeros((new_pool, K.BLOCK_VOXELS), dtype=np.float32)
            data[: self.n_blocks] = self.data[: self.n_blocks]
            self.data = data
        if need > K.MAX_LOAD * self.keys.shape[0]:
            cap = self.keys.shape[0]
            while need > K.MAX_LOAD * cap:
                cap *= 2
            keys = np.full(cap, K.EMPTY, dtype=np.int64)
            slots = np.zeros(cap, dtype=np.int32)
            K.rehash(self.keys, self.slots, keys, slots)
            self.keys, self.slots = keys, slots

    def integrate_rays(self, origin: np.ndarray, endpoints: np.ndarray, is_hit: np.ndarray) -> None:
        p = self.params
        origin = np.ascontiguousarray(origin, dtype=np.float64)
        endpoints = np.ascontiguousarray(endpoints, dtype=np.float64).reshape(-1, 3)
        is_hit = np.ascontiguousarray(is_hit, dtype=np.bool_)
        start = 0
        while start < len(endpoints):
            start, self.n_blocks = K.integrate_rays(
                self.keys, self.slots, self.data, self.n_blocks, origin, endpoints, is_hit,
                p.resolution, np.float32(p.l_hit), np.float32(p.l_miss),
                np.float32(p.l_min), np.float32(p.l_max), start)
            if start < len(endpoints):
                e = endpoints[start] / p.resolution
                o = origin / p.resolution
                steps = int(np.sum(np.abs(np.floor(e) - np.floor(o)))) + 1
                self._grow(max(steps, 256))

    def values_at(self, pts: np.ndarray) -> np.ndarray:
        """Log-odds of the voxels containing ``pts`` (map frame)."""
        pts = np.ascontiguousarray(pts, dtype=np.float64).reshape(-1, 3)
        return K.lookup_points(self.keys, self.slots, self.data, pts, self.resolution)

    def get(self, ijk: Sequence[int]) -> float:
        return float(K.voxel_value(self.keys, self.slots, self.data, int(ijk[0]), int(ijk[1]), int(ijk[2])))

    def voxels(self) -> tuple[np.ndarray, np.ndarray]:
        """All voxels with nonzero log-odds as ``(ijk, values)``."""
        return K.nonzero_voxels(self.keys, self.slots, self.data, 0.0, False)

    def occupied(self) -> np.ndarray:
        ijk, _ = K.nonzero_voxels(self.keys, self.slots, self.data, self.params.beta, True)
        return ijk

    def set_voxels(self, ijk: np.ndarray, values: np.ndarray) -> None:
        """Overwrite voxel values (used when loading dumps and compacting)."""
        ijk = np.asarray(ijk, dtype=np.int64).reshape(-1, 3)
        values = np.asarray(values, dtype=np.float32).reshape(-1)
        if len(ijk) == 0:
            return
        self._grow(len(np.unique(ijk // K.BLOCK, axis=0)))   # blocks, not voxels
        self.n_blocks = K.write_voxels(self.keys, self.slots, self.data, self.n_blocks, ijk, values,
                                       np.float32(self.params.l_min), np.float32(self.params.l_max))

    def compacted(self, keep_free: bool) -> "VoxelGrid":
        """Copy holding only occupied voxels (and free ones if ``keep_free``)."""
        ijk, vals = self.voxels()
        if not keep_free:
            m = vals > self.params.beta
            ijk, vals = ijk[m], vals[m]
        out = VoxelGrid(self.params, capacity=64, pool=1)
        out.set_voxels(ijk, vals)
        return out

    @property
    def nbytes(self) -> int:
        return self.keys.nbytes + self.slots.nbytes + self.data.nbytes


@dataclass
class OccupancySubmap:
    id: int
    host_keyframe_id: int
    pose: Pose
    grid: VoxelGrid
    frames_integrated: int = 0
    compacted: bool = False

    @property
    def resolution(self) -> float:
        return self.grid.resolution

    def aabb(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Axis-aligned bounds of all nonzero voxels in the submap frame."""
        ijk, _ = self.grid.voxels()
        if len(ijk) == 0:
            return None
        r = self.resolution
        return ijk.min(axis=0) * r, (ijk.max(axis=0) + 1) * r

    def integrate_depth(self, T_WC: Pose, depth: DepthImage) -> None:
        """Fuse a depth image taken from camera pose ``T_WC`` (world frame)."""
        p = self.grid.params
        intr = depth.intrinsics
        d = depth.depths.reshape(-1)
        if d.shape[0] != intr.width * intr.height:
            raise ValueError("depth image does not match its intrinsics")
        T_SC = compose(inverse(self.pose), T_WC)
        rays = intr.pixel_rays()
        valid = np.isfinite(d) & (d > 0)
        pts = [rays[valid] * d[valid, None]]
        hits = [np.ones(int(valid.sum()), dtype=bool)]
        if p.carve_invalid_m is not None:
            inv = ~valid
            pts.append(rays[inv] * p.carve_invalid_m)
            hits.append(np.zeros(int(inv.sum()), dtype=bool))
        pts_c = np.concatenate(pts)
        if len(pts_c) == 0:
            return
        self.grid.integrate_rays(T_SC.translation, transform_points(T_SC, pts_c), np.concatenate(hits))
        self.frames_integrated += 1

    def mark_free_sphere(self, center_W: Sequence[float], radius: float) -> int:
        """Mark Unknown, never-hit voxels whose centres lie within ``radius`` of ``center_W`` as Free.

        Encodes the fact that the volume the vehicle occupies is empty;
        voxels already Free or Occupied are left alone. Returns the count.
        """
        p = self.grid.params
        r = self.resolution
        c = transform_point(inverse(self.pose), center_W)
        lo = np.floor((c - radius) / r).astype(np.int64)
        hi = np.floor((c + radius) / r).astype(np.int64)
        ax = [np.arange(lo[i], hi[i] + 1) for i in range(3)]
        ijk = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1).reshape(-1, 3)
        centres = (ijk + 0.5) * r
        ijk = ijk[np.sum((centres - c) ** 2, axis=1) <= radius * radius]
        if len(ijk) == 0:
            return 0
        vals = self.grid.values_at((ijk + 0.5) * r)
        # only voxels without hit evidence
        unknown = (vals >= p.alpha) & (vals <= 0.0)
        if not unknown.any():
            return 0
        self.grid.set_voxels(ijk[unknown], np.full(int(unknown.sum()), p.alpha + p.l_miss))
        return int(unknown.sum())

    def values_at_world(self, pts_W: np.ndarray) -> np.ndarray:
        return self.grid.values_at(transform_points(inverse(self.pose), pts_W))

    def classify(self, p_W: Sequence[float]) -> OccupancyClass:
        v = float(self.values_at_world(np.asarray(p_W, dtype=float)[None])[0])
        return self.grid.params.classify_value(v)

    def mesh(self) -> TriangleMesh:
        """Exposed faces of occupied voxels, in the world frame at the current pose."""
        return voxel_surface_mesh(self.grid.occupied(), self.resolution).transformed(self.pose)

    def to_dict(self) -> dict:
        ijk, vals = self.grid.voxels()
        return {
            "id": self.id,
            "host_keyframe_id": self.host_keyframe_id,
            "resolution": self.resolution,
            "pose": self.pose.to_list(),
            "params": {k: getattr(self.grid.params, k) for k in MappingParams.__dataclass_fields__},
            "voxels": [[int(i), int(j), int(k), float(v)] for (i, j, k), v in zip(ijk, vals)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OccupancySubmap":
        params = MappingParams(**d["params"])
        grid = VoxelGrid(params)
        vox = np.array(d["voxels"], dtype=float).reshape(-1, 4)
        grid.set_voxels(vox[:, :3].astype(np.int64), vox[:, 3])
        return cls(int(d["id"]), int(d["host_keyframe_id"]), Pose.from_list(d["pose"]), grid)


_FACE_CORNERS = {
    # direction -> 4 corner offsets (counter-clockwise seen from outside)
    (1, 0, 0): [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)],
    (-1, 0, 0): [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)],
    (0, 1, 0): [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)],
    (0, -1, 0): [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)],
    (0, 0, 1): [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
    (0, 0, -1): [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)],
}


def _pack_ijk(ijk: np.ndarray) -> np.ndarray:
    o = np.int64(1 << 20)
    return ((ijk[:, 0] + o) << 42) | ((ijk[:, 1] + o) << 21) | (ijk[:, 2] + o)


def voxel_surface_mesh(ijk: np.ndarray, resolution: float) -> TriangleMesh:
    """Triangulate the faces of voxels in ``ijk`` not shared with another listed voxel."""
    ijk = np.asarray(ijk, dtype=np.int64).reshape(-1, 3)
    if len(ijk) == 0:
        return TriangleMesh()
    keys = np.sort(_pack_ijk(ijk))
    quads = []
    for direction, corners in _FACE_CORNERS.items():
        nb = _pack_ijk(ijk + np.array(direction))
        pos = np.searchsorted(keys, nb)
        pos = np.minimum(pos, len(keys) - 1)
        exposed = ijk[keys[pos] != nb]
        if len(exposed):
            quads.append(exposed[:, None, :] + np.array(corners)[None, :, :])
    corners = np.concatenate(quads)  # (F, 4, 3) integer corner coordinates
    flat = corners.reshape(-1, 3)
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    inv = inv.reshape(-1, 4)
    faces = np.concatenate([inv[:, [0, 1, 2]], inv[:, [0, 2, 3]]])
    return TriangleMesh(uniq.astype(float) * resolution, faces)


@dataclass
class MapView:
    """Immutable snapshot of the last few submaps, ready for numba kernels."""

    keys: typed.List
    slots: typed.List
    data: typed.List
    Rs: np.ndarray  # (S, 3, 3) world->submap rotations
    ts: np.ndarray  # (S, 3) world->submap translations
    resolution: float
    alpha: float
    beta: float

    @property
    def n_submaps(self) -> int:
        return self.Rs.shape[0]

    def classify_points(self, pts_W: np.ndarray) -> np.ndarray:
        pts = np.ascontiguousarray(pts_W, dtype=np.float64).reshape(-1, 3)
        if self.n_submaps == 0:
            return np.zeros(len(pts), dtype=np.int8)
        return K.classify_world_points(self.keys, self.slots, self.data, self.Rs, self.ts,
                                       self.resolution, pts, self.alpha, self.beta)


@dataclass
class SubmapCollection:
    params: MappingParams = field(default_factory=MappingParams)
    submaps: list[OccupancySubmap] = field(default_factory=list)
    keyframes_since_submap: int = 0
    # submaps older than the newest ``dense_window`` keep occupied voxels only
    dense_window: int | None = None
    _version: int = field(default=0, repr=False, compare=False)
    _view_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def touch(self) -> None:
        """Invalidate cached map views after any change."""
        self._version += 1

    def __len__(self) -> int:
        return len(self.submaps)

    @property
    def current(self) -> OccupancySubmap | None:
        return self.submaps[-1] if self.submaps else None

    def create_submap(self, host_keyframe_id: int, T_WSk: Pose) -> int:
        self.touch()
        sid = len(self.submaps)
        self.submaps.append(OccupancySubmap(sid, host_keyframe_id, T_WSk, VoxelGrid(self.params)))
        self.keyframes_since_submap = 0
        if self.dense_window is not None and len(self.submaps) > self.dense_window:
            old = self.submaps[-self.dense_window - 1]
            if not old.compacted:
                old.grid = old.grid.compacted(keep_free=False)
                old.compacted = True
        return sid

    def maybe_create_submap(self, keyframe, n: int | None = None) -> int | None:
        """Count a new keyframe; every ``n``-th one hosts a new submap."""
        n = self.params.keyframes_per_submap if n is None else n
        if n < 1:
            raise ValueError("n must be >= 1")
        self.keyframes_since_submap += 1
        if self.keyframes_since_submap >= n:
            return self.create_submap(keyframe.id, keyframe.T_WS)
        return None

    def update_poses(self, keyframe_poses: Mapping[int, Pose]) -> None:
        """Move submaps whose host keyframes were re-estimated."""
        self.touch()
        for sm in self.submaps:
            if sm.host_keyframe_id in keyframe_poses:
                sm.pose = keyframe_poses[sm.host_keyframe_id]

    def integrate_depth(self, T_WC: Pose, depth: DepthImage) -> None:
        if self.current is None:
            raise RuntimeError("no submap to integrate into")
        self.touch()
        self.current.integrate_depth(T_WC, depth)

    def mark_free_sphere(self, center_W: Sequence[float], radius: float) -> int:
        if self.current is None:
            raise RuntimeError("no submap to write into")
        self.touch()
        return self.current.mark_free_sphere(center_W, radius)

    def view(self, last_S: int) -> MapView:
        cached = self._view_cache.get(last_S)
        if cached is not None and cached[0] == self._version:
            return cached[1]
        view = self._build_view(last_S)
        self._view_cache = {last_S: (self._version, view)}
        return view

    def _build_view(self, last_S: int) -> MapView:
        recent = self.submaps[-last_S:] if last_S > 0 else []
        keys, slots, data = typed.List(), typed.List(), typed.List()
        Rs = np.zeros((len(recent), 3, 3))
        ts = np.zeros((len(recent), 3))
        for i, sm in enumerate(recent):
            inv = inverse(sm.pose)
            Rs[i] = inv.R
            ts[i] = inv.translation
            keys.append(sm.grid.keys)
            slots.append(sm.grid.slots)
            data.append(sm.grid.data)
        if not recent:
            # typed lists need a concrete element type even when empty
            keys.append(np.zeros(1, dtype=np.int64))
            slots.append(np.zeros(1, dtype=np.int32))
            data.append(np.zeros((1, K.BLOCK_VOXELS), dtype=np.float32))
        return MapView(keys, slots, data, Rs, ts, self.params.resolution,
                       self.params.alpha, self.params.beta)

    def classify(self, p_W: Sequence[float], last_S: int) -> tuple[list[OccupancyClass], OccupancyClass]:
        """Per-submap classes over the last ``last_S`` submaps and the aggregate.

        Aggregate: Occupied in any submap wins; otherwise Free if any submap
        says Free; otherwise Unknown.
        """
        p = np.asarray(p_W, dtype=float)
        per = [sm.classify(p) for sm in (self.submaps[-last_S:] if last_S > 0 else [])]
        if OccupancyClass.OCCUPIED in per:
            agg = OccupancyClass.OCCUPIED
        elif OccupancyClass.FREE in per:
            agg = OccupancyClass.FREE
        else:
            agg = OccupancyClass.UNKNOWN
        return per, agg

    def classify_many(self, pts_W: np.ndarray, last_S: int) -> np.ndarray:
        return self.view(last_S).classify_points(pts_W)

    def extract_mesh(self) -> TriangleMesh:
        return TriangleMesh.concatenate([sm.mesh() for sm in self.submaps])

    def dump(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for sm in self.submaps:
            (d / f"submap_{sm.id:05d}.json").write_text(json.dumps(sm.to_dict()))

"""Procedural forest ground truth: tree placement, depth synthesis, collision oracle."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Pose
from .mesh import TriangleMesh


class ForestInfeasibleError(RuntimeError):
    """Raised when rejection sampling cannot place the requested trees."""


@dataclass(frozen=True)
class Tree:
    x: float
    y: float
    radius: float
    height: float

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("tree radius and height must be positive")

    @property
    def center_xy(self) -> np.ndarray:
        return np.array([self.x, self.y, 0.0])


@dataclass
class ForestWorld:
    trees: list[Tree]
    side_m: float
    seed: int = 0
    density_per_ha: float = 0.0
    min_spacing_m: float = 1.5
    radius_range: tuple[float, float] = (0.15, 0.4)
    height_range: tuple[float, float] = (15.0, 25.0)
    centers: np.ndarray = field(init=False, repr=False)
    radii: np.ndarray = field(init=False, repr=False)
    heights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.centers = np.array([[t.x, t.y] for t in self.trees], dtype=float).reshape(-1, 2)
        self.radii = np.array([t.radius for t in self.trees], dtype=float)
        self.heights = np.array([t.height for t in self.trees], dtype=float)
        for arr in (self.centers, self.radii, self.heights):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.trees)

    def trees_near(self, xy: Sequence[float], dist: float) -> np.ndarray:
        """Indices of trees whose trunk surface lies within ``dist`` of ``xy``."""
        if not self.trees:
            return np.zeros(0, dtype=np.int64)
        d = np.hypot(self.centers[:, 0] - xy[0], self.centers[:, 1] - xy[1]) - self.radii
        return np.nonzero(d <= dist)[0]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "side_m": self.side_m,
            "density_per_ha": self.density_per_ha,
            "min_spacing_m": self.min_spacing_m,
            "radius_range": list(self.radius_range),
            "height_range": list(self.height_range),
            "trees": [[t.x, t.y, t.radius, t.height] for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestWorld":
        """Build from a config dict; an explicit ``trees`` list overrides generation."""
        if d.get("trees") is not None:
            trees = [Tree(*map(float, row)) for row in d["trees"]]
            return cls(trees, float(d["side_m"]), int(d.get("seed", 0)),
                       float(d.get("density_per_ha", 0.0)),
                       float(d.get("min_spacing_m", 1.5)),
                       tuple(d.get("radius_range", (0.15, 0.4))),
                       tuple(d.get("height_range", (15.0, 25.0))))
        return generate_forest(
            int(d.get("seed", 0)), float(d["side_m"]), float(d["density_per_ha"]),
            float(d.get("min_spacing_m", 1.5)), tuple(d.get("radius_range", (0.15, 0.4))),
            height_range=tuple(d.get("height_range", (15.0, 25.0))),
            keep_clear=[tuple(c) for c in d.get("keep_clear", [])])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "ForestWorld":
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_forest(seed: int, side_m: float, density_per_ha: float,
                    min_spacing_m: float = 1.5,
                    radius_range: tuple[float, float] = (0.15, 0.4),
                    height_range: tuple[float, float] = (15.0, 25.0),
                    keep_clear: Sequence[tuple[float, float, float]] = (),
                    max_attempts_per_tree: int = 2000) -> ForestWorld:
    """Seeded rejection sampling of trunks in ``[0, side_m]^2``.

    ``min_spacing_m`` is the gap between neighbouring trunk surfaces.
    ``keep_clear`` holds ``(x, y, r)`` discs that no trunk may touch.
    """
    if side_m <= 0:
        raise ValueError("side_m must be positive")
    n = int(math.ceil(side_m ** 2 / 10_000.0 * density_per_ha - 1e-9))
    rng = np.random.default_rng(seed)
    centers = np.zeros((n, 2))
    radii = np.zeros(n)
    clear = np.array(keep_clear, dtype=float).reshape(-1, 3)
    placed = 0
    attempts = 0
    budget = max_attempts_per_tree * max(n, 1)
    while placed < n:
        if attempts >= budget:
            raise ForestInfeasibleError(
                f"placed {placed}/{n} trees after {attempts} attempts; "
                f"density {density_per_ha}/ha infeasible with spacing {min_spacing_m} m")
        attempts += 1
        r = rng.uniform(*radius_range)
        c = rng.uniform(r, side_m - r, size=2)
        if len(clear) and np.any(np.hypot(*(clear[:, :2] - c).T) < clear[:, 2] + r):
            continue
        if placed:
            gap = np.hypot(*(centers[:placed] - c).T) - radii[:placed] - r
            if np.any(gap < min_spacing_m):
                continue
        centers[placed] = c
        radii[placed] = r
        placed += 1
    heights = rng.uniform(*height_range, size=n)
    trees = [Tree(float(c[0]), float(c[1]), float(r), float(h))
             for c, r, h in zip(centers, radii, heights)]
    return ForestWorld(trees, float(side_m), int(seed), float(density_per_ha),
                       float(min_spacing_m), tuple(radius_range), tuple(height_range))


@dataclass(frozen=True)
class Intrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float = 90.0) -> "Intrinsics":
        f = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(width, height, f, f, (width - 1) / 2.0, (height - 1) / 2.0)

    def pixel_rays(self) -> np.ndarray:
        """(H*W, 3) camera-frame rays with unit z, row-major over pixels."""
        u, v = np.meshgrid(np.arange(self.width), np.arange(self.height))
        rays = np.empty((self.height * self.width, 3))
        rays[:, 0] = (u.ravel() - self.cx) / self.fx
        rays[:, 1] = (v.ravel() - self.cy) / self.fy
        rays[:, 2] = 1.0
        return rays


@dataclass
class DepthImage:
    """Per-pixel depth along the optical axis; NaN marks invalid pixels."""

    intrinsics: Intrinsics
    depths: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=float)
        if self.depths.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError(
                f"depth shape {self.depths.shape} does not match intrinsics "
                f"{(self.intrinsics.height, self.intrinsics.width)}")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depths)


# Camera optical frame (x right, y down, z forward) expressed in the body frame
# (x forward, y left, z up).
R_SC = np.array([[0.0, 0.0, 1.0],
                 [-1.0, 0.0, 0.0],
                 [0.0, -1.0, 0.0]])
T_SC = Pose.from_matrix(np.block([[R_SC, np.zeros((3, 1))], [np.zeros((1, 3)), np.ones((1, 1))]]))


def ray_hits(world: ForestWorld, origin: np.ndarray, dirs: np.ndarray,
             t_max: float) -> np.ndarray:
    """First-hit ray parameter for rays ``origin + t * dirs``; inf where nothing is hit."""
    o = np.asarray(origin, dtype=float)
    t_best = np.full(len(dirs), np.inf)
    dz = dirs[:, 2]
    if o[2] > 0:
        down = dz < 0
        t_best[down] = -o[2] / dz[down]
    reach = t_max * float(np.max(np.linalg.norm(dirs[:, :2], axis=1))) if len(dirs) else 0.0
    for i in world.trees_near(o[:2], reach):
        cx, cy = world.centers[i]
        r, h = world.radii[i], world.heights[i]
        ox, oy = o[0] - cx, o[1] - cy
        a = dirs[:, 0] ** 2 + dirs[:, 1] ** 2
        b = 2.0 * (ox * dirs[:, 0] + oy * dirs[:, 1])
        c = ox * ox + oy * oy - r * r
        if c <= 0:
            # origin inside the trunk footprint; only the caps can be hit
            pass
        else:
            disc = b * b - 4.0 * a * c
            ok = (disc >= 0) & (a > 0)
            t = np.full(len(dirs), np.inf)
            t[ok] = (-b[ok] - np.sqrt(disc[ok])) / (2.0 * a[ok])
            z = o[2] + np.where(ok, t, 0.0) * dz
            hit = ok & (t > 0) & (z >= 0) & (z <= h)
            t_best = np.where(hit & (t < t_best), t, t_best)
        if o[2] > h:
            down = dz < 0
            t = np.full(len(dirs), np.inf)
            t[down] = (h - o[2]) / dz[down]
            px = ox + t * dirs[:, 0]
            py = oy + t * dirs[:, 1]
            hit = down & (px * px + py * py <= r * r)
            t_best = np.where(hit & (t < t_best), t, t_best)
    return t_best


def raycast_depth(world: ForestWorld, T_WC: Pose, intrinsics: Intrinsics,
                  max_range_m: float = 20.0, noise_std_m: float = 0.0,
                  seed: int = 0, timestamp: float = 0.0) -> DepthImage:
    """Render a depth image of trunks and ground from camera pose ``T_WC``."""
    if max_range_m <= 0:
        raise ValueError("max_range_m must be positive")
    rays_c = intrinsics.pixel_rays()
    dirs = rays_c @ T_WC.R.T
    # z-component of rays_c is 1, so the ray parameter is the optical-axis depth
    depth = ray_hits(world, T_WC.translation, dirs, max_range_m)
    depth[depth > max_range_m] = np.inf
    valid = np.isfinite(depth)
    if noise_std_m > 0:
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, noise_std_m, size=depth.shape)
        depth = np.where(valid, np.maximum(depth + noise, 1e-3), depth)
    depth[~valid] = np.nan
    return DepthImage(intrinsics, depth.reshape(intrinsics.height, intrinsics.width), timestamp)


def collides(world: ForestWorld, p: Sequence[float], mav_radius_m: float) -> bool:
    """True iff a sphere of ``mav_radius_m`` at ``p`` penetrates a trunk or the ground."""
    if mav_radius_m <= 0:
        raise ValueError("mav_radius_m must be positive")
    return bool(collides_many(world, np.asarray(p, dtype=float)[None, :], mav_radius_m)[0])


def collides_many(world: ForestWorld, pts: np.ndarray, mav_radius_m: float) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    out = pts[:, 2] < mav_radius_m
    if len(world.trees) == 0 or len(pts) == 0:
        return out
    lo = pts[:, :2].min(axis=0) - mav_radius_m - world.radii.max()
    hi = pts[:, :2].max(axis=0) + mav_radius_m + world.radii.max()
    near = np.nonzero(np.all((world.centers >= lo) & (world.centers <= hi), axis=1))[0]
    for i in near:
        d = np.hypot(pts[:, 0] - world.centers[i, 0], pts[:, 1] - world.centers[i, 1])
        out |= (d < world.radii[i] + mav_radius_m) & (pts[:, 2] >= 0) & (pts[:, 2] <= world.heights[i])
    return out


def clearance_xy(world: ForestWorld, pts: np.ndarray) -> np.ndarray:
    """Horizontal distance from each point to the nearest trunk surface."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    if len(world.trees) == 0:
        return np.full(len(pts), np.inf)
    from scipy.spatial import cKDTree
    tree = cKDTree(world.centers)
    k = min(8, len(world.trees))
    d, idx = tree.query(pts[:, :2], k=k)
    d = np.asarray(d).reshape(len(pts), k)
    idx = np.asarray(idx).reshape(len(pts), k)
    return np.min(d - world.radii[idx], axis=1)


def _cylinder_mesh(cx: float, cy: float, r: float, h: float, res: float,
                   with_cap: bool) -> TriangleMesh:
    n_theta = max(3, math.ceil(2 * math.pi * r / res))
    n_z = max(1, math.ceil(h / res))
    theta = np.arange(n_theta) * (2 * math.pi / n_theta)
    zs = np.linspace(0.0, h, n_z + 1)
    ring = np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=1)
    verts = np.concatenate([np.column_stack([ring, np.full(n_theta, z)]) for z in zs])
    faces = []
    j = np.arange(n_theta)
    jn = (j + 1) % n_theta
    for k in range(n_z):
        a, b = k * n_theta + j, k * n_theta + jn
        c, d = (k + 1) * n_theta + jn, (k + 1) * n_theta + j
        faces.append(np.stack([a, b, c], axis=1))
        faces.append(np.stack([a, c, d], axis=1))
    if with_cap:
        # concentric rings keep cap vertex spacing at or below res
        n_rings = max(1, math.ceil(r / res))
        outer = n_z * n_theta + j
        base = len(verts)
        cap_verts = []
        prev = outer
        for k in range(n_rings - 1, 0, -1):
            rr = r * k / n_rings
            cap_verts.append(np.column_stack([cx + rr * np.cos(theta), cy + rr * np.sin(theta),
                                              np.full(n_theta, h)]))
            cur = base + (len(cap_verts) - 1) * n_theta + j
            faces.append(np.stack([prev, prev[jn], cur[jn]], axis=1))
            faces.append(np.stack([prev, cur[jn], cur], axis=1))
            prev = cur
        cap_verts.append(np.array([[cx, cy, h]]))
        center = base + (len(cap_verts) - 1) * n_theta
        faces.append(np.stack([prev, prev[jn], np.full(n_theta, center)], axis=1))
        verts = np.concatenate([verts, *cap_verts])
    return TriangleMesh(verts, np.concatenate(faces))


def ground_truth_mesh(world: ForestWorld, resolution_m: float,
                      bounds: Sequence[float] | None = None,
                      max_height: float | None = None,
                      include_ground: bool = True) -> TriangleMesh:
    """Tessellate trunks (and the ground patch) with vertex spacing <= ``resolution_m``.

    ``bounds`` = ``(xmin, ymin, xmax, ymax)`` crops to trees whose centers lie
    inside and to that ground rectangle; ``max_height`` truncates trunks.
    """
    if resolution_m <= 0:
        raise ValueError("resolution_m must be positive")
    if bounds is None:
        bounds = (0.0, 0.0, world.side_m, world.side_m)
    xmin, ymin, xmax, ymax = bounds
    meshes = []
    for t in world.trees:
        if not (xmin <= t.x <= xmax and ymin <= t.y <= ymax):
            continue
        h = t.height if max_height is None else min(t.height, max_height)
        meshes.append(_cylinder_mesh(t.x, t.y, t.radius, h, resolution_m,
                                     with_cap=max_height is None or t.height <= max_height))
    if include_ground:
        nx = max(1, math.ceil((xmax - xmin) / resolution_m))
        ny = max(1, math.ceil((ymax - ymin) / resolution_m))
        xs = np.linspace(xmin, xmax, nx + 1)
        ys = np.linspace(ymin, ymax, ny + 1)
        gx, gy = np.meshgrid(xs, ys)
        verts = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
        ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
        a = (jj * (nx + 1) + ii).ravel()
        faces = np.concatenate([np.stack([a, a + 1, a + nx + 2], axis=1),
                                np.stack([a, a + nx + 2, a + nx + 1], axis=1)])
        keep = np.ones(len(verts), dtype=bool)
        for i in world.trees_near(((xmin + xmax) / 2, (ymin + ymax) / 2),
                                  math.hypot(xmax - xmin, ymax - ymin)):
            keep &= np.hypot(verts[:, 0] - world.centers[i, 0],
                             verts[:, 1] - world.centers[i, 1]) >= world.radii[i]
        if not keep.all():
            remap = np.cumsum(keep) - 1
            faces = faces[np.all(keep[faces], axis=1)]
            faces = remap[faces]
            verts = verts[keep]
        meshes.append(TriangleMesh(verts, faces))
    return TriangleMesh.concatenate(meshes)


def surface_distance(world: ForestWorld, pts: np.ndarray) -> np.ndarray:
    """Unsigned distance from points to the nearest analytic surface (trunk or ground)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    best = np.abs(pts[:, 2])
    if len(world.trees) == 0 or len(pts) == 0:
        return best
    from scipy.spatial import cKDTree
    kd = cKDTree(world.centers)
    k = min(16, len(world.trees))
    _, idx = kd.query(pts[:, :2], k=k)
    idx = np.asarray(idx).reshape(len(pts), k)
    for col in range(k):
        i = idx[:, col]
        c = world.centers[i]
        r = world.radii[i]
        h = world.heights[i]
        rho = np.hypot(pts[:, 0] - c[:, 0], pts[:, 1] - c[:, 1])
        z = pts[:, 2]
        # distance to a solid capped cylinder's surface, exterior and interior
        dr = rho - r
        dz = np.where(z > h, z - h, np.where(z < 0, -z, 0.0))
        outside = np.where(dr > 0, np.hypot(dr, dz), dz)
        inside = np.minimum(-dr, np.minimum(h - z, z))
        d = np.where((dr <= 0) & (z >= 0) & (z <= h), inside, outside)
        best = np.minimum(best, d)
    return best

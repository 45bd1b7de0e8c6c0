import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from canopynav.geometry import Pose, compose
from canopynav.world import (T_SC, ForestInfeasibleError, ForestWorld, Intrinsics, Tree, collides,
                             generate_forest, ground_truth_mesh, ray_hits, raycast_depth, surface_distance)


def camera_pose(x, y, z, yaw=0.0):
    return compose(Pose.from_yaw(yaw, (x, y, z)), T_SC)


def test_paper_tree_count():
    assert len(generate_forest(0, 128.0, 378)) == 620
    assert len(generate_forest(7, 128.0, 378)) == 620


def test_empty_and_deterministic():
    assert len(generate_forest(3, 100.0, 0)) == 0
    a = generate_forest(5, 50.0, 300)
    b = generate_forest(5, 50.0, 300)
    assert a.trees == b.trees
    assert generate_forest(6, 50.0, 300).trees != a.trees


def test_spacing_and_extent():
    w = generate_forest(1, 60.0, 378, min_spacing_m=1.5)
    c, r = w.centers, w.radii
    assert np.all(c - r[:, None] >= 0) and np.all(c + r[:, None] <= 60.0)
    gap = np.hypot(*(c[:, None, :] - c[None, :, :]).transpose(2, 0, 1)) - r[:, None] - r[None, :]
    np.fill_diagonal(gap, np.inf)
    assert gap.min() >= 1.5


def test_infeasible_density_fails():
    with pytest.raises(ForestInfeasibleError):
        generate_forest(0, 10.0, 5000, min_spacing_m=2.0, max_attempts_per_tree=50)


def test_world_json_roundtrip(tmp_path):
    w = generate_forest(2, 30.0, 200)
    w.save(tmp_path / "w.json")
    assert ForestWorld.load(tmp_path / "w.json").trees == w.trees


def test_depth_empty_world_looking_up():
    w = ForestWorld([], 50.0)
    intr = Intrinsics.from_fov(16, 12)
    # camera optical axis pointing straight up
    T = Pose.from_translation(10.0, 10.0, 2.0)  # identity rotation: optical axis along +z
    img = raycast_depth(w, T, intr, max_range_m=20.0)
    assert not img.valid.any()


def test_depth_center_pixel_against_trunk():
    r = 0.3
    w = ForestWorld([Tree(15.0, 10.0, r, 20.0)], 50.0)
    img = raycast_depth(w, camera_pose(10.0, 10.0, 2.0), Intrinsics.from_fov(5, 5), 20.0)
    assert img.depths[2, 2] == pytest.approx(5.0 - r, abs=1e-12)


def test_depth_noise_determinism():
    w = generate_forest(0, 40.0, 378)
    intr = Intrinsics.from_fov(32, 24)
    T = camera_pose(20, 20, 2, 0.3)
    a = raycast_depth(w, T, intr, 15.0, noise_std_m=0.05, seed=3)
    b = raycast_depth(w, T, intr, 15.0, noise_std_m=0.05, seed=3)
    np.testing.assert_array_equal(a.depths, b.depths)
    clean = raycast_depth(w, T, intr, 15.0)
    assert np.array_equal(np.isfinite(clean.depths), a.valid)
    assert raycast_depth(w, T, intr, 15.0).depths.tobytes() == clean.depths.tobytes()


def _sdf(world, p):
    """Exterior distance to capped trunks and the ground (independent sphere-tracing oracle)."""
    d = p[:, 2].copy()
    for (cx, cy), r, h in zip(world.centers, world.radii, world.heights):
        dr = np.hypot(p[:, 0] - cx, p[:, 1] - cy) - r
        dz = np.maximum(p[:, 2] - h, 0.0)
        d = np.minimum(d, np.hypot(np.maximum(dr, 0), dz) + np.minimum(np.maximum(dr, p[:, 2] - h), 0))
    return d


def test_raycast_matches_sphere_tracing_oracle():
    w = generate_forest(4, 30.0, 378, height_range=(3.0, 6.0))
    rng = np.random.default_rng(0)
    origins_free = []
    while len(origins_free) < 20:
        o = np.array([*rng.uniform(5, 25, 2), rng.uniform(0.5, 8.0)])
        if _sdf(w, o[None])[0] > 0.2:
            origins_free.append(o)
    checked = 0
    for o in origins_free:
        dirs = rng.normal(size=(50, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        ours = ray_hits(w, o, dirs, 30.0)
        t = np.zeros(len(dirs))
        for _ in range(20000):
            d = _sdf(w, o + t[:, None] * dirs)
            step = np.where(t < 30.0, d, 0.0)
            if np.all((step < 1e-11) | (t >= 30.0)):
                break
            t += step
        oracle = np.where(t < 30.0, t, np.inf)
        hit = np.isfinite(oracle)
        np.testing.assert_allclose(ours[hit], oracle[hit], atol=1e-6)
        assert np.all(~np.isfinite(ours[~hit]) | (ours[~hit] > 30.0 - 1e-6))
        checked += len(dirs)
    assert checked == 1000


def test_collides_examples():
    w = ForestWorld([Tree(5.0, 5.0, 0.3, 10.0)], 20.0)
    assert collides(w, (5.0, 5.0, 2.0), 0.1)
    assert not collides(ForestWorld([], 20.0), (1.0, 1.0, 2.0), 0.3)
    assert not collides(w, (5.0 + 0.3 + 0.2, 5.0, 2.0), 0.2)
    assert collides(w, (5.0 + 0.3 + 0.2 - 1e-9, 5.0, 2.0), 0.2)
    assert collides(w, (1.0, 1.0, 0.1), 0.2)
    with pytest.raises(ValueError):
        collides(w, (0, 0, 1), 0.0)


@given(st.floats(0.05, 0.5), st.floats(0.0, 2 * math.pi), st.floats(0.2, 6.0))
def test_ray_free_before_hit(mav_r, yaw, z):
    # the segment up to the first hit never enters an obstacle
    w = ForestWorld([Tree(12.0, 10.0, 0.4, 8.0), Tree(8.0, 12.0, 0.3, 8.0)], 20.0)
    o = np.array([10.0, 10.0, z])
    d = np.array([[math.cos(yaw), math.sin(yaw), -0.2]])
    t = ray_hits(w, o, d, 20.0)[0]
    if np.isfinite(t):
        ts = np.linspace(0, t - 1e-6, 200)
        pts = o + ts[:, None] * d
        assert _sdf(w, pts).min() >= -1e-9
        # points farther than mav_r from every surface do not collide
        far = _sdf(w, pts) > mav_r
        assert not any(collides(w, p, mav_r) for p in pts[far])


def test_gt_mesh_counts_and_on_surface():
    res = 0.1
    assert ground_truth_mesh(ForestWorld([], 2.0), res).vertices[:, 2].max() == 0.0
    t = Tree(1.0, 1.0, 0.25, 3.0)
    w = ForestWorld([t], 2.0)
    m = ground_truth_mesh(w, res, max_height=2.0, include_ground=False)
    n_theta = math.ceil(2 * math.pi * 0.25 / res)
    assert m.n_vertices == n_theta * (math.ceil(2.0 / res) + 1)
    full = ground_truth_mesh(w, res)
    assert np.abs(surface_distance(w, full.vertices)).max() < 1e-9
    # vertex spacing along the ring is at most res
    ring = m.vertices[:n_theta]
    assert np.linalg.norm(np.diff(ring, axis=0), axis=1).max() <= res

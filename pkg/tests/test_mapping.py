import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from canopynav.estimator import Keyframe
from canopynav.geometry import Pose, UnitQuaternion, compose, transform_points
from canopynav.mapping import MappingParams, OccupancyClass, OccupancySubmap, SubmapCollection, VoxelGrid
from canopynav.mesh import MeshFormatError, TriangleMesh, read_ply, write_ply
from canopynav.world import T_SC, ForestWorld, Intrinsics, Tree, raycast_depth

F, O, U = OccupancyClass.FREE, OccupancyClass.OCCUPIED, OccupancyClass.UNKNOWN


def kf(i, pose=None):
    return Keyframe(i, pose or Pose.identity(), float(i), False)


def traversed_voxels(o, e, res):
    """Exact voxel sequence of segment o->e from sorted boundary crossings."""
    d = e - o
    ts = [0.0, 1.0]
    for ax in range(3):
        if d[ax] == 0:
            continue
        a, b = sorted((o[ax] / res, e[ax] / res))
        for k in range(math.floor(a) + 1, math.ceil(b)):
            ts.append((k * res - o[ax]) / d[ax])
    ts = np.unique(np.clip(ts, 0, 1))
    mids = (ts[:-1] + ts[1:]) / 2
    return {tuple(v) for v in np.floor((o + mids[:, None] * d) / res).astype(int)}


def test_single_ray_traversal_oracle():
    p = MappingParams(resolution=0.1)
    g = VoxelGrid(p)
    o = np.array([0.013, 0.021, 0.037])
    direction = np.array([0.8, 0.5, 0.33])
    e = o + 5.0 * direction / np.linalg.norm(direction)
    g.integrate_rays(o, e[None], np.array([True]))
    ijk, vals = g.voxels()
    got = {tuple(v): float(x) for v, x in zip(ijk, vals)}
    end = tuple(np.floor(e / 0.1).astype(int))
    expected_miss = traversed_voxels(o, e, 0.1) - {end}
    assert got[end] == pytest.approx(p.l_hit)
    misses = {k for k, v in got.items() if v < 0}
    assert misses == expected_miss
    assert 48 <= len(misses) <= 130  # ~50 along-axis voxels plus diagonal crossings
    assert len(got) == len(misses) + 1


def test_axis_aligned_ray_counts():
    g = VoxelGrid(MappingParams(resolution=0.1))
    g.integrate_rays(np.array([0.05, 0.05, 0.05]), np.array([[5.05, 0.05, 0.05]]), np.array([True]))
    ijk, vals = g.voxels()
    assert (vals < 0).sum() == 50 and (vals > 0).sum() == 1


def test_repeat_integration_clamps():
    p = MappingParams(resolution=0.1, l_hit=3.0, l_max=5.0)
    g = VoxelGrid(p)
    for k in range(1, 4):
        g.integrate_rays(np.zeros(3) + 0.05, np.array([[1.05, 0.05, 0.05]]), np.array([True]))
        assert g.get((10, 0, 0)) == pytest.approx(min(k * 3.0, 5.0))


def test_same_image_twice_endpoint():
    p = MappingParams()
    w = ForestWorld([Tree(5.0, 0.0, 0.3, 10.0)], 20.0)
    intr = Intrinsics.from_fov(9, 7)
    T_WC = compose(Pose.from_translation(0.0, 0.0, 2.0), T_SC)
    img = raycast_depth(w, T_WC, intr, 10.0)
    sm = OccupancySubmap(0, 0, Pose.identity(), VoxelGrid(p))
    sm.integrate_depth(T_WC, img)
    sm.integrate_depth(T_WC, img)
    hit_pt = np.array([5.0 - 0.3 + 1e-4, 0.0, 2.0])
    # the central ray ends in this voxel; other rays may add further hits only up to the clamp
    assert sm.values_at_world(hit_pt[None])[0] >= min(2 * p.l_hit, p.l_max) - 1e-6


def test_invalid_image_leaves_submap_unchanged():
    intr = Intrinsics.from_fov(8, 6)
    from canopynav.world import DepthImage
    sm = OccupancySubmap(0, 0, Pose.identity(), VoxelGrid(MappingParams()))
    sm.integrate_depth(Pose.identity(), DepthImage(intr, np.full((6, 8), np.nan)))
    assert len(sm.grid.voxels()[0]) == 0
    with pytest.raises(ValueError):
        DepthImage(intr, np.ones((5, 8)))


def test_submap_creation_policy():
    for n, n_kf, expected in [(1, 5, 5), (2, 10, 5), (4, 3, 0)]:
        c = SubmapCollection(MappingParams(keyframes_per_submap=n))
        for i in range(n_kf):
            c.maybe_create_submap(kf(i))
        assert len(c) == expected
    with pytest.raises(ValueError):
        SubmapCollection().maybe_create_submap(kf(0), n=0)


def test_classify_examples():
    c = SubmapCollection(MappingParams(alpha=-1.0))
    assert c.classify((0, 0, 0), 5) == ([], U)
    c.create_submap(0, Pose.identity())
    grid = c.current.grid
    for k in range(3):
        grid.integrate_rays(np.array([0.05, 0.05 + 0.01 * k, 0.05]), np.array([[3.05, 0.05, 0.05]]),
                            np.array([True]))
    c.touch()
    per, agg = c.classify((1.55, 0.05, 0.05), 5)
    assert grid.values_at(np.array([[1.55, 0.05, 0.05]]))[0] == pytest.approx(-2.1, abs=1e-5)
    assert agg == F
    grid.set_voxels(np.array([[30, 0, 0]]), np.array([5.0]))
    c.touch()
    assert c.classify((3.05, 0.05, 0.05), 5)[1] == O
    assert c.classify((9.0, 9.0, 9.0), 5)[1] == U
    np.testing.assert_array_equal(c.classify_many(np.array([[1.55, .05, .05], [3.05, .05, .05], [9, 9, 9]]), 5),
                                  [int(F), int(O), int(U)])


def test_occupied_vetoes_free_across_submaps():
    c = SubmapCollection(MappingParams())
    c.create_submap(0, Pose.identity())
    c.current.grid.set_voxels(np.array([[0, 0, 0]]), np.array([-4.0]))
    c.create_submap(1, Pose.identity())
    c.current.grid.set_voxels(np.array([[0, 0, 0]]), np.array([4.0]))
    c.touch()
    per, agg = c.classify((0.05, 0.05, 0.05), 5)
    assert per == [F, O] and agg == O
    assert c.classify_many(np.array([[0.05, 0.05, 0.05]]), 5)[0] == int(O)
    # outside the look-back window the old free evidence is ignored
    assert c.classify((0.05, 0.05, 0.05), 1)[0] == [O]


def test_rigid_attachment():
    w = ForestWorld([Tree(4.0, 1.0, 0.3, 10.0)], 20.0)
    intr = Intrinsics.from_fov(24, 18)
    c = SubmapCollection(MappingParams())
    host = Pose(UnitQuaternion.from_yaw(0.2), (0.3, -0.2, 0.0))
    c.create_submap(7, host)
    T_WC = compose(Pose.from_translation(0.0, 1.0, 2.0), T_SC)
    c.integrate_depth(T_WC, raycast_depth(w, T_WC, intr, 10.0))
    before = c.current.grid.voxels()
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-1, 6, 500), rng.uniform(-2, 4, 500), rng.uniform(1, 3, 500)])
    cls_before = c.classify_many(pts, 5)
    mesh_before = c.extract_mesh()
    delta = Pose(UnitQuaternion.from_axis_angle((0.1, 0.2, 1.0), 0.4), (1.0, -2.0, 0.3))
    c.update_poses({7: compose(delta, host)})
    after = c.current.grid.voxels()
    np.testing.assert_array_equal(before[0], after[0])
    np.testing.assert_array_equal(before[1], after[1])
    np.testing.assert_array_equal(c.classify_many(transform_points(delta, pts), 5), cls_before)
    np.testing.assert_allclose(c.extract_mesh().vertices, transform_points(delta, mesh_before.vertices),
                               atol=1e-9)


@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.booleans()),
                min_size=1, max_size=30), st.integers(1, 4))
def test_log_odds_clamped_and_unknown_default(rays, repeats):
    p = MappingParams(resolution=0.25)
    g = VoxelGrid(p)
    ends = np.array([r[:3] for r in rays])
    hits = np.array([r[3] for r in rays])
    for _ in range(repeats):
        g.integrate_rays(np.array([0.01, 0.02, 0.03]), ends, hits)
    _, vals = g.voxels()
    assert np.all(vals >= p.l_min) and np.all(vals <= p.l_max)
    assert g.get((1000, 1000, 1000)) == 0.0


def test_single_voxel_mesh_and_ply(tmp_path):
    c = SubmapCollection(MappingParams())
    assert c.extract_mesh().n_vertices == 0
    c.create_submap(0, Pose.from_translation(1, 2, 3))
    c.current.grid.set_voxels(np.array([[0, 0, 0]]), np.array([3.0]))
    m = c.extract_mesh()
    assert m.n_faces == 12
    assert m.vertices.min(axis=0) == pytest.approx([1, 2, 3])
    write_ply(m, tmp_path / "m.ply")
    back = read_ply(tmp_path / "m.ply")
    np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-6)
    np.testing.assert_array_equal(back.faces, m.faces)


def test_ply_errors(tmp_path):
    bad = tmp_path / "bad.ply"
    bad.write_text("not a mesh\n")
    with pytest.raises(MeshFormatError):
        read_ply(bad)
    write_ply(TriangleMesh(np.eye(3), [[0, 1, 2]]), bad)
    bad.write_text(bad.read_text().rsplit("\n", 2)[0])
    with pytest.raises(MeshFormatError):
        read_ply(bad)


def test_free_sphere_only_touches_unknown():
    c = SubmapCollection(MappingParams())
    c.create_submap(0, Pose.identity())
    c.current.grid.set_voxels(np.array([[0, 0, 0]]), np.array([4.0]))
    n = c.mark_free_sphere((0.05, 0.05, 0.05), 0.3)
    assert n > 0
    assert c.classify((0.05, 0.05, 0.05), 1)[1] == O
    assert c.classify((0.25, 0.05, 0.05), 1)[1] == F


def test_submap_dump_roundtrip(tmp_path):
    c = SubmapCollection(MappingParams())
    c.create_submap(3, Pose.from_yaw(0.5, (1, 1, 0)))
    c.current.grid.integrate_rays(np.zeros(3), np.array([[1.0, 0.5, 0.2]]), np.array([True]))
    c.dump(tmp_path)
    import json
    back = OccupancySubmap.from_dict(json.loads((tmp_path / "submap_00000.json").read_text()))
    assert back.host_keyframe_id == 3 and back.pose.almost_equal(c.current.pose)
    np.testing.assert_array_equal(back.grid.voxels()[0], c.current.grid.voxels()[0])


def test_single_tree_fusion_within_one_voxel():
    res = 0.1
    t = Tree(5.0, 5.0, 0.3, 10.0)
    w = ForestWorld([t], 10.0)
    c = SubmapCollection(MappingParams(resolution=res))
    c.create_submap(0, Pose.identity())
    intr = Intrinsics.from_fov(64, 48)
    for ang in np.linspace(0, 2 * np.pi, 8, endpoint=False):
        pos = (5 - 3 * np.cos(ang), 5 - 3 * np.sin(ang), 2.0)
        T_WC = compose(Pose.from_yaw(ang, pos), T_SC)
        c.integrate_depth(T_WC, raycast_depth(w, T_WC, intr, 8.0))
    occ = (c.current.grid.occupied() + 0.5) * res
    assert len(occ) > 100
    rho = np.hypot(occ[:, 0] - 5, occ[:, 1] - 5)
    d = np.minimum(np.abs(rho - 0.3), np.abs(occ[:, 2]))
    assert d.max() <= res * math.sqrt(3) / 2 + res

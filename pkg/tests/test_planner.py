import math

import numpy as np
import pytest

from canopynav.mapping import OccupancyClass, SubmapCollection
from canopynav.planner import Path, PlannerParams, SegmentChecker, is_segment_valid, path_is_valid, plan

from scenes import free_box_collection


def swept_points(a, b, radius, step):
    """Dense samples of the cylinder a->b plus the half-ball at b."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    g = np.arange(-radius, radius + 1e-9, step)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    ball = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    ball = ball[np.linalg.norm(ball, axis=1) <= radius]
    n = max(2, int(np.linalg.norm(b - a) / step) + 1)
    centres = a + np.linspace(0, 1, n)[:, None] * (b - a)
    pts = (centres[:, None, :] + ball[None]).reshape(-1, 3)
    u = (b - a) / max(np.linalg.norm(b - a), 1e-12)
    t = (pts - a) @ u
    radial = np.linalg.norm(pts - a - t[:, None] * u, axis=1)
    in_cyl = (t >= 0) & (t <= np.linalg.norm(b - a)) & (radial <= radius)
    in_cap = np.linalg.norm(pts - b, axis=1) <= radius
    return pts[in_cyl | in_cap]


def test_unknown_space_invalid():
    c = SubmapCollection()
    assert not is_segment_valid((0, 0, 2), (1, 0, 2), 0.5, c)
    c.create_submap(0, __import__("canopynav.geometry", fromlist=["Pose"]).Pose.identity())
    assert not is_segment_valid((0, 0, 2), (1, 0, 2), 0.5, c)


def test_corridor_segment_valid_and_through_tree_invalid():
    c = free_box_collection((0, -1.5, 0.5), (8, 1.5, 3.5), trees=[(6.0, 0.0, 0.3)])
    assert is_segment_valid((0.5, 0.0, 2.0), (5.0, 0.0, 2.0), 0.5, c)
    assert np.all(c.classify_many(swept_points((0.5, 0, 2), (5.0, 0, 2), 0.5, 0.05), 5) == OccupancyClass.FREE)
    assert not is_segment_valid((0.5, 0.0, 2.0), (7.5, 0.0, 2.0), 0.5, c)
    # leaving the observed corridor sideways
    assert not is_segment_valid((1.0, 0.0, 2.0), (1.0, 1.4, 2.0), 0.5, c)
    with pytest.raises(ValueError):
        is_segment_valid((0, 0, 0), (1, 0, 0), 0.0, c)
    with pytest.raises(ValueError):
        is_segment_valid((0, 0, 0), (1, 0, 0), 0.5, c, alpha=0.5)


def test_segment_check_brackets_dense_oracle():
    res = 0.1
    c = free_box_collection((0, 0, 0.5), (10, 10, 3.5), res,
                            trees=[(3.0, 3.0, 0.3), (6.5, 4.0, 0.25), (4.0, 7.0, 0.35)])
    rng = np.random.default_rng(0)
    pitch = res / 2
    agree = 0
    for _ in range(60):
        a = np.array([*rng.uniform(1.5, 8.5, 2), rng.uniform(1.5, 2.5)])
        b = a + rng.uniform(-1.5, 1.5, 3) * [1, 1, 0.2]
        ok = is_segment_valid(a, b, 0.4, c)
        inner = c.classify_many(swept_points(a, b, 0.4 - pitch * math.sqrt(3), 0.04), 5)
        outer = c.classify_many(swept_points(a, b, 0.4 + pitch * math.sqrt(3), 0.04), 5)
        if ok:
            assert np.all(inner == OccupancyClass.FREE)
        if np.all(outer == OccupancyClass.FREE):
            assert ok
        agree += 1
    assert agree == 60


def test_plan_goal_equals_start():
    c = free_box_collection((0, 0, 0.5), (5, 5, 3.5))
    r = plan((2, 2, 2), (2, 2, 2), c)
    assert r.success and r.cost == 0.0 and len(r.path) == 1


def test_plan_free_box_near_straight():
    c = free_box_collection((0, 0, 0.5), (14, 6, 3.5))
    r = plan((1, 3, 2), (13, 3.5, 2), c, PlannerParams(max_iterations=400, seed=1))
    assert r.success
    straight = math.dist((1, 3, 2), (13, 3.5, 2))
    assert r.cost <= 1.05 * straight
    assert path_is_valid(r.path, SegmentChecker(c.view(5), 0.6))


def test_plan_around_trees_valid_and_monotone():
    trees = [(5.0, 3.0, 0.4), (8.0, 2.0, 0.3), (8.0, 4.5, 0.3)]
    c = free_box_collection((0, 0, 0.5), (14, 6, 3.5), trees=trees)
    r = plan((1, 3, 2), (13, 3, 2), c, PlannerParams(max_iterations=500, seed=2, stop_ratio=1.0),
             record_samples=True)
    assert r.success
    for a, b in r.path.segments():
        assert is_segment_valid(a, b, 0.6, c)
    h = np.array(r.cost_history)
    assert np.all(np.diff(h[np.isfinite(h)]) <= 1e-12)
    start, goal = np.array([1, 3, 2.0]), np.array([13, 3, 2.0])
    assert r.informed_samples
    for x, c_best in r.informed_samples:
        assert np.linalg.norm(x - start) + np.linalg.norm(x - goal) <= c_best + 1e-9
    for x, y, rad in trees:
        for p in r.path.waypoints:
            assert math.hypot(p[0] - x, p[1] - y) > rad + 0.6 - 0.1


def test_plan_deterministic():
    c = free_box_collection((0, 0, 0.5), (14, 6, 3.5), trees=[(7.0, 3.0, 0.4)])
    a = plan((1, 3, 2), (13, 3, 2), c, PlannerParams(seed=5))
    b = plan((1, 3, 2), (13, 3, 2), c, PlannerParams(seed=5))
    np.testing.assert_array_equal(a.path.waypoints, b.path.waypoints)


def test_goal_inside_tree_fails():
    c = free_box_collection((0, 0, 0.5), (14, 6, 3.5), trees=[(10.0, 3.0, 0.4)])
    r = plan((1, 3, 2), (10, 3, 2), c)
    assert not r.success and r.reason == "goal not free"


def test_blocked_goal_reports_no_solution():
    # a full wall of occupied voxels separates start and goal
    c = free_box_collection((0, 0, 0.5), (14, 6, 3.5),
                            trees=[(7.0, y, 0.45) for y in np.arange(0.0, 6.5, 0.5)])
    r = plan((1, 3, 2), (13, 3, 2), c, PlannerParams(max_iterations=150))
    assert not r.success and "budget" in r.reason


def test_path_csv(tmp_path):
    p = Path([[0, 0, 0], [1, 2, 3]])
    p.to_csv(tmp_path / "p.csv")
    np.testing.assert_allclose(np.loadtxt(tmp_path / "p.csv", delimiter=",", skiprows=1), p.waypoints)
    assert p.length == pytest.approx(math.sqrt(14))

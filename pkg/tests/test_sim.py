import math

import numpy as np
import pytest

from canopynav.estimator import EstimatorParams
from canopynav.sim import (TICK_COLUMNS, MissionConfig, PatternConfig, WorldConfig, generate_lawnmower,
                           generate_modified_lawnmower, path_length, read_ticks, run_mission)


def test_lawnmower_rows_and_goals():
    g = generate_lawnmower(100.0, 25.0, 2.5)
    assert len(g) == 10
    ys = sorted({p[1] for p in g})
    assert ys == [0.0, 25.0, 50.0, 75.0, 100.0]
    # rows alternate direction
    for i in range(5):
        a, b = g[2 * i], g[2 * i + 1]
        assert a[1] == b[1]
        assert (b[0] - a[0]) == (100.0 if i % 2 == 0 else -100.0)
    assert all(p[2] == 2.5 for p in g)


def test_lawnmower_spacing_larger_than_extent():
    g = generate_lawnmower(10.0, 25.0, 2.0, origin=(5.0, 5.0))
    assert len(g) == 2
    np.testing.assert_allclose(g[0], [5, 5, 2])
    np.testing.assert_allclose(g[1], [15, 5, 2])


def test_lawnmower_rejects_bad_spacing():
    with pytest.raises(ValueError):
        generate_lawnmower(10.0, 0.0, 2.0)


def test_modified_without_revisits_is_plain():
    a = generate_lawnmower(48.0, 12.0, 2.5)
    b = generate_modified_lawnmower(48.0, 12.0, 2.5, math.inf)
    assert len(a) == len(b)
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p, q)


def test_modified_adds_detours():
    plain = generate_lawnmower(48.0, 16.0, 2.5)       # 4 rows
    mod = generate_modified_lawnmower(48.0, 16.0, 2.5, 2)
    assert len(plain) == 8
    assert len(mod) > len(plain)
    assert path_length(mod) > path_length(plain)
    # every detour goal lies on an earlier row at the current row's end
    rows = {p[1] for p in plain}
    assert all(p[1] in rows for p in mod)
    with pytest.raises(ValueError):
        generate_modified_lawnmower(48.0, 16.0, 2.5, 0)


def _straight_cfg(**kw):
    base = dict(world=WorldConfig(side_m=64.0, trees=[]),
                pattern=PatternConfig(kind="explicit", goals=[(10, 10, 2.5), (30, 10, 2.5)]),
                gt_fusion=False, max_time_s=120.0)
    base.update(kw)
    return MissionConfig(**base)


@pytest.fixture(scope="module")
def straight_log():
    return run_mission(_straight_cfg())


def test_empty_world_straight_mission(straight_log):
    log = straight_log
    assert log.status == "completed"
    assert log.distance_travelled_m == pytest.approx(20.0, abs=1.5)
    assert not np.any(log.ticks[:, TICK_COLUMNS.index("collision")])
    np.testing.assert_allclose(log.ticks[-1, 1:4], [30, 10, 2.5], atol=1.5)


def test_mission_is_deterministic(straight_log):
    again = run_mission(_straight_cfg())
    np.testing.assert_array_equal(straight_log.ticks, again.ticks)


def test_log_roundtrip(straight_log, tmp_path):
    straight_log.write(tmp_path)
    for name in ("ticks.csv", "goals.csv", "world.json", "summary.json", "keyframes.csv"):
        assert (tmp_path / name).exists()
    np.testing.assert_allclose(read_ticks(tmp_path / "ticks.csv"), straight_log.ticks, rtol=1e-9, atol=1e-9)


@pytest.fixture(scope="module")
def out_and_back_log():
    # 2 x 100 m at 0.5 %/m drift
    cfg = MissionConfig(world=WorldConfig(side_m=128.0, trees=[]),
                        pattern=PatternConfig(kind="explicit", goals=[(10, 10, 2.5), (110, 10, 2.5), (10, 10, 2.5)]),
                        estimator=EstimatorParams(drift_rate=0.005), gt_fusion=False, max_time_s=300.0)
    return run_mission(cfg)


def test_out_and_back_deforms_trajectory(out_and_back_log):
    log = out_and_back_log
    assert log.status == "completed"
    assert len(log.loop_closures) >= 1
    assert len(log.deformation_events) >= 1
    assert max(e["max_displacement_m"] for e in log.deformation_events) > 0.0
    for e, d in zip(log.deformation_events, log.deformation_displacements):
        assert e["n_references"] == len(d)
        assert e["max_displacement_m"] == pytest.approx(float(d.max()))


def test_generations_never_mix(out_and_back_log):
    t = out_and_back_log.ticks
    est = t[:, TICK_COLUMNS.index("est_generation")]
    traj = t[:, TICK_COLUMNS.index("traj_generation")]
    np.testing.assert_array_equal(est, traj)
    assert np.all(np.diff(est) >= 0)
    assert est[-1] == len(out_and_back_log.loop_closures)


def test_config_validation():
    with pytest.raises(ValueError):
        MissionConfig(control_hz=20.0)
    with pytest.raises(ValueError):
        MissionConfig(mav_radius_m=0.0)

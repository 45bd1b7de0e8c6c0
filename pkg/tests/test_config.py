import json

import pytest

from canopynav.config import ConfigError, load_json
from canopynav.sim import MissionConfig


def test_defaults_roundtrip():
    cfg = MissionConfig.from_dict({"world": {}})
    assert cfg == MissionConfig()
    assert MissionConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_missing_world():
    with pytest.raises(ConfigError) as e:
        MissionConfig.from_dict({"seed": 1})
    assert e.value.key_path == "world"


def test_unknown_key_names_path():
    with pytest.raises(ConfigError) as e:
        MissionConfig.from_dict({"world": {}, "navigation": {"v_maxx": 2.0}})
    assert e.value.key_path == "navigation.v_maxx"
    assert "navigation.v_maxx" in str(e.value)


@pytest.mark.parametrize("d, path", [
    ({"world": {"side_m": "big"}}, "world.side_m"),
    ({"world": {}, "seed": 1.5}, "seed"),
    ({"world": {}, "gt_fusion": 1}, "gt_fusion"),
    ({"world": {}, "pattern": {"kind": "spiral"}}, "pattern.kind"),
    ({"world": {}, "pattern": {"origin": [1.0]}}, "pattern.origin"),
    ({"world": {"trees": [[1.0, 2.0, "x", 4.0]]}}, "world.trees[0][2]"),
])
def test_type_errors_name_key(d, path):
    with pytest.raises(ConfigError) as e:
        MissionConfig.from_dict(d)
    assert e.value.key_path.startswith(path.split("[")[0])
    assert path.split("[")[0] in str(e.value)


def test_value_errors_become_config_errors():
    with pytest.raises(ConfigError):
        MissionConfig.from_dict({"world": {}, "control_hz": 10.0})


def test_int_accepted_for_float():
    assert MissionConfig.from_dict({"world": {"side_m": 64}}).world.side_m == 64.0


def test_load_json_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_json(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_json(bad)

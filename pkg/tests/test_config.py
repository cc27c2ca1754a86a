import json

import pytest

from monohydra.config import deep_merge, load_config_file, load_run_config, parse_override
from monohydra.model_types import ConfigError


def test_parse_override_nesting_and_values():
    assert parse_override("vio.gates.s_d=3") == {"vio": {"gates": {"s_d": 3}}}
    assert parse_override("flags.depth_factors=true") == {"flags": {"depth_factors": True}}
    assert parse_override("name=my run") == {"name": "my run"}
    assert parse_override("fusion.dynamic_classes=[\"person\",\"dog\"]") == {"fusion": {"dynamic_classes": ["person", "dog"]}}
    assert parse_override("run.seed=3") == {"seed": 3}


@pytest.mark.parametrize("item", ["flags.depth_factors", "=3", "..=1"])
def test_parse_override_rejects_malformed(item):
    with pytest.raises(ConfigError):
        parse_override(item)


def test_deep_merge_leaves_inputs_alone():
    base = {"a": {"b": 1, "c": 2}, "d": [1]}
    override = {"a": {"b": 5}, "e": 3}
    merged = deep_merge(base, override)
    assert merged == {"a": {"b": 5, "c": 2}, "d": [1], "e": 3}
    assert base == {"a": {"b": 1, "c": 2}, "d": [1]}
    merged["d"].append(2)
    assert base["d"] == [1]


def test_load_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    with pytest.raises(ConfigError):
        load_config_file(str(bad))
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config_file(str(arr))


def test_run_section_is_flattened(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"env": {"X": 1}, "seed": 1, "run": {"seed": 4, "name": "nested"}}))
    data = load_config_file(str(path))
    assert data == {"seed": 4, "name": "nested"}


def test_overrides_apply_in_order(config_path):
    cfg = load_run_config(config_path("noise_free.json"), ["sim.duration=2.5", "flags.temporal_K=2", "seed=9"])
    assert cfg.name == "noise_free"
    assert cfg.sim.duration == 2.5
    assert cfg.vio.filter.oracle_check is True
    # 窗口长度与噪声种子由顶层同步
    assert cfg.fusion.K == 2
    assert cfg.sim.noise.seed == 9


@pytest.mark.parametrize("item", ["sim.duration=-1", "flags.temporal_K=-2", "unknown_key=1", "vio.gates.s_d=0"])
def test_invalid_values_raise_config_error(item):
    with pytest.raises(ConfigError):
        load_run_config(overrides=[item])


@pytest.mark.parametrize("name", ["noise_free.json", "dynamic.json", "flicker.json"])
def test_shipped_configs_load(config_path, name):
    cfg = load_run_config(config_path(name))
    assert cfg.name == name.split(".")[0]


def test_flags_label():
    assert load_run_config().flags.label() == "baseline"
    cfg = load_run_config(overrides=["flags.depth_factors=true", "flags.semantic_mask=true", "flags.temporal_K=3"])
    assert cfg.flags.label() == "depth+mask+K=3"

import json

import pytest

from sealab.config import RunConfig, build_config, load_config
from sealab.errors import ValidationError


def test_defaults_round_trip_through_flat_keys():
    flat = RunConfig().to_flat()
    assert flat["train.tau"] == 0.07 and flat["world.rows"] == 6
    assert build_config(flat, env={}) == RunConfig()


def test_unknown_key_names_the_key():
    with pytest.raises(ValidationError, match="train.taau"):
        build_config({"train.taau": 0.1}, env={})
    with pytest.raises(ValidationError, match="nosection.x"):
        build_config(overrides={"nosection.x": 1}, env={})


def test_override_beats_file_beats_env():
    env = {"SEA_SEED": "7"}
    cfg = build_config(env=env)
    assert cfg.world.seed == cfg.train.seed == 7
    cfg = build_config({"train.seed": 3}, env=env)
    assert (cfg.world.seed, cfg.train.seed) == (7, 3)
    cfg = build_config({"train.seed": 3}, {"train.seed": "11"}, env=env)
    assert cfg.train.seed == 11


def test_string_values_are_coerced():
    cfg = build_config(overrides={"train.lr0": "0.01", "world.rows": "4", "train.nesterov": "false",
                                  "probe.tasks": "scene_id,traversable_count"}, env={})
    assert cfg.train.lr0 == 0.01 and cfg.world.rows == 4 and cfg.train.nesterov is False
    assert cfg.probe.tasks == ("scene_id", "traversable_count")


@pytest.mark.parametrize("key, value", [("world.rows", "abc"), ("world.rows", 2.5), ("train.nesterov", 1),
                                        ("train.batch_size", 0), ("probe.tasks", ["colour"]),
                                        ("world.node_spacing", 9.0)])
def test_invalid_values_rejected(key, value):
    with pytest.raises(ValidationError):
        build_config({key: value}, env={})


def test_load_config_and_snapshot(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"world.rows": 4, "train.iterations": 10}))
    cfg = load_config(path, {"train.iterations": 20}, env={})
    assert cfg.world.rows == 4 and cfg.train.iterations == 20
    snap = cfg.snapshot(tmp_path / "out")
    again = load_config(snap, env={"SEA_SEED": "99"})
    assert again == cfg


def test_config_file_must_be_object(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("[1, 2]")
    with pytest.raises(ValidationError):
        load_config(path, env={})

import json

import pytest

from fedsub.config import (
    ConfigError,
    apply_overrides,
    emit_config,
    parse_config,
    parse_config_dict,
    parse_config_text,
)


def base_config():
    return {
        "seed": 7,
        "rounds": 5,
        "clients": 8,
        "participants": 4,
        "local_steps": 3,
        "batch_size": 16,
        "eta_local": 0.05,
        "method": "fiarse",
        "strategy": "modelwise",
        "capacities": [
            {"gamma": 0.25, "count": 4},
            {"gamma": 1.0, "count": 4},
        ],
        "model": {"widths": [6, 12, 3]},
        "data": {"classes": 3, "dim": 6, "samples": 400, "alpha": 0.5, "spread": 3.0},
    }


def test_parse_fills_default_global_rate():
    cfg = parse_config_dict(base_config())
    assert cfg.eta_global == 1.0
    assert cfg.mask_biases is True
    assert cfg.output == "out"


def test_unknown_keys_rejected_at_every_level():
    raw = base_config()
    raw["typo_key"] = 1
    with pytest.raises(ConfigError, match="typo_key"):
        parse_config_dict(raw)
    raw = base_config()
    raw["data"]["extra"] = 2
    with pytest.raises(ConfigError, match="extra"):
        parse_config_dict(raw)
    raw = base_config()
    raw["capacities"][0]["weight"] = 1
    with pytest.raises(ConfigError, match="weight"):
        parse_config_dict(raw)


def test_capacity_counts_must_sum_to_clients():
    raw = base_config()
    raw["capacities"][0]["count"] = 3
    with pytest.raises(ConfigError, match="capacities"):
        parse_config_dict(raw)


def test_steps_and_epochs_are_exclusive():
    raw = base_config()
    raw["local_epochs"] = 2
    with pytest.raises(ConfigError, match="local_steps/local_epochs"):
        parse_config_dict(raw)
    del raw["local_steps"]
    cfg = parse_config_dict(raw)
    assert cfg.local_epochs == 2 and cfg.local_steps is None


def test_roundtrip_emit_then_parse():
    raw = base_config()
    raw["shards"] = None
    del raw["shards"]
    cfg = parse_config_dict(raw)
    again = parse_config_text(emit_config(cfg))
    assert again == cfg


def test_roundtrip_with_epochs_and_shards():
    raw = base_config()
    del raw["local_steps"]
    raw["local_epochs"] = 4
    raw["strategy"] = "shardwise"
    raw["shards"] = [[0, 1], [1, 2]]
    cfg = parse_config_dict(raw)
    assert parse_config_text(emit_config(cfg)) == cfg


def test_validation_messages_name_key_paths():
    raw = base_config()
    raw["participants"] = 20
    with pytest.raises(ConfigError, match="participants"):
        parse_config_dict(raw)
    raw = base_config()
    raw["model"]["widths"] = [5, 12, 3]
    with pytest.raises(ConfigError, match=r"model.widths\[0\]"):
        parse_config_dict(raw)
    raw = base_config()
    raw["data"]["alpha"] = -1
    with pytest.raises(ConfigError, match="data.alpha"):
        parse_config_dict(raw)
    raw = base_config()
    raw["method"] = "fedavg"
    with pytest.raises(ConfigError, match="method"):
        parse_config_dict(raw)
    raw = base_config()
    raw["strategy"] = "shardwise"
    with pytest.raises(ConfigError, match="shards"):
        parse_config_dict(raw)


def test_shard_ranges_must_tile_layers():
    raw = base_config()
    raw["strategy"] = "shardwise"
    raw["shards"] = [[0, 1]]
    with pytest.raises(ConfigError, match="shards"):
        parse_config_dict(raw)
    raw["shards"] = [[0, 1], [1, 2]]
    assert parse_config_dict(raw).shards == ((0, 1), (1, 2))


def test_full_batch_null():
    raw = base_config()
    raw["batch_size"] = None
    cfg = parse_config_dict(raw)
    assert cfg.batch_size is None


def test_bad_json_and_file_parse(tmp_path):
    with pytest.raises(ConfigError, match="JSON"):
        parse_config_text("{not json")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(base_config()))
    cfg = parse_config(str(path))
    assert cfg.seed == 7


def test_overrides_dotted_paths():
    raw = base_config()
    out = apply_overrides(raw, ["seed=9", "data.alpha=0.3", "method=heterofl"])
    assert out["seed"] == 9
    assert out["data"]["alpha"] == 0.3
    assert out["method"] == "heterofl"
    assert raw["seed"] == 7  # original untouched
    with pytest.raises(ConfigError, match="override"):
        apply_overrides(raw, ["no_equals_sign"])


def test_zero_rounds_allowed():
    raw = base_config()
    raw["rounds"] = 0
    assert parse_config_dict(raw).rounds == 0
    raw["rounds"] = -1
    with pytest.raises(ConfigError, match="rounds"):
        parse_config_dict(raw)

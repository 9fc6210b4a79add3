import json

import pytest

from fbzero import config


def test_defaults_and_roundtrip(tmp_path):
    cfg = config.from_dict({})
    assert cfg.train.gamma == 0.98 and cfg.train.lr_b == 1e-5
    assert cfg.model.latent_dim == 32
    path = tmp_path / "c.json"
    cfg.save(path)
    again = config.load(path)
    assert again.to_dict() == cfg.to_dict()
    assert again.model_hash == cfg.model_hash


@pytest.mark.parametrize("raw, where", [
    ({"trian": {}}, "trian"),
    ({"train": {"lr_x": 1.0}}, "train.lr_x"),
    ({"env": {"colour": 1}}, "env.colour"),
    ({"sampler": {"mix": [1, 0, 0]}}, "sampler.mix"),
])
def test_unknown_keys_name_location(raw, where):
    with pytest.raises(config.ConfigError, match=where.replace(".", r"\.")):
        config.from_dict(raw)


def test_invalid_values_rejected():
    with pytest.raises(config.ConfigError):
        config.from_dict({"train": {"gamma": 1.5}})
    with pytest.raises(config.ConfigError):
        config.from_dict({"sampler": {"mix_weights": [0.5, 0.5, 0.5]}})
    with pytest.raises(config.ConfigError):
        config.from_dict({"threads": 0})
    with pytest.raises(config.ConfigError):
        config.from_dict({"deterministic": "yes"})
    with pytest.raises(config.ConfigError):
        config.from_dict([1, 2])


def test_seed_override(tmp_path, monkeypatch):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"seed": 4}}))
    assert config.load(path).train.seed == 4
    monkeypatch.setenv("FBZERO_SEED", "11")
    assert config.load(path).train.seed == 11
    assert config.load(path, seed=2).train.seed == 2


def test_bad_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(config.ConfigError, match="invalid JSON"):
        config.load(path)


def test_model_hash_ignores_training_settings():
    a = config.from_dict({"train": {"lr_f": 1e-3}})
    b = config.from_dict({"train": {"lr_f": 1e-4}})
    c = config.from_dict({"model": {"latent_dim": 16}})
    assert a.model_hash == b.model_hash != c.model_hash

import json
from pathlib import Path

import pytest

from src.core.errors import ConfigError
from src.utils.config import Config


def test_config_defaults():
    config = Config()

    assert config.get("basis") == "chebyshev"
    assert config.get("order") is None
    assert config.get("hidden") == [64]
    assert config.get("scale_lr") == 0.1
    assert config.get("s-min") == 1e-3


def test_config_persists_updates(tmp_path):
    config_path = tmp_path / "settings.json"

    config = Config()
    config.set("epochs", 12)
    config.set("hidden", "16,8")
    config.save(config_path)

    reloaded = Config(config_path)
    assert reloaded.get("epochs") == 12
    assert reloaded.get("hidden") == [16, 8]


def test_layers_apply_in_order(tmp_path):
    config_path = tmp_path / "experiment.json"
    config_path.write_text(json.dumps({"preset": "cora", "lr": 0.05, "dropout": 0.2}), encoding="utf-8")

    config = Config(config_path, preset="pubmed")
    config.update({"dropout": None, "alpha": 3.0})

    # the file's preset replaces the constructor's, its own keys win over both
    assert config.get("b") == 1.48
    assert config.get("lr") == 0.05
    assert config.get("dropout") == 0.2
    assert config.get("alpha") == 3.0


def test_hidden_normalisation():
    config = Config()

    config.set("hidden", 32)
    assert config.get("hidden") == [32]
    config.set("hidden", (4, 2))
    assert config.get("hidden") == [4, 2]
    with pytest.raises(ConfigError):
        config.set("hidden", "8,x")
    with pytest.raises(ConfigError):
        config.set("hidden", [0])


def test_rejects_unknown_keys_and_presets(tmp_path):
    with pytest.raises(ConfigError):
        Config().set("whisper_model", "base")
    with pytest.raises(ConfigError):
        Config(preset="imagenet")

    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        Config(bad)
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        Config(bad)
    with pytest.raises(ConfigError):
        Config(tmp_path / "absent.json")


def test_save_needs_a_path():
    with pytest.raises(ConfigError):
        Config().save()


def test_shipped_settings_load(tmp_path):
    settings = Path(__file__).resolve().parents[1] / "config" / "settings.json"

    config = Config(settings)

    assert config.get_all().keys() == Config.DEFAULT_CONFIG.keys()
    assert config.get("order") is None
    assert config.get("readout_final_relu") is True

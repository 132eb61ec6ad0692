"""JSON-backed experiment configuration."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from src.core.errors import ConfigError

logger = logging.getLogger(__name__)


class Config:
    """Hyperparameter configuration with stable defaults.

    Values are layered: defaults, then an optional named preset, then a JSON file,
    then explicit overrides (usually command-line flags).
    """

    DEFAULT_CONFIG = {
        "basis": "chebyshev",
        "order": None,
        "b": 2.0,
        "hidden": [64],
        "readout_hidden": 16,
        "readout_final_relu": True,
        "lr": 0.01,
        "scale_lr": 0.1,
        "alpha": 0.1,
        "dropout": 0.5,
        "epochs": 200,
        "patience": 50,
        "seed": 0,
        "initial_scale": 2.0,
        "s_min": 1e-3,
        "s_max": 10.0,
        "folds": 5,
        "optimizer": "adam",
        "weight_decay": 0.0,
        "repeats": 1,
    }

    # Per-dataset settings:
    # hidden units, weight lr, dropout, alpha, scale lr and the Chebyshev b.
    PRESETS = {
        "cora": {"hidden": [64], "lr": 0.01, "dropout": 0.5, "alpha": 0.1, "scale_lr": 1.0, "b": 1.48},
        "citeseer": {"hidden": [32], "lr": 0.01, "dropout": 0.5, "alpha": 1.0, "scale_lr": 10.0, "b": 1.50},
        "pubmed": {"hidden": [64], "lr": 0.1, "dropout": 0.5, "alpha": 1.0, "scale_lr": 10.0, "b": 1.65},
        "amazon-computers": {"hidden": [32], "lr": 0.001, "dropout": 0.5, "alpha": 1.0, "scale_lr": 1.0, "b": 1.60},
        "amazon-photo": {"hidden": [32], "lr": 0.01, "dropout": 0.5, "alpha": 1.0, "scale_lr": 10.0, "b": 1.59},
        "coauthor-cs": {"hidden": [32], "lr": 0.01, "dropout": 0.5, "alpha": 1.0, "scale_lr": 1.0, "b": 1.41},
        "adni-thickness": {"hidden": [16], "lr": 0.01, "dropout": 0.5, "alpha": 1.0, "scale_lr": 1.0, "b": 1.20},
        "adni-fdg": {"hidden": [16], "lr": 0.01, "dropout": 0.5, "alpha": 1.0, "scale_lr": 1.0, "b": 1.20},
    }

    def __init__(self, config_path: Optional[Union[str, Path]] = None, preset: Optional[str] = None):
        self.config_path = Path(config_path) if config_path else None
        self._config: dict[str, Any] = dict(self.DEFAULT_CONFIG)
        if preset:
            self.apply_preset(preset)
        if self.config_path is not None:
            self.load()

    def load(self) -> None:
        """Merge the JSON file over the current values."""
        if self.config_path is None:
            return
        if not self.config_path.exists():
            raise ConfigError(f"config file not found: {self.config_path}")
        try:
            with self.config_path.open("r", encoding="utf-8") as file:
                loaded_config = json.load(file)
        except (json.JSONDecodeError, OSError) as exc:
            raise ConfigError(f"failed to load config {self.config_path}: {exc}") from exc
        if not isinstance(loaded_config, dict):
            raise ConfigError(f"config {self.config_path} must hold a JSON object")

        preset = loaded_config.pop("preset", None)
        if preset:
            self.apply_preset(preset)
        self.update(loaded_config)
        logger.debug("loaded config from %s", self.config_path)

    def save(self, path: Optional[Union[str, Path]] = None) -> Path:
        """Persist the resolved values as JSON."""
        target = Path(path) if path else self.config_path
        if target is None:
            raise ConfigError("no path given to save the config")
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", encoding="utf-8") as file:
            json.dump(self._config, file, indent=4, ensure_ascii=False)
        return target

    def apply_preset(self, name: str) -> None:
        key = name.strip().lower()
        if key not in self.PRESETS:
            known = ", ".join(sorted(self.PRESETS))
            raise ConfigError(f"unknown preset '{name}' (known: {known})")
        self._config.update(self.PRESETS[key])

    def update(self, values: Mapping[str, Any]) -> None:
        """Merge values, ignoring ``None`` (an unset flag keeps the lower layer)."""
        for raw_key, value in values.items():
            key = self._normalize_key(raw_key)
            if value is None:
                continue
            self._config[key] = value
        self._normalize_hidden()

    def get(self, key: str, default: Any = None) -> Any:
        return self._config.get(self._normalize_key(key), default)

    def set(self, key: str, value: Any) -> None:
        self.update({key: value})

    def get_all(self) -> dict[str, Any]:
        return dict(self._config)

    def _normalize_key(self, key: str) -> str:
        normalized = str(key).strip().replace("-", "_")
        if normalized not in self.DEFAULT_CONFIG:
            raise ConfigError(f"unknown config key '{key}'")
        return normalized

    def _normalize_hidden(self) -> None:
        hidden = self._config.get("hidden")
        if isinstance(hidden, int):
            self._config["hidden"] = [hidden]
        elif isinstance(hidden, str):
            try:
                self._config["hidden"] = [int(part) for part in hidden.split(",") if part.strip()]
            except ValueError as exc:
                raise ConfigError(f"invalid hidden sizes '{hidden}'") from exc
        elif isinstance(hidden, (list, tuple)):
            self._config["hidden"] = [int(width) for width in hidden]
        else:
            raise ConfigError(f"invalid hidden sizes {hidden!r}")
        if any(width <= 0 for width in self._config["hidden"]):
            raise ConfigError("hidden sizes must be positive")

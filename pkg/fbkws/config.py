"""
YAML configuration module.

Loads an optional YAML document and deep-merges it over the built-in
defaults, then exposes typed views used by the experiment runner.
"""

import copy
import logging
import os
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .backend import ResNetConfig, TrainConfig, preset_config
from .data import AugmentConfig
from .dsp import FramingConfig
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "FBKWS_CONFIG"

DEFAULTS: Dict[str, Any] = {
    "framing": {
        "frame_length": 480,
        "hop": 160,
        "sample_rate": 16000,
        "spectrogram_window": "hann",
    },
    "filterbank": {
        "n_channels": 40,
        "mel_scale": "slaney",
        "f_min": 0.0,
        "f_max": None,
        "init_scale": "mel",
        "eta": 1.9287498479639178e-22,
    },
    "gammachirp": {
        "kernel_length": 2048,
        "cochleagram_mode": "parseval_rect",
        "normalize_impulse": True,
        "normalize_each_forward": True,
    },
    "feature_norm": {"momentum": 0.99, "eps": 1e-5},
    "backend": {
        "presets": {
            "large": {"n_res_blocks": 6, "channels": 45, "dilation": True},
            "small": {"n_res_blocks": 3, "channels": 19, "dilation": False},
        },
        "zero_init_head": False,
    },
    "training": {
        "epochs": 26,
        "batch_size": 64,
        "learning_rate": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "epsilon": 1e-7,
        "precision": "float32",
        "target_train_accuracy": None,
        "keep_best": False,
    },
    "augmentation": {
        "enabled": True,
        "shift_ms": 100.0,
        "noise_prob": 0.8,
        "noise_max_gain": 0.1,
    },
    "data": {
        "split_fractions": [0.8, 0.1, 0.1],
        "split_seed": 0,
        "workers": 4,
    },
    "experiments": {
        "preset": "large",
        "repetitions": 10,
        "base_seed": 0,
        "workers": 1,
        "fusion_mode": "stack",
    },
    "logging": {"level": "INFO", "json": False},
}


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge override into a copy of base."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class FbkwsConfig:
    """
    Merged configuration for fbkws runs.

    Attributes:
        config_path (str, optional): YAML file that was merged, if any
        data (Dict[str, Any]): Merged configuration tree
    """

    def __init__(
        self, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None
    ):
        """
        Load configuration.

        Args:
            config_path (str, optional): YAML file. If not provided, read from
                                         the FBKWS_CONFIG environment variable;
                                         built-in defaults only when neither is set.
            overrides (Dict[str, Any], optional): Applied after the YAML file
        """
        try:
            self.config_path = config_path or os.environ.get(CONFIG_ENV_VAR)
            loaded = self._load_config() if self.config_path else {}
            self.data = deep_merge(DEFAULTS, loaded)
            if overrides:
                self.data = deep_merge(self.data, overrides)
        except Exception as e:
            logger.error(f"Failed to initialize FbkwsConfig: {str(e)}")
            raise

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FbkwsConfig":
        """Configuration from an already merged tree, without touching files."""
        config = cls.__new__(cls)
        config.config_path = None
        config.data = deep_merge(DEFAULTS, data)
        return config

    def _load_config(self) -> Dict[str, Any]:
        """
        Read the YAML document.

        Raises:
            ConfigError: If the file is missing, unparsable or not a mapping
        """
        path = Path(str(self.config_path))
        if not path.is_file():
            raise ConfigError(f"Configuration file not found: {path}")
        try:
            with open(path) as f:
                loaded = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            logger.error(f"Failed to parse YAML configuration: {str(e)}")
            raise ConfigError(f"Invalid YAML in {path}: {str(e)}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"Top level of {path} must be a mapping")
        return loaded

    def get(self, dotted_key: str) -> Any:
        """
        Look up a value such as "training.epochs".

        Raises:
            ConfigError: If any path component is missing
        """
        node: Any = self.data
        for part in dotted_key.split("."):
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"Configuration key not found: {dotted_key}")
            node = node[part]
        return node

    def section(self, name: str) -> Dict[str, Any]:
        value = self.get(name)
        if not isinstance(value, dict):
            raise ConfigError(f"Configuration section {name} is not a mapping")
        return dict(value)

    def as_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.data)

    def framing(self) -> FramingConfig:
        section = self.section("framing")
        try:
            return FramingConfig(
                frame_length=int(section["frame_length"]),
                hop=int(section["hop"]),
                sample_rate=int(section["sample_rate"]),
            )
        except (KeyError, ValueError) as e:
            raise ConfigError(f"Invalid framing configuration: {str(e)}") from e

    def train_config(self, **overrides: Any) -> TrainConfig:
        section = self.section("training")
        section.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return TrainConfig(
                epochs=int(section["epochs"]),
                batch_size=int(section["batch_size"]),
                learning_rate=float(section["learning_rate"]),
                beta1=float(section["beta1"]),
                beta2=float(section["beta2"]),
                epsilon=float(section["epsilon"]),
                seed=int(section.get("seed", 0)),
                precision=str(section["precision"]),
                target_train_accuracy=(
                    None
                    if section.get("target_train_accuracy") is None
                    else float(section["target_train_accuracy"])
                ),
                keep_best=bool(section["keep_best"]),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError(f"Invalid training configuration: {str(e)}") from e

    def resnet_config(
        self,
        preset: str,
        n_classes: int,
        input_shape: Tuple[int, int],
        in_channels: int = 1,
    ) -> ResNetConfig:
        presets = self.get("backend.presets")
        if preset not in presets:
            raise ConfigError(f"Unknown back-end preset {preset!r}; known: {sorted(presets)}")
        cfg = preset_config(preset, n_classes, input_shape, in_channels, presets)
        if self.get("backend.zero_init_head"):
            cfg = replace(cfg, zero_init_head=True)
        return cfg

    def augment_config(self) -> AugmentConfig:
        section = self.section("augmentation")
        return AugmentConfig(
            enabled=bool(section["enabled"]),
            shift_ms=float(section["shift_ms"]),
            noise_prob=float(section["noise_prob"]),
            noise_max_gain=float(section["noise_max_gain"]),
        )

    def split_fractions(self) -> Tuple[float, float, float]:
        values = [float(v) for v in self.get("data.split_fractions")]
        if len(values) != 3:
            raise ConfigError(f"data.split_fractions needs three values, got {values}")
        return values[0], values[1], values[2]

    def validate(self) -> List[str]:
        """
        Check every typed view and enumerated value.

        Returns:
            List[str]: Problems found, empty when the configuration is valid
        """
        problems: List[str] = []
        checks = [
            ("framing", self.framing),
            ("training", self.train_config),
            ("augmentation", self.augment_config),
            ("data.split_fractions", self.split_fractions),
        ]
        for label, check in checks:
            try:
                check()
            except (ConfigError, ValueError) as e:
                problems.append(f"{label}: {str(e)}")

        enums = {
            "framing.spectrogram_window": ("hann", "rectangular"),
            "filterbank.mel_scale": ("htk", "slaney"),
            "filterbank.init_scale": ("mel", "linear"),
            "gammachirp.cochleagram_mode": ("parseval_rect", "parseval_hann", "maxpool"),
            "experiments.fusion_mode": ("stack", "concat"),
            "training.precision": ("float32", "float64"),
            "experiments.preset": tuple(self.get("backend.presets")),
        }
        for key, allowed in enums.items():
            try:
                value = self.get(key)
            except ConfigError as e:
                problems.append(str(e))
                continue
            if value not in allowed:
                problems.append(f"{key}: {value!r} not in {list(allowed)}")

        for name in self.get("backend.presets"):
            try:
                self.resnet_config(name, 11, (98, 40))
            except (ConfigError, ValueError, TypeError) as e:
                problems.append(f"backend.presets.{name}: {str(e)}")
        return problems

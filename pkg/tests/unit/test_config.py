from pathlib import Path

import pytest

from fbkws.config import CONFIG_ENV_VAR, DEFAULTS, FbkwsConfig, deep_merge
from fbkws.exceptions import ConfigError

REPO_CONFIG = Path(__file__).resolve().parents[2] / "config" / "fbkws.yaml"


@pytest.fixture(autouse=True)
def no_env_config(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)


def test_defaults() -> None:
    config = FbkwsConfig()

    assert config.config_path is None
    framing = config.framing()
    assert (framing.frame_length, framing.hop, framing.sample_rate) == (480, 160, 16000)
    assert config.get("filterbank.mel_scale") == "slaney"
    assert config.train_config().epochs == 26
    assert config.train_config(epochs=3, batch_size=None).epochs == 3
    assert config.split_fractions() == (0.8, 0.1, 0.1)
    assert config.validate() == []


def test_shipped_config_matches_defaults() -> None:
    assert FbkwsConfig(str(REPO_CONFIG)).as_dict() == DEFAULTS


def test_yaml_is_merged_over_defaults(tmp_path: Path) -> None:
    # Setup
    path = tmp_path / "fbkws.yaml"
    path.write_text("training:\n  epochs: 5\nexperiments:\n  preset: small\n")

    # Execute
    config = FbkwsConfig(str(path), overrides={"training": {"batch_size": 16}})

    # Assert
    assert config.get("training.epochs") == 5
    assert config.get("training.batch_size") == 16
    assert config.get("training.learning_rate") == 1e-3
    assert config.get("experiments.preset") == "small"
    assert DEFAULTS["training"]["epochs"] == 26


def test_env_var_selects_file(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    path = tmp_path / "env.yaml"
    path.write_text("logging:\n  level: DEBUG\n")
    monkeypatch.setenv(CONFIG_ENV_VAR, str(path))

    config = FbkwsConfig()

    assert config.config_path == str(path)
    assert config.get("logging.level") == "DEBUG"


@pytest.mark.parametrize(
    "content", [None, "training: [unclosed\n", "- just\n- a list\n"]
)
def test_bad_files_raise(tmp_path: Path, content: str) -> None:
    path = tmp_path / "bad.yaml"
    if content is not None:
        path.write_text(content)
    with pytest.raises(ConfigError):
        FbkwsConfig(str(path))


def test_missing_key() -> None:
    config = FbkwsConfig.from_dict({})
    with pytest.raises(ConfigError, match="training.nope"):
        config.get("training.nope")
    with pytest.raises(ConfigError):
        config.section("training.epochs")


def test_validate_reports_each_problem() -> None:
    config = FbkwsConfig.from_dict(
        {
            "filterbank": {"mel_scale": "bark"},
            "training": {"precision": "float16"},
            "experiments": {"preset": "medium"},
            "data": {"split_fractions": [0.5, 0.5]},
        }
    )

    problems = config.validate()

    assert len(problems) == 4
    assert any(p.startswith("filterbank.mel_scale") for p in problems)
    assert any(p.startswith("training.precision") for p in problems)
    assert any(p.startswith("experiments.preset") for p in problems)
    assert any(p.startswith("data.split_fractions") for p in problems)


def test_resnet_presets_come_from_config() -> None:
    config = FbkwsConfig.from_dict(
        {"backend": {"presets": {"tiny": {"n_res_blocks": 1, "channels": 4, "dilation": False}}}}
    )

    cfg = config.resnet_config("tiny", 3, (98, 40))

    assert (cfg.n_res_blocks, cfg.channels, cfg.n_classes) == (1, 4, 3)
    assert config.resnet_config("small", 11, (98, 40)).channels == 19
    with pytest.raises(ConfigError):
        config.resnet_config("huge", 11, (98, 40))


def test_deep_merge_does_not_alias() -> None:
    base = {"a": {"b": [1, 2]}}
    merged = deep_merge(base, {"a": {"c": 3}})
    merged["a"]["b"].append(3)
    assert base == {"a": {"b": [1, 2]}}
    assert merged["a"]["c"] == 3

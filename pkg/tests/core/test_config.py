from pathlib import Path

from dotenv import dotenv_values
import pytest

from app.core.config import RUN_CONFIG_KEYS, Config, RunConfig
from app.core.exceptions import InvalidConfigurationError

DEFAULT_ENV = Path(__file__).resolve().parents[2] / "configs" / "default.env"


def test_config_loads_logging_environment_variables(monkeypatch):
    """Logging settings are read from the environment at access time."""
    monkeypatch.setenv("LOG_LEVEL", "debug")
    monkeypatch.setenv("ENABLE_STRUCTURED_LOGGING", "true")

    logging_config = Config.get_logging_config()

    assert logging_config.level == "DEBUG"
    assert logging_config.enable_structured is True


def test_config_invalid_log_level_falls_back_to_info(monkeypatch):
    monkeypatch.setenv("LOG_LEVEL", "chatty")
    assert Config.get_logging_config().level == "INFO"


def test_environment_overrides_only_for_set_variables(monkeypatch):
    monkeypatch.setenv("DRO_WORKERS", "4")
    monkeypatch.delenv("DRO_ENUMERATION_CAP", raising=False)

    assert Config.workers() == 4
    assert Config.environment_overrides() == ["TRAIN_WORKERS=4"]


def test_from_values_without_keys_gives_defaults():
    assert RunConfig.from_values({}) == RunConfig()


def test_from_values_routes_keys_to_sections():
    config = RunConfig.from_values({
        "TASK_N": "7",
        "FEATURE_MODE": "Lexical",
        "TRAIN_M": "4",
        "SELECTOR_LEARNING_RATE": "0.2",
        "GENERATOR_MOMENTUM": "0.5",
        "SWEEP_M_VALUES": "1, 3,5",
        "PATH_CHECKPOINT": "runs/x/best.json",
        "PATH_DATASET": "",
    })

    assert config.task.n == 7
    assert config.feature.mode == "lexical"
    assert config.train.m == 4
    assert config.train.selector_optimizer.learning_rate == 0.2
    assert config.train.generator_optimizer.momentum == 0.5
    assert config.train.generator_optimizer.learning_rate == 0.05
    assert config.sweep.m_values == (1, 3, 5)
    assert config.paths.checkpoint == Path("runs/x/best.json")
    assert config.paths.dataset is None


def test_unknown_keys_are_rejected():
    with pytest.raises(InvalidConfigurationError) as exc_info:
        RunConfig.from_values({"TRAIN_M": "4", "TRAIN_LEARNING_RATE": "0.1"})

    assert exc_info.value.error_code == "CONFIG_UNKNOWN_KEY"
    assert exc_info.value.context["keys"] == ["TRAIN_LEARNING_RATE"]


def test_unparseable_values_are_reported():
    with pytest.raises(InvalidConfigurationError) as exc_info:
        RunConfig.from_values({"TRAIN_M": "eight", "TRAIN_ESTEP_MODE": "annealed"})

    assert exc_info.value.error_code == "CONFIG_PARSE_ERROR"
    assert "TRAIN_M" in str(exc_info.value)
    assert "TRAIN_ESTEP_MODE" in str(exc_info.value)


def test_range_validation_lists_every_violation():
    with pytest.raises(InvalidConfigurationError) as exc_info:
        RunConfig.from_values({"TRAIN_M": "0", "SELECTOR_MOMENTUM": "1.0", "TASK_HOPS": "4"})

    message = str(exc_info.value)
    assert exc_info.value.error_code == "CONFIG_RANGE_ERROR"
    assert "TRAIN_M must be positive" in message
    assert "SELECTOR_MOMENTUM must be in [0, 1)" in message
    assert "TASK_HOPS must be between 1 and 3" in message


def test_answer_dimension_below_four_is_rejected():
    with pytest.raises(InvalidConfigurationError, match="TRAIN_ANSWER_DIMENSION"):
        RunConfig.from_values({"TRAIN_ANSWER_DIMENSION": "3"})


def test_load_applies_overrides_after_file(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("# comment\nTRAIN_M=4\nTRAIN_K=3\n", encoding="utf-8")

    config = RunConfig.load(path, ["TRAIN_M=6"])

    assert config.train.m == 6
    assert config.train.k == 3


def test_load_missing_file(tmp_path):
    with pytest.raises(InvalidConfigurationError) as exc_info:
        RunConfig.load(tmp_path / "absent.env")
    assert exc_info.value.error_code == "CONFIG_FILE_MISSING"


def test_load_rejects_malformed_override():
    with pytest.raises(InvalidConfigurationError) as exc_info:
        RunConfig.load(None, ["TRAIN_M"])
    assert exc_info.value.error_code == "CONFIG_OVERRIDE_MALFORMED"


def test_to_values_round_trips_selected_sections():
    config = RunConfig.from_values({"TASK_N": "9", "TASK_FEATURE_NOISE": "0.25", "FEATURE_MODE": "lexical", "TRAIN_M": "3"})

    values = config.to_values(("task", "feature"))
    restored = RunConfig.from_values(values)

    assert all(key.startswith(("TASK_", "FEATURE_")) for key in values)
    assert restored.task == config.task
    assert restored.feature == config.feature
    assert restored.train.m == RunConfig().train.m


def test_default_env_documents_every_key():
    values = dotenv_values(DEFAULT_ENV)

    assert set(values) == set(RUN_CONFIG_KEYS)
    assert RunConfig.load(DEFAULT_ENV) == RunConfig()


def test_update_flags_parse_and_cannot_both_be_off():
    config = RunConfig.from_values({"TRAIN_UPDATE_SELECTOR": "no"})
    assert config.train.update_selector is False
    assert config.train.update_generator is True

    with pytest.raises(InvalidConfigurationError, match="cannot both be false"):
        RunConfig.from_values({"TRAIN_UPDATE_SELECTOR": "false", "TRAIN_UPDATE_GENERATOR": "0"})

# ABOUTME: Configuration management: environment settings plus the key-value run configuration file
# ABOUTME: Declares every run key with type, default and doc; rejects unknown keys and bad ranges

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field, replace
import os
from pathlib import Path
from typing import Any, Literal

from dotenv import dotenv_values, load_dotenv

from app.core.exceptions import InvalidConfigurationError
from app.models.types import AnswerFeatureSpec, FeatureSpec, SelectionConfig

load_dotenv()


class EnvVar:
    """Descriptor for environment variables that are dynamically loaded."""
    def __init__(self, env_name: str, default: str) -> None:
        self.env_name = env_name
        self.default = default

    def __get__(self, instance: Any, owner: Any) -> str:
        return os.getenv(self.env_name, self.default)


def _parse_bool(raw: str) -> bool:
    return raw.strip().lower() in ("true", "1", "yes")


@dataclass(frozen=True)
class LoggingConfig:
    """Logging configuration schema."""
    level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
    format: str
    enable_structured: bool


class Config:
    """Process-level settings read from the environment."""

    LOG_LEVEL = EnvVar("LOG_LEVEL", "INFO")
    LOG_FORMAT = EnvVar("LOG_FORMAT", "%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    ENABLE_STRUCTURED_LOGGING = EnvVar("ENABLE_STRUCTURED_LOGGING", "false")
    DRO_WORKERS = EnvVar("DRO_WORKERS", "1")
    DRO_ENUMERATION_CAP = EnvVar("DRO_ENUMERATION_CAP", "50000")

    @classmethod
    def get_logging_config(cls) -> LoggingConfig:
        """Get validated logging configuration schema."""
        level = cls.LOG_LEVEL.upper()
        if level not in ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]:
            level = "INFO"

        return LoggingConfig(
            level=level,  # type: ignore[arg-type]
            format=cls.LOG_FORMAT,
            enable_structured=_parse_bool(cls.ENABLE_STRUCTURED_LOGGING)
        )

    @classmethod
    def workers(cls) -> int:
        return max(1, int(cls.DRO_WORKERS))

    @classmethod
    def enumeration_cap(cls) -> int:
        return int(cls.DRO_ENUMERATION_CAP)

    @classmethod
    def environment_overrides(cls) -> list[str]:
        """Run-config overrides for the worker count and enumeration cap when set in the environment."""
        overrides = []
        if os.getenv("DRO_WORKERS"):
            overrides.append(f"TRAIN_WORKERS={cls.workers()}")
        if os.getenv("DRO_ENUMERATION_CAP"):
            overrides.append(f"TRAIN_ENUMERATION_CAP={cls.enumeration_cap()}")
        return overrides


config = Config()


@dataclass(frozen=True)
class OptimizerConfig:
    """SGD with decoupled weight decay and optional momentum."""
    learning_rate: float = 0.05
    weight_decay: float = 0.01
    momentum: float = 0.0
    inner_steps: int = 1


@dataclass(frozen=True)
class TaskSpec:
    """Synthetic multi-hop task generator settings."""
    num_instances: int = 250
    n: int = 20
    hops: int = 1
    num_distractor_answers: int = 4
    vocab_size: int = 10000
    feature_noise: float = 0.5
    seed: int = 0
    validation_fraction: float = 0.2


@dataclass(frozen=True)
class TrainConfig:
    """Training loop settings."""
    max_iterations: int = 5
    m: int = 8
    k: int = 5
    selector_optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    generator_optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    estep_mode: Literal["sampled", "exact"] = "sampled"
    early_stop_metric: Literal["f1", "em", "recall_at_k"] = "f1"
    patience: int = 1
    seed: int = 0
    batch_size: int = 16
    init_scale: float = 0.0
    answer_dimension: int = 5
    workers: int = 1
    enumeration_cap: int = 50000
    update_selector: bool = True
    update_generator: bool = True

    @property
    def selection(self) -> SelectionConfig:
        return SelectionConfig(k=self.k)

    @property
    def answer_spec(self) -> AnswerFeatureSpec:
        return AnswerFeatureSpec(dimension=self.answer_dimension)


@dataclass(frozen=True)
class OracleConfig:
    """Sizes of the checks run by the oracle validation suite."""
    num_instances: int = 20
    n: int = 5
    k: int = 2
    mc_samples: int = 20000
    random_q: int = 100
    variance_instances: int = 100
    em_instances: int = 20
    em_n: int = 4
    em_k: int = 2
    em_inner_steps: int = 200
    em_iterations: int = 5
    seed: int = 0


@dataclass(frozen=True)
class SweepConfig:
    """Sampling numbers compared by the sweep command."""
    m_values: tuple[int, ...] = (1, 2, 4, 6, 8, 10, 12, 14)


@dataclass(frozen=True)
class PathConfig:
    """Input and output locations."""
    output_dir: Path = Path("runs/default")
    train: Path = Path("runs/default/data/train.jsonl")
    validation: Path = Path("runs/default/data/validation.jsonl")
    checkpoint: Path | None = None
    dataset: Path | None = None


@dataclass(frozen=True)
class ConfigKey:
    """One documented run-configuration key."""
    section: str
    attribute: str
    parse: Callable[[str], Any]
    doc: str


def _parse_flag(raw: str) -> bool:
    value = raw.strip().lower()
    if value not in ("true", "false", "1", "0", "yes", "no"):
        raise ValueError("expected true or false")
    return _parse_bool(value)


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def _parse_optional_path(raw: str) -> Path | None:
    return Path(raw) if raw.strip() else None


def _choice(*allowed: str) -> Callable[[str], str]:
    def parse(raw: str) -> str:
        value = raw.strip().lower()
        if value not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}")
        return value
    return parse


RUN_CONFIG_KEYS: dict[str, ConfigKey] = {
    # Synthetic task
    "TASK_NUM_INSTANCES": ConfigKey("task", "num_instances", int, "Instances generated by gen (train + validation)"),
    "TASK_N": ConfigKey("task", "n", int, "Candidate documents per instance"),
    "TASK_HOPS": ConfigKey("task", "hops", int, "Evidence documents chained by bridge terms (1-3)"),
    "TASK_NUM_DISTRACTOR_ANSWERS": ConfigKey("task", "num_distractor_answers", int, "Wrong answers per instance, each planted in a distractor document"),
    "TASK_VOCAB_SIZE": ConfigKey("task", "vocab_size", int, "Size of the synthetic term vocabulary"),
    "TASK_FEATURE_NOISE": ConfigKey("task", "feature_noise", float, "Std of Gaussian noise on the relevance feature"),
    "TASK_SEED": ConfigKey("task", "seed", int, "Seed of the task generator"),
    "TASK_VALIDATION_FRACTION": ConfigKey("task", "validation_fraction", float, "Share of generated instances written to the validation file"),
    # Features
    "FEATURE_DIMENSION": ConfigKey("feature", "dimension", int, "Selector feature dimension D"),
    "FEATURE_MODE": ConfigKey("feature", "mode", _choice("provided", "lexical"), "provided: read features from the dataset; lexical: compute when absent"),
    # Training
    "TRAIN_MAX_ITERATIONS": ConfigKey("train", "max_iterations", int, "Maximum EM iterations N"),
    "TRAIN_M": ConfigKey("train", "m", int, "Permutations sampled per instance in the E-step"),
    "TRAIN_K": ConfigKey("train", "k", int, "Documents per permutation"),
    "TRAIN_ESTEP_MODE": ConfigKey("train", "estep_mode", _choice("sampled", "exact"), "sampled: importance sampling; exact: enumerated posterior"),
    "TRAIN_EARLY_STOP_METRIC": ConfigKey("train", "early_stop_metric", _choice("f1", "em", "recall_at_k"), "Validation metric watched by early stopping"),
    "TRAIN_PATIENCE": ConfigKey("train", "patience", int, "Iterations without strict improvement before stopping"),
    "TRAIN_SEED": ConfigKey("train", "seed", int, "Run seed; every random source is derived from it"),
    "TRAIN_BATCH_SIZE": ConfigKey("train", "batch_size", int, "Instances per M-step gradient batch"),
    "TRAIN_INIT_SCALE": ConfigKey("train", "init_scale", float, "Std of the Gaussian parameter initialization (0 = zeros)"),
    "TRAIN_ANSWER_DIMENSION": ConfigKey("train", "answer_dimension", int, "Generator feature dimension G"),
    "TRAIN_WORKERS": ConfigKey("train", "workers", int, "Threads for E-step and evaluation (results do not depend on it)"),
    "TRAIN_ENUMERATION_CAP": ConfigKey("train", "enumeration_cap", int, "Largest permutation space the exact oracle enumerates"),
    "TRAIN_UPDATE_SELECTOR": ConfigKey("train", "update_selector", _parse_flag, "false freezes the selector (generator-only ablation)"),
    "TRAIN_UPDATE_GENERATOR": ConfigKey("train", "update_generator", _parse_flag, "false freezes the generator (selector-only ablation)"),
    # Optimizers
    "SELECTOR_LEARNING_RATE": ConfigKey("selector_optimizer", "learning_rate", float, "Selector step size"),
    "SELECTOR_WEIGHT_DECAY": ConfigKey("selector_optimizer", "weight_decay", float, "Selector decoupled weight decay"),
    "SELECTOR_MOMENTUM": ConfigKey("selector_optimizer", "momentum", float, "Selector momentum in [0, 1)"),
    "SELECTOR_INNER_STEPS": ConfigKey("selector_optimizer", "inner_steps", int, "Selector gradient steps per batch and M-step"),
    "GENERATOR_LEARNING_RATE": ConfigKey("generator_optimizer", "learning_rate", float, "Generator step size"),
    "GENERATOR_WEIGHT_DECAY": ConfigKey("generator_optimizer", "weight_decay", float, "Generator decoupled weight decay"),
    "GENERATOR_MOMENTUM": ConfigKey("generator_optimizer", "momentum", float, "Generator momentum in [0, 1)"),
    "GENERATOR_INNER_STEPS": ConfigKey("generator_optimizer", "inner_steps", int, "Generator gradient steps per batch and M-step"),
    # Oracle suite
    "ORACLE_NUM_INSTANCES": ConfigKey("oracle", "num_instances", int, "Random instances for unbiasedness and ELBO checks"),
    "ORACLE_N": ConfigKey("oracle", "n", int, "Pool size of oracle instances"),
    "ORACLE_K": ConfigKey("oracle", "k", int, "Permutation length of oracle instances"),
    "ORACLE_MC_SAMPLES": ConfigKey("oracle", "mc_samples", int, "Monte Carlo draws per instance for unbiasedness"),
    "ORACLE_RANDOM_Q": ConfigKey("oracle", "random_q", int, "Random variational distributions per instance for the Jensen check"),
    "ORACLE_VARIANCE_INSTANCES": ConfigKey("oracle", "variance_instances", int, "Random instances for the variance identities"),
    "ORACLE_EM_INSTANCES": ConfigKey("oracle", "em_instances", int, "Training instances of the exact-EM monotonicity run"),
    "ORACLE_EM_N": ConfigKey("oracle", "em_n", int, "Pool size of the exact-EM run"),
    "ORACLE_EM_K": ConfigKey("oracle", "em_k", int, "Permutation length of the exact-EM run"),
    "ORACLE_EM_INNER_STEPS": ConfigKey("oracle", "em_inner_steps", int, "Gradient steps per M-step in the exact-EM run"),
    "ORACLE_EM_ITERATIONS": ConfigKey("oracle", "em_iterations", int, "Iterations of the exact-EM run"),
    "ORACLE_SEED": ConfigKey("oracle", "seed", int, "Seed of the oracle suite"),
    # Sweep
    "SWEEP_M_VALUES": ConfigKey("sweep", "m_values", _parse_int_tuple, "Comma-separated sampling numbers compared by sweep"),
    # Paths
    "PATH_OUTPUT_DIR": ConfigKey("paths", "output_dir", Path, "Directory for checkpoints, traces and reports"),
    "PATH_TRAIN": ConfigKey("paths", "train", Path, "Training dataset file"),
    "PATH_VALIDATION": ConfigKey("paths", "validation", Path, "Validation dataset file"),
    "PATH_CHECKPOINT": ConfigKey("paths", "checkpoint", _parse_optional_path, "Checkpoint to evaluate or resume from"),
    "PATH_DATASET": ConfigKey("paths", "dataset", _parse_optional_path, "Dataset evaluated by eval or checked by oracle"),
}


@dataclass(frozen=True)
class RunConfig:
    """Everything one command needs, loaded from a single key-value file."""
    task: TaskSpec = field(default_factory=TaskSpec)
    feature: FeatureSpec = field(default_factory=lambda: FeatureSpec(dimension=16, mode="provided"))
    train: TrainConfig = field(default_factory=TrainConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    paths: PathConfig = field(default_factory=PathConfig)

    @classmethod
    def from_values(cls, values: Mapping[str, str | None]) -> "RunConfig":
        """Build a config from raw key-value strings; unknown keys are rejected."""
        unknown = sorted(key for key in values if key not in RUN_CONFIG_KEYS)
        if unknown:
            raise InvalidConfigurationError(
                f"Unknown configuration keys: {', '.join(unknown)}",
                error_code="CONFIG_UNKNOWN_KEY",
                context={"keys": unknown},
            )

        sections: dict[str, dict[str, Any]] = {}
        errors = []
        for key, raw in values.items():
            spec = RUN_CONFIG_KEYS[key]
            try:
                sections.setdefault(spec.section, {})[spec.attribute] = spec.parse(raw or "")
            except ValueError as e:
                errors.append(f"{key}={raw!r}: {e}")
        if errors:
            raise InvalidConfigurationError(
                f"Configuration values could not be parsed: {'; '.join(errors)}",
                error_code="CONFIG_PARSE_ERROR",
            )

        base = cls()
        selector_opt = replace(base.train.selector_optimizer, **sections.pop("selector_optimizer", {}))
        generator_opt = replace(base.train.generator_optimizer, **sections.pop("generator_optimizer", {}))
        train = replace(
            base.train,
            selector_optimizer=selector_opt,
            generator_optimizer=generator_opt,
            **sections.pop("train", {}),
        )
        feature_values = sections.pop("feature", {})
        feature = FeatureSpec(
            dimension=feature_values.get("dimension", base.feature.dimension),
            mode=feature_values.get("mode", base.feature.mode),
        )
        run_config = cls(
            task=replace(base.task, **sections.pop("task", {})),
            feature=feature,
            train=train,
            oracle=replace(base.oracle, **sections.pop("oracle", {})),
            sweep=replace(base.sweep, **sections.pop("sweep", {})),
            paths=replace(base.paths, **sections.pop("paths", {})),
        )
        run_config.validate_numeric_ranges()
        return run_config

    @classmethod
    def load(cls, path: Path | None, overrides: list[str] | None = None) -> "RunConfig":
        """Read ``path`` (dotenv format) and apply ``KEY=VALUE`` overrides on top."""
        values: dict[str, str | None] = {}
        if path is not None:
            if not path.is_file():
                raise InvalidConfigurationError(
                    "Configuration file not found",
                    error_code="CONFIG_FILE_MISSING",
                    context={"path": str(path)},
                )
            values.update(dotenv_values(path))
        for override in overrides or []:
            key, sep, value = override.partition("=")
            if not sep:
                raise InvalidConfigurationError(
                    f"Override '{override}' is not KEY=VALUE",
                    error_code="CONFIG_OVERRIDE_MALFORMED",
                )
            values[key.strip()] = value.strip()
        return cls.from_values(values)

    def to_values(self, sections: tuple[str, ...]) -> dict[str, str]:
        """Render the keys of ``sections`` back into the strings ``from_values`` parses."""
        values = {}
        for key, spec in RUN_CONFIG_KEYS.items():
            if spec.section not in sections:
                continue
            owner = getattr(self.train, spec.section) if spec.section.endswith("_optimizer") else getattr(self, spec.section)
            value = getattr(owner, spec.attribute)
            if value is None:
                values[key] = ""
            elif isinstance(value, tuple):
                values[key] = ",".join(str(v) for v in value)
            else:
                values[key] = str(value)
        return values

    def validate_numeric_ranges(self) -> bool:
        """Validate that numeric configuration values are within reasonable ranges."""
        validation_errors = []
        task, train = self.task, self.train

        if task.num_instances < 0:
            validation_errors.append("TASK_NUM_INSTANCES must be non-negative")
        if not (1 <= task.hops <= 3):
            validation_errors.append("TASK_HOPS must be between 1 and 3")
        if task.n < task.hops + 2:
            validation_errors.append("TASK_N must be at least TASK_HOPS + 2")
        if task.num_distractor_answers < 1:
            validation_errors.append("TASK_NUM_DISTRACTOR_ANSWERS must be positive")
        if task.feature_noise < 0:
            validation_errors.append("TASK_FEATURE_NOISE must be non-negative")
        if not (0.0 <= task.validation_fraction < 1.0):
            validation_errors.append("TASK_VALIDATION_FRACTION must be in [0, 1)")

        if train.max_iterations < 1:
            validation_errors.append("TRAIN_MAX_ITERATIONS must be positive")
        if train.m < 1:
            validation_errors.append("TRAIN_M must be positive")
        if train.k < 1:
            validation_errors.append("TRAIN_K must be positive")
        if train.patience < 1:
            validation_errors.append("TRAIN_PATIENCE must be positive")
        if train.batch_size < 1:
            validation_errors.append("TRAIN_BATCH_SIZE must be positive")
        if train.init_scale < 0:
            validation_errors.append("TRAIN_INIT_SCALE must be non-negative")
        if train.answer_dimension < 4:
            validation_errors.append("TRAIN_ANSWER_DIMENSION must be at least 4")
        if train.workers < 1:
            validation_errors.append("TRAIN_WORKERS must be positive")
        if train.enumeration_cap < 1:
            validation_errors.append("TRAIN_ENUMERATION_CAP must be positive")
        if not (train.update_selector or train.update_generator):
            validation_errors.append("TRAIN_UPDATE_SELECTOR and TRAIN_UPDATE_GENERATOR cannot both be false")

        for prefix, opt in (("SELECTOR", train.selector_optimizer), ("GENERATOR", train.generator_optimizer)):
            if opt.learning_rate <= 0:
                validation_errors.append(f"{prefix}_LEARNING_RATE must be positive")
            if opt.weight_decay < 0:
                validation_errors.append(f"{prefix}_WEIGHT_DECAY must be non-negative")
            if not (0.0 <= opt.momentum < 1.0):
                validation_errors.append(f"{prefix}_MOMENTUM must be in [0, 1)")
            if opt.inner_steps < 1:
                validation_errors.append(f"{prefix}_INNER_STEPS must be positive")

        oracle = self.oracle
        if oracle.k > oracle.n or oracle.em_k > oracle.em_n:
            validation_errors.append("ORACLE_K / ORACLE_EM_K must not exceed the pool size")
        if oracle.mc_samples < 2:
            validation_errors.append("ORACLE_MC_SAMPLES must be at least 2")

        if not self.sweep.m_values or any(m < 1 for m in self.sweep.m_values):
            validation_errors.append("SWEEP_M_VALUES must list positive integers")

        if validation_errors:
            raise InvalidConfigurationError(
                f"Configuration validation errors: {'; '.join(validation_errors)}",
                error_code="CONFIG_RANGE_ERROR",
            )

        return True

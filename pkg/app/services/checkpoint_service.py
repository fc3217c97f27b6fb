# ABOUTME: Versioned JSON checkpoints of selector and generator parameters
# ABOUTME: Fingerprinted by the configuration that fixes parameter shapes; floats round-trip exactly

import hashlib
import json
from pathlib import Path
from typing import Any

from app.core.config import TrainConfig
from app.core.exceptions import (
    CheckpointCorruptError,
    CheckpointFingerprintError,
    DROError,
    wrap_external_error,
)
from app.core.structured_logging import get_logger, log_service_operation
from app.models.reports import Checkpoint, EarlyStopState
from app.models.types import FeatureSpec, GeneratorParams, SelectorParams

logger = get_logger(__name__)

CHECKPOINT_FORMAT = "dro-rag-checkpoint"
CHECKPOINT_VERSION = 1


def fingerprint(k: int, feature_dimension: int, feature_mode: str, answer_dimension: int) -> str:
    """SHA-256 over the settings a checkpoint is only valid under."""
    payload = json.dumps(
        {
            "k": k,
            "feature_dimension": feature_dimension,
            "feature_mode": feature_mode,
            "answer_dimension": answer_dimension,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def run_fingerprint(train: TrainConfig, feature: FeatureSpec) -> str:
    return fingerprint(train.k, feature.dimension, feature.mode, train.answer_dimension)


def save_checkpoint(ckpt: Checkpoint, path: Path) -> None:
    """Write ``ckpt`` as JSON; the file is replaced atomically."""
    path = Path(path)
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "iteration": ckpt.iteration,
        "fingerprint": ckpt.fingerprint,
        "selector": [float(v) for v in ckpt.selector.weights],
        "generator": [float(v) for v in ckpt.generator.weights],
    }
    if ckpt.early_stop is not None:
        state = ckpt.early_stop
        document["early_stop"] = {
            "best_value": float(state.best_value),
            "best_iteration": state.best_iteration,
            "stale": state.stale,
            "selector": [float(v) for v in state.best_selector.weights],
            "generator": [float(v) for v in state.best_generator.weights],
        }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        staging = path.with_suffix(path.suffix + ".tmp")
        staging.write_text(json.dumps(document, indent=2), encoding="utf-8")
        staging.replace(path)
    except OSError as e:
        raise wrap_external_error(
            e, CheckpointCorruptError, "Checkpoint could not be written", "CHECKPOINT_WRITE_FAILED",
            {"path": str(path)},
        ) from e
    log_service_operation(logger, "checkpoint", "save", path=str(path), iteration=ckpt.iteration)


def _field(document: dict[str, Any], name: str, kind: type | tuple[type, ...], path: Path) -> Any:
    value = document.get(name)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise CheckpointCorruptError(
            f"Checkpoint field '{name}' is missing or malformed",
            error_code="CHECKPOINT_FIELD_INVALID",
            context={"path": str(path), "field": name},
        )
    return value


def _early_stop(document: dict[str, Any], path: Path) -> EarlyStopState | None:
    if "early_stop" not in document:
        return None
    section = _field(document, "early_stop", dict, path)
    return EarlyStopState(
        best_value=float(_field(section, "best_value", (int, float), path)),
        best_iteration=_field(section, "best_iteration", int, path),
        best_selector=SelectorParams([float(v) for v in _field(section, "selector", list, path)]),
        best_generator=GeneratorParams([float(v) for v in _field(section, "generator", list, path)]),
        stale=_field(section, "stale", int, path),
    )


def load_checkpoint(path: Path, expected_fingerprint: str | None = None) -> Checkpoint:
    """Read a checkpoint written by ``save_checkpoint``.

    Raises:
        CheckpointCorruptError: Unreadable file, unknown format/version or malformed fields
        CheckpointFingerprintError: ``expected_fingerprint`` given and different
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise wrap_external_error(
            e, CheckpointCorruptError, "Checkpoint could not be read", "CHECKPOINT_UNREADABLE",
            {"path": str(path)},
        ) from e

    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointCorruptError(
            "File is not a checkpoint", error_code="CHECKPOINT_FORMAT", context={"path": str(path)},
        )
    if document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointCorruptError(
            "Unsupported checkpoint version",
            error_code="CHECKPOINT_VERSION",
            context={"path": str(path), "version": document.get("version")},
        )

    stored = _field(document, "fingerprint", str, path)
    if expected_fingerprint is not None and stored != expected_fingerprint:
        raise CheckpointFingerprintError(
            "Checkpoint was produced under an incompatible configuration",
            error_code="CHECKPOINT_FINGERPRINT_MISMATCH",
            context={"path": str(path), "stored": stored, "expected": expected_fingerprint},
        )

    selector = _field(document, "selector", list, path)
    generator = _field(document, "generator", list, path)
    iteration = _field(document, "iteration", int, path)
    try:
        checkpoint = Checkpoint(
            selector=SelectorParams([float(v) for v in selector]),
            generator=GeneratorParams([float(v) for v in generator]),
            iteration=iteration,
            fingerprint=stored,
            early_stop=_early_stop(document, path),
        )
    except (TypeError, ValueError, DROError) as e:
        raise wrap_external_error(
            e, CheckpointCorruptError, "Checkpoint parameters are malformed", "CHECKPOINT_PARAMS_INVALID",
            {"path": str(path)},
        ) from e

    log_service_operation(logger, "checkpoint", "load", path=str(path), iteration=checkpoint.iteration)
    return checkpoint

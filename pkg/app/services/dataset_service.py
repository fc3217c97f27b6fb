# ABOUTME: Newline-delimited JSON dataset reader and writer with invariant validation
# ABOUTME: Rejects unknown fields, reports parse errors by line and computes lexical features on load

import json
from pathlib import Path
from typing import Any

from app.core.error_handling import dataset_error_handler
from app.core.exceptions import DatasetParseError, DatasetValidationError, DROError
from app.core.structured_logging import get_logger, log_service_operation
from app.models.types import Candidate, FeatureSpec, Instance
from app.utils.features import featurize

logger = get_logger(__name__)

INSTANCE_FIELDS = frozenset({"id", "query", "answer", "answer_candidates", "candidates"})
REQUIRED_CANDIDATE_FIELDS = frozenset({"doc_id", "text"})
CANDIDATE_FIELDS = REQUIRED_CANDIDATE_FIELDS | {"features"}


def _field_error(instance_id: Any, field: str, message: str) -> DatasetValidationError:
    return DatasetValidationError(
        message,
        error_code="INSTANCE_INVALID",
        context={"instance_id": instance_id, "field": field},
    )


def _check_fields(record: dict[str, Any], allowed: frozenset[str], required: frozenset[str], instance_id: Any, prefix: str) -> None:
    unknown = sorted(set(record) - allowed)
    if unknown:
        raise _field_error(instance_id, f"{prefix}{unknown[0]}", f"Unknown field '{prefix}{unknown[0]}'")
    missing = sorted(required - set(record))
    if missing:
        raise _field_error(instance_id, f"{prefix}{missing[0]}", f"Missing field '{prefix}{missing[0]}'")


def _candidate_from_record(record: Any, instance_id: Any, spec: FeatureSpec, query: str) -> Candidate:
    if not isinstance(record, dict):
        raise _field_error(instance_id, "candidates", "Candidate must be an object")
    _check_fields(record, CANDIDATE_FIELDS, REQUIRED_CANDIDATE_FIELDS, instance_id, "candidates.")
    doc_id, text = record["doc_id"], record["text"]
    if not isinstance(doc_id, str) or not isinstance(text, str):
        raise _field_error(instance_id, "candidates.doc_id", "doc_id and text must be strings")

    features = record.get("features")
    if features is None:
        if spec.mode == "provided":
            raise _field_error(instance_id, "candidates.features", "Features required in provided mode")
        return Candidate(doc_id, text, tuple(float(v) for v in featurize(query, text, spec)))

    if not isinstance(features, list) or not all(isinstance(v, int | float) and not isinstance(v, bool) for v in features):
        raise _field_error(instance_id, "candidates.features", "Features must be a list of numbers")
    if len(features) != spec.dimension:
        raise _field_error(
            instance_id, "candidates.features",
            f"Feature vector of {doc_id} has length {len(features)}, expected {spec.dimension}",
        )
    return Candidate(doc_id, text, tuple(float(v) for v in features))


def instance_from_record(record: Any, spec: FeatureSpec) -> Instance:
    """Validate one decoded record and build the Instance."""
    if not isinstance(record, dict):
        raise _field_error(None, "record", "Record must be an object")
    instance_id = record.get("id")
    _check_fields(record, INSTANCE_FIELDS, INSTANCE_FIELDS, instance_id, "")
    if not isinstance(instance_id, str):
        raise _field_error(instance_id, "id", "id must be a string")
    for name in ("query", "answer"):
        if not isinstance(record[name], str):
            raise _field_error(instance_id, name, f"{name} must be a string")
    answers = record["answer_candidates"]
    if not isinstance(answers, list) or not all(isinstance(a, str) for a in answers):
        raise _field_error(instance_id, "answer_candidates", "answer_candidates must be a list of strings")
    if len(answers) < 2:
        raise _field_error(instance_id, "answer_candidates", "answer_candidates needs at least two entries")
    if not isinstance(record["candidates"], list):
        raise _field_error(instance_id, "candidates", "candidates must be a list")

    candidates = tuple(
        _candidate_from_record(candidate, instance_id, spec, record["query"])
        for candidate in record["candidates"]
    )
    return Instance(
        id=instance_id,
        query=record["query"],
        answer=record["answer"],
        answer_candidates=tuple(answers),
        candidates=candidates,
    )


def instance_to_record(instance: Instance) -> dict[str, Any]:
    """Inverse of ``instance_from_record``; features are omitted when absent."""
    candidates = []
    for candidate in instance.candidates:
        entry: dict[str, Any] = {"doc_id": candidate.doc_id, "text": candidate.text}
        if candidate.features is not None:
            entry["features"] = list(candidate.features)
        candidates.append(entry)
    return {
        "id": instance.id,
        "query": instance.query,
        "answer": instance.answer,
        "answer_candidates": list(instance.answer_candidates),
        "candidates": candidates,
    }


@dataset_error_handler
def load_dataset(path: Path, spec: FeatureSpec) -> list[Instance]:
    """Read one JSON instance per line and validate every invariant.

    Args:
        path: Dataset file (UTF-8, newline-delimited JSON)
        spec: Feature space the instances must live in

    Returns:
        Instances in file order

    Raises:
        DatasetParseError: Malformed JSON, with the 1-based line number
        DatasetValidationError: Invariant violation naming instance and field
    """
    instances: list[Instance] = []
    with Path(path).open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetParseError(
                    f"Malformed record on line {line_number}: {e.msg}",
                    error_code="DATASET_PARSE_ERROR",
                    context={"path": str(path), "line": line_number},
                    original_error=e,
                ) from e
            try:
                instances.append(instance_from_record(record, spec))
            except DROError as e:
                e.context.setdefault("line", line_number)
                raise

    log_service_operation(logger, "dataset", "load", path=str(path), instances=len(instances))
    return instances


@dataset_error_handler
def write_dataset(instances: list[Instance], path: Path) -> None:
    """Write instances in the format read by ``load_dataset``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for instance in instances:
            handle.write(json.dumps(instance_to_record(instance), ensure_ascii=False, sort_keys=True))
            handle.write("\n")
    log_service_operation(logger, "dataset", "write", path=str(path), instances=len(instances))

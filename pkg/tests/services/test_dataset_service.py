import json

import pytest

from app.core.exceptions import DatasetParseError, DatasetValidationError
from app.models.types import FeatureSpec
from app.services.dataset_service import instance_to_record, load_dataset, write_dataset
from app.utils.features import featurize
from tests.fixtures.task_fixtures import SMALL_FEATURE

LEXICAL = FeatureSpec(dimension=5, mode="lexical")


def _record(**overrides):
    record = {
        "id": "q1",
        "query": "capital of france",
        "answer": "paris",
        "answer_candidates": ["paris", "rome"],
        "candidates": [
            {"doc_id": "a", "text": "Paris is the capital of France"},
            {"doc_id": "b", "text": "Rome is in Italy"},
        ],
    }
    record.update(overrides)
    return record


def _write_lines(path, *records):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in records), encoding="utf-8")
    return path


def test_round_trip(tmp_path, task_instances):
    path = tmp_path / "data" / "train.jsonl"
    write_dataset(task_instances, path)

    assert load_dataset(path, SMALL_FEATURE) == task_instances
    assert len(path.read_text(encoding="utf-8").splitlines()) == len(task_instances)


def test_lexical_features_are_computed_on_load(tmp_path):
    path = _write_lines(tmp_path / "d.jsonl", _record())

    (instance,) = load_dataset(path, LEXICAL)

    assert instance.candidates[0].features == tuple(featurize("capital of france", "Paris is the capital of France", LEXICAL))


def test_computed_features_are_written_back(tmp_path):
    (instance,) = load_dataset(_write_lines(tmp_path / "d.jsonl", _record()), LEXICAL)
    assert "features" in instance_to_record(instance)["candidates"][0]


def test_blank_lines_are_skipped(tmp_path):
    path = _write_lines(tmp_path / "d.jsonl", _record(), "", _record(id="q2"))
    assert [i.id for i in load_dataset(path, LEXICAL)] == ["q1", "q2"]


def test_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    assert load_dataset(path, LEXICAL) == []


class TestInvalidDatasets:
    def test_malformed_json_reports_line(self, tmp_path):
        path = _write_lines(tmp_path / "d.jsonl", _record(), "{not json")

        with pytest.raises(DatasetParseError) as exc_info:
            load_dataset(path, LEXICAL)

        assert exc_info.value.error_code == "DATASET_PARSE_ERROR"
        assert exc_info.value.context["line"] == 2

    def test_unknown_field(self, tmp_path):
        path = _write_lines(tmp_path / "d.jsonl", _record(source="web"))

        with pytest.raises(DatasetValidationError) as exc_info:
            load_dataset(path, LEXICAL)

        assert exc_info.value.context == {"instance_id": "q1", "field": "source", "line": 1}

    def test_provided_mode_needs_features(self, tmp_path):
        path = _write_lines(tmp_path / "d.jsonl", _record())

        with pytest.raises(DatasetValidationError) as exc_info:
            load_dataset(path, FeatureSpec(dimension=5, mode="provided"))

        assert exc_info.value.context["field"] == "candidates.features"

    def test_wrong_feature_length(self, tmp_path):
        candidates = [{"doc_id": "a", "text": "paris", "features": [1.0, 2.0]}]
        path = _write_lines(tmp_path / "d.jsonl", _record(candidates=candidates))

        with pytest.raises(DatasetValidationError, match="length 2, expected 5"):
            load_dataset(path, LEXICAL)

    def test_gold_must_be_unique(self, tmp_path):
        path = _write_lines(tmp_path / "d.jsonl", _record(), _record(id="q2", answer_candidates=["paris", "paris"]))

        with pytest.raises(DatasetValidationError) as exc_info:
            load_dataset(path, LEXICAL)

        assert exc_info.value.error_code == "GOLD_NOT_UNIQUE"
        assert exc_info.value.context["line"] == 2

    def test_duplicate_doc_id_names_the_instance(self, tmp_path):
        candidates = [{"doc_id": "a", "text": "Paris is the capital of France"}, {"doc_id": "a", "text": "Rome is in Italy"}]
        path = _write_lines(tmp_path / "d.jsonl", _record(), _record(id="q7", candidates=candidates))

        with pytest.raises(DatasetValidationError) as exc_info:
            load_dataset(path, LEXICAL)

        assert exc_info.value.error_code == "DUPLICATE_DOC_ID"
        assert exc_info.value.context["instance_id"] == "q7"
        assert exc_info.value.context["line"] == 2

    def test_empty_pool(self, tmp_path):
        path = _write_lines(tmp_path / "d.jsonl", _record(candidates=[]))

        with pytest.raises(DatasetValidationError) as exc_info:
            load_dataset(path, LEXICAL)

        assert exc_info.value.error_code == "EMPTY_POOL"

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetParseError) as exc_info:
            load_dataset(tmp_path / "absent.jsonl", LEXICAL)
        assert exc_info.value.error_code == "DATASET_IO_ERROR"

from dataclasses import replace

import numpy as np
import pytest

from app.core.config import OptimizerConfig, TrainConfig
from app.core.exceptions import (
    CheckpointFingerprintError,
    DimensionMismatchError,
    EmptyDatasetError,
    EnumerationCapExceededError,
    SelectionConfigError,
)
from app.models.reports import Checkpoint, EarlyStopState, MetricReport
from app.models.types import FeatureSpec, GeneratorParams, SelectionConfig, SelectorParams
from app.services.oracle_service import exact_log_likelihood
from app.services.training_service import TrainingService, evaluate, run_training
from tests.fixtures.task_fixtures import SMALL_FEATURE, small_task

FAST = TrainConfig(max_iterations=2, m=4, k=3, batch_size=4, patience=5, seed=7)


def _report(f1):
    return MetricReport(em=f1, f1=f1, recall_at={1: f1, 3: f1, 5: f1}, count=1)


def _without_time(records):
    return [{key: value for key, value in record.to_dict().items() if key != "wall_time"} for record in records]


@pytest.fixture
def split(task_instances):
    return task_instances[:9], task_instances[9:]


class TestEvaluate:
    def test_relevance_and_grounding_weights_solve_the_task(self, noiseless_instances):
        selector = SelectorParams([10.0] + [0.0] * 7)
        generator = GeneratorParams([0.0, 0.0, 0.0, 0.0, 5.0])

        report = evaluate(selector, generator, noiseless_instances, SelectionConfig(k=3))

        assert report.count == len(noiseless_instances)
        assert report.em == 1.0
        assert report.f1 == 1.0
        assert report.recall_at == {1: 1.0, 3: 1.0, 5: 1.0}
        assert report.baseline_recall_at[1] == 1.0

    def test_cutoffs_larger_than_the_pool_are_clipped(self, capital_instance):
        report = evaluate(SelectorParams.zeros(3), GeneratorParams.zeros(5), [capital_instance], SelectionConfig(k=2))
        assert report.recall_at[5] == 1.0

    def test_empty_dataset(self):
        with pytest.raises(EmptyDatasetError):
            evaluate(SelectorParams.zeros(3), GeneratorParams.zeros(5), [], SelectionConfig(k=2))

    def test_workers_do_not_change_the_report(self, task_instances, rng):
        selector = SelectorParams(rng.normal(size=8))
        generator = GeneratorParams(rng.normal(size=5))
        cfg = SelectionConfig(k=3)
        assert evaluate(selector, generator, task_instances, cfg, workers=1) == evaluate(selector, generator, task_instances, cfg, workers=4)


class TestInitialParams:
    def test_seeded(self):
        config = replace(FAST, init_scale=1.0)
        first = TrainingService(config, SMALL_FEATURE).initial_params()
        second = TrainingService(config, SMALL_FEATURE).initial_params()

        assert first[0].weights.any()
        assert np.array_equal(first[0].weights, second[0].weights)
        assert np.array_equal(first[1].weights, second[1].weights)
        assert first[0].weights.shape == (8,)
        assert first[1].weights.shape == (5,)

    def test_zero_scale_is_the_default(self):
        selector, generator = TrainingService(TrainConfig(), SMALL_FEATURE).initial_params()
        assert not selector.weights.any()
        assert not generator.weights.any()


def test_cutoffs_include_k():
    assert TrainingService(replace(FAST, k=4), SMALL_FEATURE).cutoffs == (1, 3, 4, 5)


class TestRunTraining:
    def test_single_iteration(self, split):
        service = TrainingService(replace(FAST, max_iterations=1), SMALL_FEATURE)

        best, records = service.run_training(*split)

        assert [record.iteration for record in records] == [1]
        assert service.last_checkpoint.iteration == 1
        assert best.iteration in (0, 1)
        assert records[0].oracle_log_marginal is None
        assert records[0].wall_time >= 0.0

    def test_constant_metric_stops_after_patience(self, split, mocker):
        mocker.patch.object(TrainingService, "evaluate", return_value=_report(0.5))
        service = TrainingService(replace(FAST, max_iterations=10, patience=3), SMALL_FEATURE)

        best, records = service.run_training(*split)

        assert len(records) == 3
        assert best.iteration == 0

    def test_best_checkpoint_tracks_strict_improvement(self, split, mocker):
        mocker.patch.object(
            TrainingService, "evaluate",
            side_effect=[_report(0.1), _report(0.2), _report(0.3), _report(0.3), _report(0.25)],
        )
        service = TrainingService(replace(FAST, max_iterations=10, patience=2), SMALL_FEATURE)

        best, records = service.run_training(*split)

        assert len(records) == 4
        assert best.iteration == 2
        assert service.last_checkpoint.iteration == 4

    def test_deterministic(self, split):
        first = TrainingService(FAST, SMALL_FEATURE).run_training(*split)
        second = TrainingService(FAST, SMALL_FEATURE).run_training(*split)

        assert _without_time(first[1]) == _without_time(second[1])
        assert np.array_equal(first[0].selector.weights, second[0].selector.weights)

    def test_worker_count_does_not_change_results(self, split):
        inline = TrainingService(replace(FAST, workers=1), SMALL_FEATURE)
        threaded = TrainingService(replace(FAST, workers=3), SMALL_FEATURE)

        _, inline_records = inline.run_training(*split)
        _, threaded_records = threaded.run_training(*split)

        assert _without_time(inline_records) == _without_time(threaded_records)
        assert np.array_equal(inline.last_checkpoint.generator.weights, threaded.last_checkpoint.generator.weights)

    def test_resume_matches_uninterrupted_run(self, split):
        config = replace(FAST, max_iterations=3, patience=3)
        full = TrainingService(config, SMALL_FEATURE)
        _, full_records = full.run_training(*split)

        partial = TrainingService(replace(config, max_iterations=1), SMALL_FEATURE)
        partial.run_training(*split)
        resumed = TrainingService(config, SMALL_FEATURE)
        _, resumed_records = resumed.run_training(*split, init=partial.last_checkpoint)

        assert [record.iteration for record in resumed_records] == [2, 3]
        assert _without_time(resumed_records) == _without_time(full_records[1:])
        assert np.array_equal(resumed.last_checkpoint.selector.weights, full.last_checkpoint.selector.weights)
        assert np.array_equal(resumed.last_checkpoint.generator.weights, full.last_checkpoint.generator.weights)

    def test_resume_restores_early_stopping_state(self, split, mocker):
        config = replace(FAST, max_iterations=10, patience=2)
        mocker.patch.object(TrainingService, "evaluate", side_effect=[_report(0.1), _report(0.3), _report(0.2)])
        callback = mocker.Mock()
        partial = TrainingService(replace(config, max_iterations=2), SMALL_FEATURE, on_iteration=callback)
        partial.run_training(*split)
        first_checkpoint = callback.call_args_list[0].args[1]

        state = partial.last_checkpoint.early_stop
        assert (state.best_value, state.best_iteration, state.stale) == (0.3, 1, 1)

        evaluate_mock = mocker.patch.object(TrainingService, "evaluate", side_effect=[_report(0.25), _report(0.9)])
        best, records = TrainingService(config, SMALL_FEATURE).run_training(*split, init=partial.last_checkpoint)

        assert [record.iteration for record in records] == [3]
        assert evaluate_mock.call_count == 1
        assert best.iteration == 1
        assert np.array_equal(best.selector.weights, first_checkpoint.selector.weights)
        assert np.array_equal(best.generator.weights, first_checkpoint.generator.weights)

    def test_resume_with_exhausted_patience_runs_nothing(self, split):
        service = TrainingService(replace(FAST, patience=2), SMALL_FEATURE)
        selector, generator = service.initial_params()
        state = EarlyStopState(0.4, 0, selector, generator, 2)

        best, records = service.run_training(*split, init=Checkpoint(selector, generator, 2, service.fingerprint, state))

        assert records == []
        assert best.iteration == 0

    def test_foreign_checkpoint_is_rejected(self, split):
        service = TrainingService(FAST, SMALL_FEATURE)
        selector, generator = service.initial_params()

        with pytest.raises(CheckpointFingerprintError):
            service.run_training(*split, init=Checkpoint(selector, generator, 1, "not-this-run"))

    def test_iteration_callback(self, split, mocker):
        callback = mocker.Mock()
        service = TrainingService(FAST, SMALL_FEATURE, on_iteration=callback)

        _, records = service.run_training(*split)

        assert callback.call_count == len(records)
        for call, record in zip(callback.call_args_list, records, strict=True):
            reported, checkpoint = call.args
            assert reported is record
            assert checkpoint.iteration == record.iteration
            assert checkpoint.fingerprint == service.fingerprint


class TestInputValidation:
    def test_empty_training_set(self, split):
        with pytest.raises(EmptyDatasetError) as exc_info:
            TrainingService(FAST, SMALL_FEATURE).run_training([], split[1])
        assert exc_info.value.error_code == "EMPTY_TRAIN_SET"

    def test_empty_validation_set(self, split):
        with pytest.raises(EmptyDatasetError) as exc_info:
            TrainingService(FAST, SMALL_FEATURE).run_training(split[0], [])
        assert exc_info.value.error_code == "EMPTY_VALIDATION_SET"

    def test_k_larger_than_pool(self, split):
        with pytest.raises(SelectionConfigError):
            TrainingService(replace(FAST, k=7), SMALL_FEATURE).run_training(*split)

    def test_feature_dimension_mismatch(self, split):
        with pytest.raises(DimensionMismatchError) as exc_info:
            TrainingService(FAST, FeatureSpec(dimension=4, mode="provided")).run_training(*split)
        assert exc_info.value.error_code == "INSTANCE_DIMENSION_MISMATCH"

    def test_exact_mode_checks_the_enumeration_cap(self, split):
        config = replace(FAST, estep_mode="exact", enumeration_cap=100)
        with pytest.raises(EnumerationCapExceededError):
            TrainingService(config, SMALL_FEATURE).run_training(*split)


def test_exact_mode_never_lowers_the_log_likelihood():
    instances = small_task(num_instances=6, n=4)
    optimizer = OptimizerConfig(learning_rate=0.5, weight_decay=0.0, inner_steps=20)
    config = TrainConfig(
        max_iterations=3, k=2, estep_mode="exact", patience=3, seed=1,
        selector_optimizer=optimizer, generator_optimizer=optimizer,
    )
    service = TrainingService(config, SMALL_FEATURE)
    selector, generator = service.initial_params()

    _, records = service.run_training(instances, instances)

    trace = [exact_log_likelihood(selector, generator, instances, config.selection)]
    trace += [record.oracle_log_marginal for record in records]
    assert len(records) == 3
    assert all(after >= before - 1e-9 for before, after in zip(trace, trace[1:]))


def test_functional_entry_point_infers_features(split):
    best, records = run_training(replace(FAST, max_iterations=1), *split)
    assert len(records) == 1
    assert best.selector.weights.shape == (8,)

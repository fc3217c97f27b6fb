# ABOUTME: Training loop alternating permutation estimation and re-weighted maximization
# ABOUTME: Greedy-decode evaluation, early stopping on a validation metric and per-iteration checkpoints

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from app.core.config import TrainConfig
from app.core.exceptions import CheckpointFingerprintError, DimensionMismatchError, EmptyDatasetError
from app.core.structured_logging import get_logger, log_performance_metric, log_service_operation
from app.models.reports import Checkpoint, EarlyStopState, IterationRecord, MetricReport, WeightedSampleSet
from app.models.types import FeatureSpec, GeneratorParams, Instance, Permutation, SelectionConfig, SelectorParams
from app.services.checkpoint_service import run_fingerprint
from app.services.estimation_service import (
    WeightNormalizer,
    estimate_dataset,
    exact_sample_set,
    normalize_log_weights,
)
from app.services.generator_service import predict_answer
from app.services.maximization_service import run_mstep
from app.services.oracle_service import check_enumeration_cap, exact_log_likelihood, exact_posterior
from app.services.selection_policy import greedy_ranking
from app.utils.hashing import derive_seed
from app.utils.metrics import (
    RECALL_CUTOFFS,
    exact_match,
    lexical_ranking,
    mean_raw_weight,
    recall_at_k,
    token_f1,
    weight_variance,
)
from app.utils.parallel import parallel_map
from app.utils.performance_monitor import measure_time

logger = get_logger(__name__)

IterationCallback = Callable[[IterationRecord, Checkpoint], None]


@dataclass(frozen=True)
class _InstanceScore:
    em: int
    f1: float
    recall: tuple[int, ...]
    baseline_recall: tuple[int, ...]


def evaluate(
    selector: SelectorParams,
    generator: GeneratorParams,
    dataset: Sequence[Instance],
    cfg: SelectionConfig,
    workers: int = 1,
    cutoffs: Sequence[int] = RECALL_CUTOFFS,
) -> MetricReport:
    """Mean EM, F1 and Recall@c of the greedy decode, plus Recall@c of the lexical ordering.

    The selected permutation is the first K documents of the greedy ranking; a
    cutoff larger than the pool is clipped to the pool size.
    """
    if not dataset:
        raise EmptyDatasetError("Evaluation requires at least one instance", error_code="EMPTY_DATASET")

    def score(instance: Instance) -> _InstanceScore:
        cfg.check_pool(instance.n, instance.id)
        ranking = greedy_ranking(selector, instance)
        baseline = lexical_ranking(instance)
        prediction = predict_answer(generator, instance, Permutation(ranking.docids[:cfg.k]))
        return _InstanceScore(
            em=exact_match(prediction, instance.answer),
            f1=token_f1(prediction, instance.answer),
            recall=tuple(recall_at_k(ranking.docids, instance, min(c, instance.n)) for c in cutoffs),
            baseline_recall=tuple(recall_at_k(baseline.docids, instance, min(c, instance.n)) for c in cutoffs),
        )

    scores = parallel_map(score, list(dataset), workers)
    count = len(scores)
    return MetricReport(
        em=sum(s.em for s in scores) / count,
        f1=sum(s.f1 for s in scores) / count,
        recall_at={c: sum(s.recall[i] for s in scores) / count for i, c in enumerate(cutoffs)},
        count=count,
        baseline_recall_at={c: sum(s.baseline_recall[i] for s in scores) / count for i, c in enumerate(cutoffs)},
    )


class TrainingService:
    """Runs the alternating estimation/maximization loop for one configuration."""

    def __init__(
        self,
        config: TrainConfig,
        feature: FeatureSpec,
        normalizer: WeightNormalizer = normalize_log_weights,
        on_iteration: IterationCallback | None = None,
    ) -> None:
        self.config = config
        self.feature = feature
        self.normalizer = normalizer
        self.on_iteration = on_iteration
        self.fingerprint = run_fingerprint(config, feature)
        self.last_checkpoint: Checkpoint | None = None

    @property
    def cutoffs(self) -> tuple[int, ...]:
        return tuple(sorted({*RECALL_CUTOFFS, self.config.k}))

    def initial_params(self) -> tuple[SelectorParams, GeneratorParams]:
        """Gaussian draws of scale ``init_scale`` keyed by the run seed; zeros when the scale is 0."""
        rng = np.random.default_rng(derive_seed(self.config.seed, "init"))
        selector = rng.normal(0.0, 1.0, self.feature.dimension) * self.config.init_scale
        generator = rng.normal(0.0, 1.0, self.config.answer_dimension) * self.config.init_scale
        return SelectorParams(selector), GeneratorParams(generator)

    def evaluate(self, selector: SelectorParams, generator: GeneratorParams, dataset: Sequence[Instance]) -> MetricReport:
        return evaluate(selector, generator, dataset, self.config.selection, self.config.workers, self.cutoffs)

    def early_stop_value(self, report: MetricReport) -> float:
        name = self.config.early_stop_metric
        if name == "recall_at_k":
            return report.recall_at[self.config.k]
        return report.metric(name)

    def _check_inputs(self, train: Sequence[Instance], validation: Sequence[Instance]) -> None:
        if not train:
            raise EmptyDatasetError("Training set is empty", error_code="EMPTY_TRAIN_SET")
        if not validation:
            raise EmptyDatasetError("Validation set is empty", error_code="EMPTY_VALIDATION_SET")
        selection = self.config.selection
        for instance in [*train, *validation]:
            selection.check_pool(instance.n, instance.id)
            if instance.feature_matrix.shape[1] != self.feature.dimension:
                raise DimensionMismatchError(
                    "Instance features do not match the configured dimension",
                    error_code="INSTANCE_DIMENSION_MISMATCH",
                    context={
                        "instance_id": instance.id,
                        "features": instance.feature_matrix.shape[1],
                        "expected": self.feature.dimension,
                    },
                )
        if self.config.estep_mode == "exact":
            for instance in train:
                check_enumeration_cap(instance.n, self.config.k, self.config.enumeration_cap)

    def _estimate(
        self,
        selector: SelectorParams,
        generator: GeneratorParams,
        train: Sequence[Instance],
        iteration: int,
    ) -> list[WeightedSampleSet]:
        if self.config.estep_mode == "exact":
            tables = parallel_map(
                lambda instance: exact_posterior(selector, generator, instance, self.config.selection, self.config.enumeration_cap),
                list(train),
                self.config.workers,
            )
            return [exact_sample_set(table) for table in tables]
        return estimate_dataset(
            selector, generator, train, self.config.selection, self.config.m,
            self.config.seed, iteration, self.config.workers, self.normalizer,
        )

    def run_training(
        self,
        train: Sequence[Instance],
        validation: Sequence[Instance],
        init: Checkpoint | None = None,
    ) -> tuple[Checkpoint, list[IterationRecord]]:
        """Alternate estimation and maximization for up to ``max_iterations`` iterations.

        The validation metric of the starting parameters is the early-stopping
        baseline; training stops once ``patience`` consecutive iterations fail to
        improve on the best value strictly. A run resumed from ``init`` continues
        at ``init.iteration + 1`` with the same per-iteration random sources; when
        ``init`` carries early-stopping state, its best checkpoint and stale count
        replace the baseline evaluation.

        Returns:
            The best-validation checkpoint and one record per completed iteration.
            The checkpoint of the last completed iteration is kept in
            ``last_checkpoint``.
        """
        self._check_inputs(train, validation)
        if init is not None:
            if init.fingerprint != self.fingerprint:
                raise CheckpointFingerprintError(
                    "Initial checkpoint was produced under an incompatible configuration",
                    error_code="CHECKPOINT_FINGERPRINT_MISMATCH",
                    context={"stored": init.fingerprint, "expected": self.fingerprint},
                )
            selector, generator, start = init.selector, init.generator, init.iteration + 1
        else:
            (selector, generator), start = self.initial_params(), 1

        config = self.config
        self.last_checkpoint = init or Checkpoint(selector, generator, 0, self.fingerprint)
        if init is not None and init.early_stop is not None:
            state = init.early_stop
            best = Checkpoint(state.best_selector, state.best_generator, state.best_iteration, self.fingerprint)
            best_value, stale = state.best_value, state.stale
        else:
            baseline = self.evaluate(selector, generator, validation)
            best = Checkpoint(selector, generator, start - 1, self.fingerprint)
            best_value, stale = self.early_stop_value(baseline), 0
        log_service_operation(
            logger, "training", "start",
            mode=config.estep_mode, start=start, max_iterations=config.max_iterations,
            train=len(train), validation=len(validation), baseline=best_value, stale=stale,
        )

        records: list[IterationRecord] = []
        if stale >= config.patience:
            start = config.max_iterations + 1
        for iteration in range(start, config.max_iterations + 1):
            with measure_time() as timer:
                sample_sets = self._estimate(selector, generator, train, iteration)
                elbo = float(np.mean([sample_set.elbo_estimate() for sample_set in sample_sets]))
                selector, generator = run_mstep(list(zip(train, sample_sets, strict=True)), selector, generator, config, iteration)
                metrics = self.evaluate(selector, generator, validation)
                oracle_log_marginal = (
                    exact_log_likelihood(selector, generator, train, config.selection, config.enumeration_cap)
                    if config.estep_mode == "exact" else None
                )

            total = sum(sample_set.m for sample_set in sample_sets)
            record = IterationRecord(
                iteration=iteration,
                train_elbo_estimate=elbo,
                validation_metrics=metrics,
                mean_raw_weight=mean_raw_weight(sample_sets),
                weight_variance=weight_variance(sample_sets) if total >= 2 else 0.0,
                wall_time=timer.get_elapsed_time(),
                oracle_log_marginal=oracle_log_marginal,
            )
            records.append(record)
            value = self.early_stop_value(metrics)
            if value > best_value:
                best, best_value, stale = Checkpoint(selector, generator, iteration, self.fingerprint), value, 0
            else:
                stale += 1
            checkpoint = Checkpoint(
                selector, generator, iteration, self.fingerprint,
                EarlyStopState(best_value, best.iteration, best.selector, best.generator, stale),
            )
            self.last_checkpoint = checkpoint
            log_performance_metric(
                logger, "training.iteration", timer.elapsed_ms,
                iteration=iteration, elbo=elbo, f1=metrics.f1, em=metrics.em,
                weight_variance=record.weight_variance,
            )
            if self.on_iteration is not None:
                self.on_iteration(record, checkpoint)

            if stale >= config.patience:
                log_service_operation(
                    logger, "training", "early_stop",
                    iteration=iteration, best_iteration=best.iteration, best_value=best_value,
                )
                break

        log_service_operation(
            logger, "training", "finish",
            iterations=len(records), best_iteration=best.iteration, best_value=best_value,
        )
        return best, records


def run_training(
    config: TrainConfig,
    train: Sequence[Instance],
    validation: Sequence[Instance],
    init: Checkpoint | None = None,
    feature: FeatureSpec | None = None,
) -> tuple[Checkpoint, list[IterationRecord]]:
    """Functional entry point; the feature spec defaults to the dimension of the training features."""
    if feature is None:
        dimension = train[0].feature_matrix.shape[1] if train else 1
        feature = FeatureSpec(dimension=dimension, mode="provided")
    return TrainingService(config, feature).run_training(train, validation, init)

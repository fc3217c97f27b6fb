# ABOUTME: Permutation estimation step: sample permutations from the selector and weight them
# ABOUTME: Importance weights are generator likelihoods, self-normalized over each instance's samples

from collections.abc import Callable, Sequence
import math

import numpy as np
from scipy.special import softmax

from app.core.error_handling import ensure_finite
from app.core.exceptions import EmptyWeightsError, EstimationError
from app.core.structured_logging import get_logger, log_service_operation
from app.models.reports import PosteriorTable, WeightedSample, WeightedSampleSet
from app.models.types import GeneratorParams, Instance, SelectionConfig, SelectorParams, Vector
from app.services.generator_service import answer_log_probs
from app.services.selection_policy import doc_scores, plackett_luce_log_prob, sample_perms
from app.utils.hashing import derive_seed
from app.utils.parallel import parallel_map

logger = get_logger(__name__)

# maps the log-weights of one instance to self-normalized weights
WeightNormalizer = Callable[[Sequence[float]], Vector]


def normalize_weights(raw: Sequence[float]) -> Vector:
    """Self-normalize positive weights so they sum to one, preserving order."""
    if len(raw) == 0:
        raise EmptyWeightsError("Cannot normalize an empty weight list", error_code="EMPTY_WEIGHTS")
    weights = np.asarray(raw, dtype=np.float64)
    ensure_finite(weights, "importance weights")
    if np.any(weights <= 0.0):
        raise EstimationError(
            "Importance weights must be positive",
            error_code="NON_POSITIVE_WEIGHT",
            context={"minimum": float(weights.min())},
        )
    return weights / weights.sum()


def normalize_log_weights(log_weights: Sequence[float]) -> Vector:
    """Self-normalize weights given by their logarithms.

    Equals ``normalize_weights(exp(log_weights))`` but stays defined when the
    exponentials underflow; only a non-finite log-weight is an error.
    """
    if len(log_weights) == 0:
        raise EmptyWeightsError("Cannot normalize an empty weight list", error_code="EMPTY_WEIGHTS")
    values = np.asarray(log_weights, dtype=np.float64)
    ensure_finite(values, "importance log-weights")
    return np.asarray(softmax(values), dtype=np.float64)


def estimate(
    selector: SelectorParams,
    generator: GeneratorParams,
    instance: Instance,
    cfg: SelectionConfig,
    m: int,
    rng: np.random.Generator,
    normalizer: WeightNormalizer = normalize_log_weights,
) -> WeightedSampleSet:
    """Draw m permutations and attach selector/generator log-probabilities and weights.

    Duplicate draws are kept. Log-probabilities are computed once per distinct
    permutation within the call.
    """
    if m < 1:
        raise EstimationError("Sample count must be positive", error_code="SAMPLE_COUNT_INVALID", context={"m": m})
    perms = sample_perms(selector, instance, cfg, m, rng)
    scores = doc_scores(selector, instance)
    gold = instance.gold_index

    memo: dict[tuple[int, ...], tuple[float, float]] = {}
    for perm in perms:
        if perm.docids not in memo:
            memo[perm.docids] = (
                plackett_luce_log_prob(scores, perm.docids),
                float(answer_log_probs(generator, instance, perm)[gold]),
            )

    log_probs = [memo[perm.docids] for perm in perms]
    raw = [math.exp(generator_lp) for _, generator_lp in log_probs]
    normalized = normalizer([generator_lp for _, generator_lp in log_probs])
    samples = tuple(
        WeightedSample(
            perm=perm,
            selector_log_prob=selector_lp,
            generator_log_prob=generator_lp,
            raw_weight=raw_weight,
            norm_weight=float(norm_weight),
        )
        for perm, (selector_lp, generator_lp), raw_weight, norm_weight in zip(perms, log_probs, raw, normalized, strict=True)
    )
    return WeightedSampleSet(instance_id=instance.id, samples=samples)


def estimate_dataset(
    selector: SelectorParams,
    generator: GeneratorParams,
    instances: Sequence[Instance],
    cfg: SelectionConfig,
    m: int,
    seed: int,
    iteration: int,
    workers: int = 1,
    normalizer: WeightNormalizer = normalize_log_weights,
) -> list[WeightedSampleSet]:
    """Run ``estimate`` on every instance with a random source keyed by (seed, iteration, id).

    Results are in input order and do not depend on the number of workers.
    """
    def run(instance: Instance) -> WeightedSampleSet:
        rng = np.random.default_rng(derive_seed(seed, iteration, instance.id))
        return estimate(selector, generator, instance, cfg, m, rng, normalizer)

    sample_sets = parallel_map(run, list(instances), workers)
    log_service_operation(
        logger, "estimation", "estimate_dataset",
        iteration=iteration, instances=len(sample_sets), m=m, workers=workers,
    )
    return sample_sets


def exact_sample_set(table: PosteriorTable) -> WeightedSampleSet:
    """Every enumerated permutation weighted by its exact posterior probability."""
    samples = tuple(
        WeightedSample(
            perm=perm,
            selector_log_prob=float(log_proposal),
            generator_log_prob=float(log_likelihood),
            raw_weight=float(likelihood),
            norm_weight=float(posterior),
        )
        for perm, log_proposal, log_likelihood, likelihood, posterior in zip(
            table.perms, table.log_proposal_probs, table.log_likelihoods,
            table.likelihoods, table.posterior_probs, strict=True,
        )
    )
    return WeightedSampleSet(instance_id=table.instance_id, samples=samples)

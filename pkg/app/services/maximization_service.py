# ABOUTME: Re-weighted maximization step: selection and generation losses, their gradients and updates
# ABOUTME: SGD with decoupled weight decay and momentum; backtracking steps for the exact-posterior mode

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from app.core.config import OptimizerConfig, TrainConfig
from app.core.error_handling import ensure_finite
from app.core.exceptions import DimensionMismatchError, EmptyBatchError, OptimizationError
from app.core.structured_logging import get_logger, log_service_operation
from app.models.reports import GradReport, WeightedSampleSet
from app.models.types import AnswerFeatureSpec, GeneratorParams, Instance, SelectorParams, Vector
from app.services.generator_service import answer_feature_matrix
from app.services.selection_policy import doc_scores, plackett_luce_grad, plackett_luce_log_prob
from app.utils.hashing import derive_seed

logger = get_logger(__name__)

Batch = Sequence[tuple[Instance, WeightedSampleSet]]

# halvings of the learning rate before an exact-mode step is skipped
MAX_BACKTRACKS = 30


def _ordered(batch: Batch) -> list[tuple[Instance, WeightedSampleSet]]:
    if not batch:
        raise EmptyBatchError("Loss requested for an empty batch", error_code="EMPTY_BATCH")
    for instance, sample_set in batch:
        if instance.id != sample_set.instance_id:
            raise OptimizationError(
                "Sample set does not belong to the paired instance",
                error_code="BATCH_PAIRING_MISMATCH",
                context={"instance_id": instance.id, "sample_set": sample_set.instance_id},
            )
    return sorted(batch, key=lambda pair: pair[0].id)


def selection_loss_grad(batch: Batch, selector: SelectorParams, with_grad: bool = True) -> GradReport:
    """L_S = −(1/|batch|) Σ_x Σ_i ŵ_i log p(z_i | x; θ_s), with ŵ_i held constant.

    Accumulation runs in instance-id order so the result does not depend on how
    the batch was assembled.
    """
    pairs = _ordered(batch)
    dimension = selector.weights.shape[0]
    loss = 0.0
    grad = np.zeros(dimension)
    for instance, sample_set in pairs:
        scores = doc_scores(selector, instance)
        terms: dict[tuple[int, ...], tuple[float, Vector | None]] = {}
        for sample in sample_set.samples:
            docids = sample.perm.docids
            if docids not in terms:
                sample.perm.validate(instance.n)
                terms[docids] = (
                    plackett_luce_log_prob(scores, docids),
                    plackett_luce_grad(scores, instance.feature_matrix, docids) if with_grad else None,
                )
            log_prob, perm_grad = terms[docids]
            loss -= sample.norm_weight * log_prob
            if perm_grad is not None:
                grad -= sample.norm_weight * perm_grad
        ensure_finite(loss, "selection loss", instance_id=instance.id)

    scale = 1.0 / len(pairs)
    report = GradReport(loss=loss * scale, grad=grad * scale)
    ensure_finite(report.grad, "selection gradient")
    return report


def generation_loss_grad(batch: Batch, generator: GeneratorParams, with_grad: bool = True) -> GradReport:
    """L_G = −(1/|batch|) Σ_x Σ_i ŵ_i log p(y | x, d_{z_i}; θ_g), with ŵ_i held constant."""
    pairs = _ordered(batch)
    dimension = generator.weights.shape[0]
    spec = AnswerFeatureSpec(dimension=dimension)
    loss = 0.0
    grad = np.zeros(dimension)
    for instance, sample_set in pairs:
        gold = instance.gold_index
        for sample in sample_set.samples:
            matrix = answer_feature_matrix(instance, sample.perm, spec)
            logits = matrix @ generator.weights
            loss -= sample.norm_weight * float(log_softmax(logits)[gold])
            if with_grad:
                grad -= sample.norm_weight * (matrix[gold] - softmax(logits) @ matrix)
        ensure_finite(loss, "generation loss", instance_id=instance.id)

    scale = 1.0 / len(pairs)
    report = GradReport(loss=loss * scale, grad=grad * scale)
    ensure_finite(report.grad, "generation gradient")
    return report


def apply_update(
    params: Vector,
    grad: Vector,
    cfg: OptimizerConfig,
    state: Vector | None = None,
) -> tuple[Vector, Vector]:
    """One SGD step: v ← μ·v + g, θ ← θ − η·(v + λ·θ).

    Args:
        params: Current parameter vector
        grad: Gradient of the loss at ``params``
        cfg: Learning rate η, weight decay λ and momentum μ
        state: Momentum buffer v, or None for a fresh (zero) buffer

    Returns:
        Updated parameters and momentum buffer

    Raises:
        DivergenceError: Non-finite gradient or resulting parameters
    """
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or (state is not None and state.shape != params.shape):
        raise DimensionMismatchError(
            "Parameter, gradient and momentum shapes differ",
            error_code="UPDATE_SHAPE_MISMATCH",
            context={"params": params.shape, "grad": grad.shape},
        )
    ensure_finite(grad, "gradient")

    velocity = grad if state is None else cfg.momentum * state + grad
    updated = params - cfg.learning_rate * (velocity + cfg.weight_decay * params)
    ensure_finite(updated, "parameters")
    return updated, velocity


def backtracking_update(
    params: Vector,
    grad: Vector,
    cfg: OptimizerConfig,
    loss_fn: Callable[[Vector], float],
) -> tuple[Vector, float]:
    """Decayed gradient step whose learning rate is halved until ``loss_fn`` does not increase.

    Returns the accepted parameters and learning rate; after ``MAX_BACKTRACKS``
    halvings the step is skipped and ``params`` come back unchanged with rate 0.
    """
    current = loss_fn(params)
    learning_rate = cfg.learning_rate
    for _ in range(MAX_BACKTRACKS + 1):
        candidate, _ = apply_update(params, grad, OptimizerConfig(
            learning_rate=learning_rate, weight_decay=cfg.weight_decay, momentum=0.0,
        ))
        if loss_fn(candidate) <= current:
            return candidate, learning_rate
        learning_rate /= 2.0
    return np.asarray(params, dtype=np.float64), 0.0


def _batches(pairs: list[tuple[Instance, WeightedSampleSet]], batch_size: int, rng: np.random.Generator) -> list[list[tuple[Instance, WeightedSampleSet]]]:
    order = rng.permutation(len(pairs))
    shuffled = [pairs[index] for index in order]
    return [shuffled[start:start + batch_size] for start in range(0, len(shuffled), batch_size)]


def run_mstep(
    batch: Batch,
    selector: SelectorParams,
    generator: GeneratorParams,
    config: TrainConfig,
    iteration: int,
) -> tuple[SelectorParams, GeneratorParams]:
    """Update the selector, then the generator, on weights computed under the previous parameters.

    Sampled mode shuffles the instances into mini-batches (order keyed by seed and
    iteration) and takes ``inner_steps`` momentum-SGD steps per batch. Exact mode
    uses the full batch with backtracking steps, so the weighted log-joint never
    decreases. Momentum buffers start empty at every call. A model whose update
    flag is off comes back unchanged.
    """
    pairs = sorted(batch, key=lambda pair: pair[0].id)
    if not pairs:
        raise EmptyBatchError("M-step received no instances", error_code="EMPTY_BATCH")

    selector_weights = np.array(selector.weights)
    generator_weights = np.array(generator.weights)

    if config.estep_mode == "exact":
        if config.update_selector:
            selector_weights = _exact_steps(
                selector_weights, config.selector_optimizer,
                lambda w: selection_loss_grad(pairs, SelectorParams(w), with_grad=False).loss,
                lambda w: selection_loss_grad(pairs, SelectorParams(w)).grad,
            )
        if config.update_generator:
            generator_weights = _exact_steps(
                generator_weights, config.generator_optimizer,
                lambda w: generation_loss_grad(pairs, GeneratorParams(w), with_grad=False).loss,
                lambda w: generation_loss_grad(pairs, GeneratorParams(w)).grad,
            )
    else:
        rng = np.random.default_rng(derive_seed(config.seed, iteration, "batches"))
        batches = _batches(pairs, config.batch_size, rng)
        state: Vector | None = None
        if config.update_selector:
            for mini_batch in batches:
                for _ in range(config.selector_optimizer.inner_steps):
                    report = selection_loss_grad(mini_batch, SelectorParams(selector_weights))
                    selector_weights, state = apply_update(selector_weights, report.grad, config.selector_optimizer, state)
        state = None
        if config.update_generator:
            for mini_batch in batches:
                for _ in range(config.generator_optimizer.inner_steps):
                    report = generation_loss_grad(mini_batch, GeneratorParams(generator_weights))
                    generator_weights, state = apply_update(generator_weights, report.grad, config.generator_optimizer, state)

    log_service_operation(
        logger, "maximization", "run_mstep",
        iteration=iteration, mode=config.estep_mode, instances=len(pairs),
        update_selector=config.update_selector, update_generator=config.update_generator,
    )
    return SelectorParams(selector_weights), GeneratorParams(generator_weights)


def _exact_steps(
    weights: Vector,
    cfg: OptimizerConfig,
    loss_fn: Callable[[Vector], float],
    grad_fn: Callable[[Vector], Vector],
) -> Vector:
    for _ in range(cfg.inner_steps):
        weights, learning_rate = backtracking_update(weights, grad_fn(weights), cfg, loss_fn)
        if learning_rate == 0.0:
            break
    return weights

# ABOUTME: Exact enumeration oracles over every K-permutation of a small candidate pool
# ABOUTME: Marginal likelihood, posterior, evidence lower bound, variance identities and expected gradients

from collections.abc import Callable, Sequence
import itertools
import math

import numpy as np
from scipy.special import logsumexp

from app.core.config import config
from app.core.exceptions import (
    EmptyDatasetError,
    EnumerationCapExceededError,
    InvalidDistributionError,
    SupportMismatchError,
)
from app.models.reports import ElboEstimate, PosteriorTable, VarianceReport
from app.models.types import (
    GeneratorParams,
    Instance,
    Permutation,
    SelectionConfig,
    SelectorParams,
    Vector,
)
from app.services.generator_service import answer_log_prob_grad, answer_log_probs
from app.services.selection_policy import doc_scores, plackett_luce_grad, plackett_luce_log_prob

DISTRIBUTION_TOLERANCE = 1e-8


def check_enumeration_cap(n: int, k: int, cap: int | None = None) -> int:
    """Return n!/(n−K)! or raise when it exceeds the cap (default from DRO_ENUMERATION_CAP)."""
    SelectionConfig(k=k).check_pool(n)
    limit = config.enumeration_cap() if cap is None else cap
    count = math.perm(n, k)
    if count > limit:
        raise EnumerationCapExceededError(
            "Permutation space exceeds the enumeration cap",
            error_code="ENUMERATION_CAP_EXCEEDED",
            context={"n": n, "k": k, "count": count, "cap": limit},
        )
    return count


def enumerate_perms(n: int, k: int, cap: int | None = None) -> list[Permutation]:
    """All ordered K-tuples of distinct indices in range(n), lexicographic."""
    check_enumeration_cap(n, k, cap)
    return [Permutation(docids) for docids in itertools.permutations(range(n), k)]


def exact_posterior(
    selector: SelectorParams,
    generator: GeneratorParams,
    instance: Instance,
    cfg: SelectionConfig,
    cap: int | None = None,
) -> PosteriorTable:
    """Proposal, likelihood, joint and posterior of every permutation plus the marginal p(y|x)."""
    perms = enumerate_perms(instance.n, cfg.k, cap)
    scores = doc_scores(selector, instance)
    gold = instance.gold_index

    log_proposal = np.array([plackett_luce_log_prob(scores, perm.docids) for perm in perms])
    log_likelihood = np.array([answer_log_probs(generator, instance, perm)[gold] for perm in perms])
    log_joint = log_proposal + log_likelihood
    log_marginal = float(logsumexp(log_joint))

    proposal = np.exp(log_proposal)
    if abs(proposal.sum() - 1.0) > DISTRIBUTION_TOLERANCE:
        raise InvalidDistributionError(
            "Selector probabilities do not sum to one",
            error_code="PROPOSAL_NOT_NORMALIZED",
            context={"instance_id": instance.id, "total": float(proposal.sum())},
        )

    return PosteriorTable(
        instance_id=instance.id,
        perms=tuple(perms),
        proposal_probs=proposal,
        likelihoods=np.exp(log_likelihood),
        joint_probs=np.exp(log_joint),
        posterior_probs=np.exp(log_joint - log_marginal),
        marginal=math.exp(log_marginal),
        log_proposal_probs=log_proposal,
        log_likelihoods=log_likelihood,
        log_marginal=log_marginal,
    )


def _check_distribution(q: Vector, size: int, name: str) -> None:
    if q.shape != (size,):
        raise InvalidDistributionError(
            f"{name} has the wrong length",
            error_code="DISTRIBUTION_SHAPE",
            context={"expected": size, "actual": q.shape},
        )
    if np.any(q < 0) or abs(q.sum() - 1.0) > DISTRIBUTION_TOLERANCE:
        raise InvalidDistributionError(
            f"{name} is not a probability distribution",
            error_code="DISTRIBUTION_NOT_NORMALIZED",
            context={"total": float(q.sum()), "minimum": float(q.min())},
        )


def exact_elbo(table: PosteriorTable, q: Sequence[float] | Vector) -> ElboEstimate:
    """ELBO(q) = Σ_z q(z) [log p(y, z | x) − log q(z)], with 0·log 0 taken as 0."""
    q = np.asarray(q, dtype=np.float64)
    _check_distribution(q, len(table.perms), "Variational distribution")

    support = q > 0
    log_q = np.log(q[support])
    entropy = float(-(q[support] * log_q).sum())
    elbo = float((q[support] * (table.log_joint_probs[support] - log_q)).sum())
    return ElboEstimate(
        elbo=elbo,
        log_marginal=table.log_marginal,
        gap=table.log_marginal - elbo,
        entropy=entropy,
    )


def variance_report(table: PosteriorTable, f: Callable[[Permutation], float]) -> VarianceReport:
    """Posterior variance of f against the variance of the exactly re-weighted proposal estimate.

    With r = posterior / proposal, the proposal-side estimate r·f has mean E_post[f]
    and variance E_post[r f²] − E_post[f]²; the difference of the two variances is
    E_post[f² (r − 1)]. The same expression with the generator likelihood w in
    place of r is reported alongside it.
    """
    posterior = table.posterior_probs
    proposal = table.proposal_probs
    if np.any((proposal <= 0) & (posterior > 0)):
        raise SupportMismatchError(
            "Posterior has mass outside the proposal support",
            error_code="SUPPORT_MISMATCH",
            context={"instance_id": table.instance_id},
        )

    values = np.array([f(perm) for perm in table.perms], dtype=np.float64)
    ratio = np.exp(table.log_likelihoods - table.log_marginal)
    squared = values ** 2

    mean_posterior = float(posterior @ values)
    var_posterior = float(posterior @ squared - mean_posterior ** 2)
    mean_weighted = float(proposal @ (ratio * values))
    var_weighted = float(proposal @ (ratio ** 2 * squared) - mean_weighted ** 2)

    return VarianceReport(
        var_posterior_f=var_posterior,
        var_proposal_weighted_f=var_weighted,
        delta_var_exact=var_weighted - var_posterior,
        delta_var_likelihood_form=float(posterior @ (squared * (table.likelihoods - 1.0))),
        delta_var_ratio_form=float(posterior @ (squared * (ratio - 1.0))),
        mean_posterior_f=mean_posterior,
        mean_proposal_weighted_f=mean_weighted,
    )


def exact_expected_grads(
    selector: SelectorParams,
    generator: GeneratorParams,
    instance: Instance,
    cfg: SelectionConfig,
    cap: int | None = None,
) -> tuple[Vector, Vector]:
    """Σ_z p(z|x) w(z) ∇ log p(z|x; θ_s) and Σ_z p(z|x) w(z) ∇ log p(y|x, d_z; θ_g)."""
    table = exact_posterior(selector, generator, instance, cfg, cap)
    scores = doc_scores(selector, instance)
    selection = np.zeros(selector.weights.shape[0])
    generation = np.zeros(generator.weights.shape[0])
    for perm, joint in zip(table.perms, table.joint_probs, strict=True):
        selection += joint * plackett_luce_grad(scores, instance.feature_matrix, perm.docids)
        generation += joint * answer_log_prob_grad(generator, instance, perm, instance.answer)
    return selection, generation


def exact_log_likelihood(
    selector: SelectorParams,
    generator: GeneratorParams,
    instances: Sequence[Instance],
    cfg: SelectionConfig,
    cap: int | None = None,
) -> float:
    """Mean exact log p(y | x; θ) over ``instances``."""
    if not instances:
        raise EmptyDatasetError("Log-likelihood requested for no instances", error_code="EMPTY_DATASET")
    total = sum(exact_posterior(selector, generator, instance, cfg, cap).log_marginal for instance in instances)
    return total / len(instances)

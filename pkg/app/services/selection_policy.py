# ABOUTME: List-wise selection policy: Plackett-Luce distribution over K-permutations of the pool
# ABOUTME: Linear document scores, exact log-probabilities and gradients, Gumbel-top-K sampling

import numpy as np
from scipy.special import logsumexp, softmax

from app.core.exceptions import DimensionMismatchError
from app.models.types import Instance, Permutation, SelectionConfig, SelectorParams, Vector


def doc_scores(params: SelectorParams, instance: Instance) -> Vector:
    """Linear score dot(weights, features_j) of every candidate document."""
    features = instance.feature_matrix
    if features.shape[1] != params.weights.shape[0]:
        raise DimensionMismatchError(
            "Selector weights do not match the feature dimension",
            error_code="SELECTOR_DIMENSION_MISMATCH",
            context={
                "instance_id": instance.id,
                "weights": params.weights.shape[0],
                "features": features.shape[1],
            },
        )
    return np.asarray(features @ params.weights, dtype=np.float64)


def plackett_luce_log_prob(scores: Vector, docids: tuple[int, ...]) -> float:
    """log p(z) = Σ_t [s_{z_t} − logsumexp of the scores not yet selected]."""
    remaining = np.ones(scores.shape[0], dtype=bool)
    total = 0.0
    for index in docids:
        total += scores[index] - logsumexp(scores[remaining])
        remaining[index] = False
    return float(total)


def plackett_luce_grad(scores: Vector, features: Vector, docids: tuple[int, ...]) -> Vector:
    """Σ_t [φ_{z_t} − Σ_{j remaining} softmax_j · φ_j], the score-function gradient."""
    remaining = np.ones(scores.shape[0], dtype=bool)
    grad = np.zeros(features.shape[1])
    for index in docids:
        probs = softmax(scores[remaining])
        grad += features[index] - probs @ features[remaining]
        remaining[index] = False
    return grad


def perm_log_prob(params: SelectorParams, instance: Instance, perm: Permutation) -> float:
    """log p(z | x; θ_s) under the Plackett-Luce chain."""
    perm.validate(instance.n)
    return plackett_luce_log_prob(doc_scores(params, instance), perm.docids)


def perm_log_prob_grad(params: SelectorParams, instance: Instance, perm: Permutation) -> Vector:
    """∇_θ log p(z | x; θ_s)."""
    perm.validate(instance.n)
    return plackett_luce_grad(doc_scores(params, instance), instance.feature_matrix, perm.docids)


def sample_perms(
    params: SelectorParams,
    instance: Instance,
    cfg: SelectionConfig,
    m: int,
    rng: np.random.Generator,
) -> list[Permutation]:
    """Draw m independent K-permutations.

    The top-K of scores perturbed by i.i.d. Gumbel noise is distributed exactly as
    sequential softmax sampling without replacement, so one vectorized argsort
    replaces K categorical draws per sample.
    """
    cfg.check_pool(instance.n, instance.id)
    scores = doc_scores(params, instance)
    perturbed = scores[None, :] + rng.gumbel(size=(m, instance.n))
    top_k = np.argsort(-perturbed, axis=1, kind="stable")[:, :cfg.k]
    return [Permutation(tuple(int(index) for index in row)) for row in top_k]


def greedy_ranking(params: SelectorParams, instance: Instance) -> Permutation:
    """Full ranking by sequential argmax without replacement; ties go to the lower index."""
    scores = doc_scores(params, instance)
    order = np.argsort(-scores, kind="stable")
    return Permutation(tuple(int(index) for index in order))


def greedy_decode(params: SelectorParams, instance: Instance, cfg: SelectionConfig) -> Permutation:
    """Deterministic K-permutation used at evaluation time."""
    cfg.check_pool(instance.n, instance.id)
    return Permutation(greedy_ranking(params, instance).docids[:cfg.k])

# ABOUTME: Answer generator: log-linear categorical model over an instance's closed answer set
# ABOUTME: Rank-sensitive answer features so the order of the selected documents matters

import numpy as np
from scipy.special import log_softmax, softmax

from app.core.exceptions import DimensionMismatchError, UnknownAnswerError
from app.models.types import AnswerFeatureSpec, GeneratorParams, Instance, Permutation, Vector
from app.utils.hashing import stable_hash

# containment count, rank-discounted containment, query overlap, bias
BASE_FEATURES = 4
GROUNDED_CONTAINMENT = 4
ANSWER_HEAD = 5


def query_grounding(instance: Instance, perm: Permutation) -> Vector:
    """Query support of every selected document, in permutation order.

    A document starts with the fraction of query tokens it contains. Support then
    flows between selected documents sharing a non-query token (a bridge term),
    each taking the larger value, until nothing changes.
    """
    support = instance.query_support[list(perm.docids)].copy()
    vocab = [instance.bridge_vocab[index] for index in perm.docids]
    changed = True
    while changed:
        changed = False
        for i in range(len(vocab)):
            for j in range(len(vocab)):
                if support[j] > support[i] and vocab[i] & vocab[j]:
                    support[i] = support[j]
                    changed = True
    return support


def _query_answer_overlap(instance: Instance, answer_index: int) -> float:
    tokens = instance.answer_tokens[answer_index]
    if not tokens:
        return 0.0
    query = set(instance.query_tokens)
    return sum(1 for token in tokens if token in query) / len(tokens)


def answer_feature_matrix(instance: Instance, perm: Permutation, spec: AnswerFeatureSpec) -> Vector:
    """(|answers|, G) matrix whose row a is the feature vector ψ of answer a.

    Columns: [0] selected documents containing the answer, [1] the same count
    discounted by 1/log2(rank + 1), [2] share of answer tokens found in the query,
    [3] constant 1, [4] containment weighted by query grounding, [5:] hashed
    answer-token buckets.
    """
    key = (perm.docids, spec.dimension)
    cached = instance.answer_feature_cache.get(key)
    if cached is not None:
        return cached

    perm.validate(instance.n)
    contains = instance.containment[list(perm.docids)].astype(np.float64)
    discounts = 1.0 / np.log2(np.arange(2, len(perm) + 2))

    matrix = np.zeros((len(instance.answer_candidates), spec.dimension))
    matrix[:, 0] = contains.sum(axis=0)
    matrix[:, 1] = discounts @ contains
    matrix[:, 2] = [_query_answer_overlap(instance, a) for a in range(len(instance.answer_candidates))]
    matrix[:, 3] = 1.0
    if spec.dimension > GROUNDED_CONTAINMENT:
        matrix[:, GROUNDED_CONTAINMENT] = query_grounding(instance, perm) @ contains
    buckets = spec.dimension - ANSWER_HEAD
    if buckets > 0:
        for a, tokens in enumerate(instance.answer_tokens):
            for token in tokens:
                matrix[a, ANSWER_HEAD + stable_hash(token) % buckets] += 1.0
    matrix.setflags(write=False)
    instance.answer_feature_cache.put(key, matrix)
    return matrix


def _resolve_answer(instance: Instance, answer: str) -> int:
    index = instance.answer_index(answer)
    if index is None:
        raise UnknownAnswerError(
            "Answer is not in the instance's answer candidates",
            error_code="UNKNOWN_ANSWER",
            context={"instance_id": instance.id, "answer": answer},
        )
    return index


def _logits(params: GeneratorParams, instance: Instance, perm: Permutation) -> tuple[Vector, Vector]:
    spec = AnswerFeatureSpec(dimension=params.weights.shape[0])
    matrix = answer_feature_matrix(instance, perm, spec)
    return matrix, matrix @ params.weights


def answer_features(instance: Instance, perm: Permutation, answer: str, spec: AnswerFeatureSpec | None = None) -> Vector:
    """Feature vector ψ(answer) given the selected documents."""
    spec = spec or AnswerFeatureSpec()
    return answer_feature_matrix(instance, perm, spec)[_resolve_answer(instance, answer)]


def answer_log_probs(params: GeneratorParams, instance: Instance, perm: Permutation) -> Vector:
    """log p(y' | x, d_z) for every answer candidate y'."""
    _check_dimension(params)
    _, logits = _logits(params, instance, perm)
    return np.asarray(log_softmax(logits), dtype=np.float64)


def answer_log_prob(params: GeneratorParams, instance: Instance, perm: Permutation, answer: str) -> float:
    """log p(y | x, d_z; θ_g), a log-softmax over the answer candidates."""
    index = _resolve_answer(instance, answer)
    return float(answer_log_probs(params, instance, perm)[index])


def answer_log_prob_grad(params: GeneratorParams, instance: Instance, perm: Permutation, answer: str) -> Vector:
    """ψ(answer) − Σ_y' p(y' | ·) ψ(y')."""
    index = _resolve_answer(instance, answer)
    _check_dimension(params)
    matrix, logits = _logits(params, instance, perm)
    return np.asarray(matrix[index] - softmax(logits) @ matrix, dtype=np.float64)


def predict_answer(params: GeneratorParams, instance: Instance, perm: Permutation) -> str:
    """Most probable answer; ties go to the earlier candidate."""
    _check_dimension(params)
    _, logits = _logits(params, instance, perm)
    return instance.answer_candidates[int(np.argmax(logits))]


def _check_dimension(params: GeneratorParams) -> None:
    if params.weights.shape[0] < BASE_FEATURES:
        raise DimensionMismatchError(
            "Generator weights need at least four dimensions",
            error_code="GENERATOR_DIMENSION_MISMATCH",
            context={"weights": params.weights.shape[0]},
        )

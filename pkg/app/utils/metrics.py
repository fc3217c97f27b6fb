"""Answer and retrieval metrics: exact match, token F1, Recall@K and weight diagnostics."""

from collections import Counter
from collections.abc import Sequence

import numpy as np

from app.core.exceptions import MetricError
from app.models.reports import WeightedSampleSet
from app.models.types import Instance, Permutation
from app.utils.text import tokenize

RECALL_CUTOFFS = (1, 3, 5)


def exact_match(pred: str, gold: str) -> int:
    """1 iff the normalized token sequences are equal."""
    return int(tokenize(pred) == tokenize(gold))


def token_f1(pred: str, gold: str) -> float:
    """
    Harmonic mean of token precision and recall over token multisets.

    Two empty strings score 1.0; exactly one empty string scores 0.0.
    """
    pred_tokens = tokenize(pred)
    gold_tokens = tokenize(gold)
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0

    common = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def recall_at_k(ranked_docids: Sequence[int], instance: Instance, k: int) -> int:
    """1 iff one of the top-k documents contains the gold answer as a token subsequence."""
    if k < 1 or k > len(ranked_docids):
        raise MetricError(
            "Cutoff outside the ranked list",
            error_code="RECALL_CUTOFF_OUT_OF_RANGE",
            context={"k": k, "ranked": len(ranked_docids), "instance_id": instance.id},
        )
    gold = instance.gold_index
    return int(any(instance.containment[index, gold] for index in ranked_docids[:k]))


def weight_variance(sets: Sequence[WeightedSampleSet]) -> float:
    """Unbiased sample variance of the raw weights pooled over every sample set."""
    pooled = np.concatenate([sample_set.raw_weights() for sample_set in sets]) if sets else np.array([])
    if pooled.size < 2:
        raise MetricError(
            "Weight variance needs at least two samples",
            error_code="TOO_FEW_WEIGHTS",
            context={"samples": int(pooled.size)},
        )
    return float(np.var(pooled, ddof=1))


def mean_raw_weight(sets: Sequence[WeightedSampleSet]) -> float:
    pooled = np.concatenate([sample_set.raw_weights() for sample_set in sets]) if sets else np.array([])
    return float(pooled.mean()) if pooled.size else 0.0


def lexical_ranking(instance: Instance) -> Permutation:
    """Initial-retrieval order: documents by query-token overlap, ties to the lower index."""
    order = np.argsort(-instance.query_support, kind="stable")
    return Permutation(tuple(int(index) for index in order))

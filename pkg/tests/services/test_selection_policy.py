import math

import numpy as np
import pytest

from app.core.exceptions import DimensionMismatchError, InvalidPermutationError, SelectionConfigError
from app.models.types import Permutation, SelectionConfig, SelectorParams
from app.services.oracle_service import enumerate_perms
from app.services.selection_policy import (
    doc_scores,
    greedy_decode,
    greedy_ranking,
    perm_log_prob,
    perm_log_prob_grad,
    plackett_luce_log_prob,
    sample_perms,
)
from tests.fixtures.task_fixtures import make_instance


def _random_instance(rng, n, dimension=4, instance_id="rand"):
    docs = [f"doc {j}" for j in range(n)]
    return make_instance(docs, rng.normal(size=(n, dimension)).tolist(), instance_id=instance_id)


def test_doc_scores_are_linear(capital_instance):
    scores = doc_scores(SelectorParams([1.0, 0.0, 2.0]), capital_instance)
    assert scores.tolist() == pytest.approx([4.0, 0.0, 1.0, 1.0])


def test_dimension_mismatch(capital_instance):
    with pytest.raises(DimensionMismatchError) as exc_info:
        doc_scores(SelectorParams([1.0, 0.0]), capital_instance)
    assert exc_info.value.error_code == "SELECTOR_DIMENSION_MISMATCH"


def test_uniform_scores_give_uniform_permutations(capital_instance):
    params = SelectorParams.zeros(3)
    assert perm_log_prob(params, capital_instance, Permutation((3, 1))) == pytest.approx(math.log(1 / 12))


def test_probabilities_sum_to_one_for_every_length(rng):
    for n in range(1, 6):
        instance = _random_instance(rng, n)
        params = SelectorParams(rng.normal(size=4))
        for k in range(1, n + 1):
            total = math.fsum(math.exp(perm_log_prob(params, instance, perm)) for perm in enumerate_perms(n, k))
            assert total == pytest.approx(1.0, abs=1e-10)


def test_shift_invariance(rng):
    scores = rng.normal(size=6)
    docids = (4, 0, 2)
    assert plackett_luce_log_prob(scores + 37.5, docids) == pytest.approx(plackett_luce_log_prob(scores, docids), abs=1e-12)


def test_gradient_matches_finite_differences(rng):
    h = 1e-5
    for trial in range(100):
        instance = _random_instance(rng, 6, instance_id=f"fd-{trial}")
        weights = rng.normal(size=4)
        perm = Permutation(tuple(int(i) for i in rng.permutation(6)[:3]))
        analytic = perm_log_prob_grad(SelectorParams(weights), instance, perm)
        numeric = np.zeros(4)
        for i in range(4):
            step = np.zeros(4)
            step[i] = h
            numeric[i] = (
                perm_log_prob(SelectorParams(weights + step), instance, perm)
                - perm_log_prob(SelectorParams(weights - step), instance, perm)
            ) / (2 * h)
        assert np.linalg.norm(analytic - numeric) <= 1e-5 * max(1.0, np.linalg.norm(numeric))


def test_single_document_gradient_is_zero():
    instance = make_instance(["only paris here"], [[0.3, -1.2]])
    grad = perm_log_prob_grad(SelectorParams([1.0, 2.0]), instance, Permutation((0,)))
    assert np.array_equal(grad, np.zeros(2))


def test_equal_features_give_zero_gradient():
    instance = make_instance(["a", "b", "c"], [[1.0, 2.0]] * 3)
    grad = perm_log_prob_grad(SelectorParams([0.5, -0.5]), instance, Permutation((2, 0)))
    assert np.allclose(grad, 0.0, atol=1e-12)


def test_invalid_permutations_are_rejected(capital_instance):
    params = SelectorParams.zeros(3)
    with pytest.raises(InvalidPermutationError):
        perm_log_prob(params, capital_instance, Permutation((0, 0)))
    with pytest.raises(InvalidPermutationError):
        perm_log_prob_grad(params, capital_instance, Permutation((4,)))


class TestSamplePerms:
    def test_shape_and_distinct_entries(self, capital_instance, rng):
        perms = sample_perms(SelectorParams([0.3, -0.2, 0.1]), capital_instance, SelectionConfig(k=3), 50, rng)

        assert len(perms) == 50
        for perm in perms:
            perm.validate(capital_instance.n, 3)

    def test_same_seed_same_draws(self, capital_instance):
        params = SelectorParams([0.3, -0.2, 0.1])
        first = sample_perms(params, capital_instance, SelectionConfig(k=2), 20, np.random.default_rng(5))
        second = sample_perms(params, capital_instance, SelectionConfig(k=2), 20, np.random.default_rng(5))
        assert first == second

    def test_dominant_document_comes_first(self, capital_instance, rng):
        perms = sample_perms(SelectorParams([60.0, 0.0, 0.0]), capital_instance, SelectionConfig(k=2), 200, rng)
        assert all(perm.docids[0] == 0 for perm in perms)

    def test_frequencies_match_probabilities(self):
        instance = make_instance(["a", "b", "c"], [[0.5], [0.0], [-0.7]])
        params = SelectorParams([1.0])
        draws = 60_000
        perms = sample_perms(params, instance, SelectionConfig(k=2), draws, np.random.default_rng(11))
        counts: dict[tuple[int, ...], int] = {}
        for perm in perms:
            counts[perm.docids] = counts.get(perm.docids, 0) + 1

        for perm in enumerate_perms(3, 2):
            p = math.exp(perm_log_prob(params, instance, perm))
            sigma = math.sqrt(draws * p * (1 - p))
            assert abs(counts.get(perm.docids, 0) - draws * p) <= 4 * sigma

    def test_k_larger_than_pool(self, capital_instance, rng):
        with pytest.raises(SelectionConfigError):
            sample_perms(SelectorParams.zeros(3), capital_instance, SelectionConfig(k=5), 1, rng)


def test_greedy_ranking_breaks_ties_by_index(capital_instance):
    assert greedy_ranking(SelectorParams.zeros(3), capital_instance).docids == (0, 1, 2, 3)


def test_greedy_decode_takes_top_k(capital_instance):
    # scores 2, 0, 0, 1
    assert greedy_decode(SelectorParams([1.0, 0.0, 0.0]), capital_instance, SelectionConfig(k=2)).docids == (0, 3)

# ABOUTME: Immutable domain types: task instances, permutations, feature specs and model parameters
# ABOUTME: Instances validate their structural invariants on construction and cache derived arrays

from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property
import threading
from typing import Literal

import numpy as np
import numpy.typing as npt

from app.core.exceptions import (
    DatasetValidationError,
    DimensionMismatchError,
    InvalidPermutationError,
    SelectionConfigError,
)
from app.utils.text import contains_tokens, tokenize

Vector = npt.NDArray[np.float64]
FeatureMode = Literal["provided", "lexical"]


def _frozen_vector(values: npt.ArrayLike) -> Vector:
    array = np.array(values, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class FeatureSpec:
    """Selector feature space: dimension D and how vectors are obtained."""
    dimension: int = 16
    mode: FeatureMode = "lexical"

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise DimensionMismatchError(
                "Feature dimension must be positive",
                error_code="FEATURE_DIMENSION_INVALID",
                context={"dimension": self.dimension},
            )
        if self.mode not in ("provided", "lexical"):
            raise DimensionMismatchError(
                f"Unknown feature mode '{self.mode}'",
                error_code="FEATURE_MODE_INVALID",
            )


@dataclass(frozen=True)
class AnswerFeatureSpec:
    """Generator feature space dimension G."""
    dimension: int = 5

    def __post_init__(self) -> None:
        if self.dimension < 4:
            raise DimensionMismatchError(
                "Answer feature dimension must be at least 4",
                error_code="ANSWER_FEATURE_DIMENSION_INVALID",
                context={"dimension": self.dimension},
            )


@dataclass(frozen=True)
class SelectionConfig:
    """Length K of the sampled document permutations."""
    k: int = 5

    def __post_init__(self) -> None:
        if self.k < 1:
            raise SelectionConfigError(
                "Permutation length must be positive",
                error_code="PERMUTATION_LENGTH_INVALID",
                context={"k": self.k},
            )

    def check_pool(self, n: int, instance_id: str | None = None) -> None:
        """Raise when the pool is too small for a K-permutation."""
        if self.k > n:
            raise SelectionConfigError(
                "Permutation length exceeds candidate pool size",
                error_code="K_EXCEEDS_POOL",
                context={"k": self.k, "n": n, "instance_id": instance_id},
            )


@dataclass(frozen=True)
class Candidate:
    """One document of the candidate pool."""
    doc_id: str
    text: str
    features: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Permutation:
    """Ordered list of distinct pool indices."""
    docids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.docids)

    def validate(self, n: int, k: int | None = None) -> None:
        """Raise InvalidPermutationError unless entries are distinct, in range and of length k."""
        if k is not None and len(self.docids) != k:
            raise InvalidPermutationError(
                "Permutation has the wrong length",
                error_code="PERMUTATION_LENGTH",
                context={"expected": k, "actual": len(self.docids)},
            )
        if len(set(self.docids)) != len(self.docids):
            raise InvalidPermutationError(
                "Permutation repeats a document",
                error_code="PERMUTATION_DUPLICATE",
                context={"docids": self.docids},
            )
        if any(index < 0 or index >= n for index in self.docids):
            raise InvalidPermutationError(
                "Permutation index out of range",
                error_code="PERMUTATION_OUT_OF_RANGE",
                context={"docids": self.docids, "n": n},
            )


# answer feature matrices kept per instance before the least recently used is dropped
FEATURE_CACHE_SIZE = 512


class FeatureMatrixCache:
    """Bounded LRU map from (permutation, dimension) to an answer feature matrix."""

    def __init__(self, max_size: int = FEATURE_CACHE_SIZE):
        self.max_size = max_size
        self.evictions = 0
        self._entries: OrderedDict[tuple[tuple[int, ...], int], Vector] = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key: tuple[tuple[int, ...], int]) -> Vector | None:
        with self._lock:
            matrix = self._entries.get(key)
            if matrix is not None:
                self._entries.move_to_end(key)
            return matrix

    def put(self, key: tuple[tuple[int, ...], int], matrix: Vector) -> None:
        with self._lock:
            self._entries[key] = matrix
            self._entries.move_to_end(key)
            while len(self._entries) > self.max_size:
                self._entries.popitem(last=False)
                self.evictions += 1

    def __contains__(self, key: object) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class Instance:
    """One task: query, candidate pool, closed answer set and gold answer."""
    id: str
    query: str
    answer: str
    answer_candidates: tuple[str, ...]
    candidates: tuple[Candidate, ...]

    def __post_init__(self) -> None:
        if not self.candidates:
            raise DatasetValidationError(
                "Instance has an empty candidate pool",
                error_code="EMPTY_POOL",
                context={"instance_id": self.id, "field": "candidates"},
            )
        doc_ids = [candidate.doc_id for candidate in self.candidates]
        if len(set(doc_ids)) != len(doc_ids):
            raise DatasetValidationError(
                "Instance has duplicate doc_ids",
                error_code="DUPLICATE_DOC_ID",
                context={"instance_id": self.id, "field": "candidates.doc_id"},
            )
        if self.answer_candidates.count(self.answer) != 1:
            raise DatasetValidationError(
                "Gold answer must appear exactly once in answer_candidates",
                error_code="GOLD_NOT_UNIQUE",
                context={"instance_id": self.id, "field": "answer_candidates"},
            )
        dimensions = {len(c.features) for c in self.candidates if c.features is not None}
        if len(dimensions) > 1:
            raise DatasetValidationError(
                "Candidates disagree on feature dimension",
                error_code="FEATURE_DIMENSION_MIXED",
                context={"instance_id": self.id, "field": "candidates.features"},
            )

    @property
    def n(self) -> int:
        return len(self.candidates)

    @property
    def gold_index(self) -> int:
        return self.answer_candidates.index(self.answer)

    @cached_property
    def feature_matrix(self) -> Vector:
        """(n, D) matrix of candidate features; every candidate must carry features."""
        if any(candidate.features is None for candidate in self.candidates):
            raise DimensionMismatchError(
                "Candidate features are missing",
                error_code="FEATURES_MISSING",
                context={"instance_id": self.id},
            )
        return _frozen_vector([candidate.features for candidate in self.candidates])

    @cached_property
    def query_tokens(self) -> tuple[str, ...]:
        return tokenize(self.query)

    @cached_property
    def doc_tokens(self) -> tuple[tuple[str, ...], ...]:
        return tuple(tokenize(candidate.text) for candidate in self.candidates)

    @cached_property
    def answer_tokens(self) -> tuple[tuple[str, ...], ...]:
        return tuple(tokenize(answer) for answer in self.answer_candidates)

    @cached_property
    def containment(self) -> npt.NDArray[np.bool_]:
        """(n, |answers|) flags: document j contains answer a as a token subsequence."""
        table = np.array(
            [[contains_tokens(doc, answer) for answer in self.answer_tokens] for doc in self.doc_tokens],
            dtype=bool,
        )
        table.setflags(write=False)
        return table

    @cached_property
    def query_support(self) -> Vector:
        """Fraction of query tokens present in each document."""
        query = self.query_tokens
        if not query:
            return _frozen_vector(np.zeros(self.n))
        vocabularies = [set(doc) for doc in self.doc_tokens]
        return _frozen_vector([
            sum(1 for token in query if token in vocab) / len(query)
            for vocab in vocabularies
        ])

    @cached_property
    def bridge_vocab(self) -> tuple[frozenset[str], ...]:
        """Per document, the tokens that are not query tokens."""
        query = set(self.query_tokens)
        return tuple(frozenset(doc) - query for doc in self.doc_tokens)

    @cached_property
    def answer_feature_cache(self) -> FeatureMatrixCache:
        """Answer feature matrices keyed by (permutation, dimension); they do not depend on parameters."""
        return FeatureMatrixCache()

    def answer_index(self, answer: str) -> int | None:
        """Position of ``answer`` in the candidate set, or None when absent."""
        try:
            return self.answer_candidates.index(answer)
        except ValueError:
            return None


@dataclass(frozen=True, eq=False)
class SelectorParams:
    """Weights of the linear document scorer."""
    weights: Vector = field(default_factory=lambda: _frozen_vector([]))

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", _frozen_vector(self.weights))
        if not np.all(np.isfinite(self.weights)):
            raise DimensionMismatchError(
                "Selector weights must be finite",
                error_code="SELECTOR_WEIGHTS_NON_FINITE",
            )

    @classmethod
    def zeros(cls, dimension: int) -> "SelectorParams":
        return cls(np.zeros(dimension))


@dataclass(frozen=True, eq=False)
class GeneratorParams:
    """Weights of the log-linear answer model."""
    weights: Vector = field(default_factory=lambda: _frozen_vector([]))

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", _frozen_vector(self.weights))
        if not np.all(np.isfinite(self.weights)):
            raise DimensionMismatchError(
                "Generator weights must be finite",
                error_code="GENERATOR_WEIGHTS_NON_FINITE",
            )

    @classmethod
    def zeros(cls, dimension: int) -> "GeneratorParams":
        return cls(np.zeros(dimension))

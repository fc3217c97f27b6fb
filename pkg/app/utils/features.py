"""Deterministic lexical features for (query, document) pairs."""

import math

import numpy as np

from app.core.exceptions import DimensionMismatchError
from app.models.types import FeatureSpec, Vector
from app.utils.hashing import stable_hash
from app.utils.text import tokenize

# overlap count, normalized overlap, log document length
LEXICAL_HEAD = 3


def featurize(query: str, doc_text: str, spec: FeatureSpec) -> Vector:
    """Lexical feature vector of length ``spec.dimension``.

    Layout: [0] number of query tokens present in the document, [1] that count
    divided by the query length, [2] log(1 + document length), [3:] hashed
    buckets counting the overlapping query tokens.
    """
    if spec.dimension < LEXICAL_HEAD:
        raise DimensionMismatchError(
            "Lexical features need at least three dimensions",
            error_code="LEXICAL_DIMENSION_TOO_SMALL",
            context={"dimension": spec.dimension},
        )
    query_tokens = tokenize(query)
    doc_tokens = tokenize(doc_text)
    doc_vocab = set(doc_tokens)
    overlapping = [token for token in query_tokens if token in doc_vocab]

    vector = np.zeros(spec.dimension)
    vector[0] = len(overlapping)
    vector[1] = len(overlapping) / len(query_tokens) if query_tokens else 0.0
    vector[2] = math.log1p(len(doc_tokens))
    buckets = spec.dimension - LEXICAL_HEAD
    if buckets:
        for token in overlapping:
            vector[LEXICAL_HEAD + stable_hash(token) % buckets] += 1.0
    return vector


def query_overlap(query_tokens: tuple[str, ...], doc_tokens: tuple[str, ...]) -> float:
    """Fraction of query tokens that occur in the document (0 for an empty query)."""
    if not query_tokens:
        return 0.0
    doc_vocab = set(doc_tokens)
    return sum(1 for token in query_tokens if token in doc_vocab) / len(query_tokens)

# ABOUTME: Deterministic synthetic multi-hop retrieval tasks whose optimal behaviour is known by construction
# ABOUTME: Evidence chains linked by bridge terms, distractor documents carrying wrong answers, and noise documents

import numpy as np

from app.core.config import TaskSpec
from app.core.exceptions import TaskSpecError
from app.core.structured_logging import get_logger, log_service_operation
from app.models.types import Candidate, FeatureSpec, Instance
from app.utils.features import LEXICAL_HEAD, featurize
from app.utils.hashing import derive_seed

logger = get_logger(__name__)

FILLERS_PER_DOC = 4
# entity pair and relation of the query
QUERY_TERMS = 3


def terms_needed(spec: TaskSpec) -> int:
    """Distinct vocabulary terms one instance draws."""
    bridges = spec.hops - 1
    distractor_entities = spec.num_distractor_answers
    return QUERY_TERMS + bridges + 1 + spec.num_distractor_answers + distractor_entities + spec.n * FILLERS_PER_DOC


def validate_task_spec(spec: TaskSpec, feature: FeatureSpec) -> None:
    """Raise TaskSpecError listing every violated constraint."""
    errors = []
    if spec.num_instances < 0:
        errors.append("num_instances must be non-negative")
    if not (1 <= spec.hops <= 3):
        errors.append("hops must be between 1 and 3")
    if spec.n < spec.hops + 2:
        errors.append("n must be at least hops + 2")
    if spec.num_distractor_answers < 1:
        errors.append("num_distractor_answers must be positive")
    if spec.feature_noise < 0:
        errors.append("feature_noise must be non-negative")
    if spec.vocab_size < terms_needed(spec):
        errors.append(f"vocab_size must be at least {terms_needed(spec)}")
    if feature.mode == "provided" and feature.dimension < LEXICAL_HEAD + 1:
        errors.append(f"provided features need dimension of at least {LEXICAL_HEAD + 1}")
    if errors:
        raise TaskSpecError(
            f"Invalid task spec: {'; '.join(errors)}",
            error_code="TASK_SPEC_INVALID",
            context={"spec": spec},
        )


def _render(index: int, width: int) -> str:
    return f"term{index:0{width}d}"


def _document(rng: np.random.Generator, key_terms: list[str], fillers: list[str]) -> str:
    tokens = key_terms + fillers
    return " ".join(tokens[i] for i in rng.permutation(len(tokens)))


def _generate_instance(spec: TaskSpec, feature: FeatureSpec, index: int) -> Instance:
    rng = np.random.default_rng(derive_seed(spec.seed, "instance", index))
    width = max(4, len(str(spec.vocab_size - 1)))
    drawn = [_render(int(i), width) for i in rng.choice(spec.vocab_size, size=terms_needed(spec), replace=False)]

    entity_a, entity_b, relation = drawn[:QUERY_TERMS]
    cursor = QUERY_TERMS
    bridges = drawn[cursor:cursor + spec.hops - 1]
    cursor += spec.hops - 1
    gold = drawn[cursor]
    cursor += 1
    distractor_answers = drawn[cursor:cursor + spec.num_distractor_answers]
    cursor += spec.num_distractor_answers
    distractor_entities = drawn[cursor:cursor + spec.num_distractor_answers]
    cursor += spec.num_distractor_answers
    fillers = drawn[cursor:]

    def next_fillers(doc: int) -> list[str]:
        return fillers[doc * FILLERS_PER_DOC:(doc + 1) * FILLERS_PER_DOC]

    # (text, is_evidence)
    docs: list[tuple[str, bool]] = []
    chain = [*bridges, gold]
    for hop in range(spec.hops):
        head = [entity_a, entity_b, relation] if hop == 0 else [chain[hop - 1]]
        docs.append((_document(rng, [*head, chain[hop]], next_fillers(len(docs))), True))
    for entity, answer in list(zip(distractor_entities, distractor_answers, strict=True))[:spec.n - spec.hops]:
        docs.append((_document(rng, [entity, relation, answer], next_fillers(len(docs))), False))
    while len(docs) < spec.n:
        docs.append((_document(rng, [], next_fillers(len(docs))), False))

    query = f"{entity_a} {entity_b} {relation}"
    instance_id = f"syn-{spec.seed}-{index:05d}"
    candidates = []
    for position, doc_index in enumerate(rng.permutation(spec.n)):
        text, is_evidence = docs[int(doc_index)]
        if feature.mode == "provided":
            relevance = (1.0 if is_evidence else 0.0) + (rng.normal(0.0, spec.feature_noise) if spec.feature_noise > 0 else 0.0)
            lexical = featurize(query, text, FeatureSpec(dimension=feature.dimension - 1, mode="lexical"))
            vector = np.concatenate([[relevance], lexical])
        else:
            vector = featurize(query, text, feature)
        candidates.append(Candidate(
            doc_id=f"{instance_id}-d{position:02d}",
            text=text,
            features=tuple(float(v) for v in vector),
        ))

    answers = [gold, *distractor_answers]
    return Instance(
        id=instance_id,
        query=query,
        answer=gold,
        answer_candidates=tuple(answers[int(i)] for i in rng.permutation(len(answers))),
        candidates=tuple(candidates),
    )


def generate_task(spec: TaskSpec, feature: FeatureSpec | None = None) -> list[Instance]:
    """Generate ``spec.num_instances`` instances; a pure function of the spec.

    Each instance holds ``hops`` evidence documents: the first repeats the query
    terms, every later one starts from the previous bridge term, and the last
    contains the gold answer. Distractor documents share the query relation and
    carry a wrong answer each; the rest of the pool is filler text. In provided
    mode feature 0 is the evidence indicator plus Gaussian noise of scale
    ``feature_noise`` and the remaining features are lexical.
    """
    feature = feature or FeatureSpec(dimension=16, mode="provided")
    validate_task_spec(spec, feature)
    instances = [_generate_instance(spec, feature, index) for index in range(spec.num_instances)]
    log_service_operation(
        logger, "synthetic_task", "generate",
        instances=len(instances), n=spec.n, hops=spec.hops, seed=spec.seed,
    )
    return instances


def split_task(instances: list[Instance], validation_fraction: float) -> tuple[list[Instance], list[Instance]]:
    """Leading instances go to training, the trailing ``round(len * fraction)`` to validation."""
    validation_size = int(round(len(instances) * validation_fraction))
    cut = len(instances) - validation_size
    return instances[:cut], instances[cut:]

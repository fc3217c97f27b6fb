# ABOUTME: Result records produced by estimation, maximization, oracles, training and evaluation
# ABOUTME: Plain frozen dataclasses with dict conversion for JSON logs and report files

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from app.models.types import GeneratorParams, Permutation, SelectorParams, Vector


@dataclass(frozen=True)
class WeightedSample:
    """A sampled permutation with its log-probabilities and importance weights."""
    perm: Permutation
    selector_log_prob: float
    generator_log_prob: float
    raw_weight: float
    norm_weight: float


@dataclass(frozen=True)
class WeightedSampleSet:
    """The m weighted permutations of one instance."""
    instance_id: str
    samples: tuple[WeightedSample, ...]

    @property
    def m(self) -> int:
        return len(self.samples)

    def raw_weights(self) -> Vector:
        return np.array([sample.raw_weight for sample in self.samples])

    def norm_weights(self) -> Vector:
        return np.array([sample.norm_weight for sample in self.samples])

    def elbo_estimate(self) -> float:
        """Weighted log-joint Σ ŵ_i [log p(z_i|x) + log p(y|x,d_z_i)].

        The entropy term of the bound does not depend on the parameters being
        optimized and is left out.
        """
        return float(sum(
            s.norm_weight * (s.selector_log_prob + s.generator_log_prob)
            for s in self.samples
        ))


@dataclass(frozen=True, eq=False)
class GradReport:
    """Loss value and gradient for one parameter vector."""
    loss: float
    grad: Vector


@dataclass(frozen=True, eq=False)
class PosteriorTable:
    """Exact distributions over every K-permutation of one instance.

    Log-space copies of the proposal and likelihood are kept so log-joint terms
    stay finite when a probability underflows.
    """
    instance_id: str
    perms: tuple[Permutation, ...]
    proposal_probs: Vector
    likelihoods: Vector
    joint_probs: Vector
    posterior_probs: Vector
    marginal: float
    log_proposal_probs: Vector
    log_likelihoods: Vector
    log_marginal: float

    @property
    def log_joint_probs(self) -> Vector:
        return self.log_proposal_probs + self.log_likelihoods


@dataclass(frozen=True)
class ElboEstimate:
    """Exact evidence lower bound of one variational distribution."""
    elbo: float
    log_marginal: float
    gap: float
    entropy: float


@dataclass(frozen=True)
class VarianceReport:
    """Variance of a function under the posterior versus importance weighting."""
    var_posterior_f: float
    var_proposal_weighted_f: float
    delta_var_exact: float
    delta_var_likelihood_form: float
    delta_var_ratio_form: float
    mean_posterior_f: float
    mean_proposal_weighted_f: float


@dataclass(frozen=True)
class MetricReport:
    """Mean EM, F1 and Recall@K over ``count`` instances."""
    em: float
    f1: float
    recall_at: dict[int, float]
    count: int
    baseline_recall_at: dict[int, float] = field(default_factory=dict)

    def metric(self, name: str) -> float:
        """Look up ``em``, ``f1`` or ``recall_at_k`` (k = 1, 3, 5)."""
        if name == "em":
            return self.em
        if name == "f1":
            return self.f1
        if name.startswith("recall_at_"):
            return self.recall_at[int(name.removeprefix("recall_at_"))]
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["recall_at"] = {str(k): v for k, v in self.recall_at.items()}
        payload["baseline_recall_at"] = {str(k): v for k, v in self.baseline_recall_at.items()}
        return payload


@dataclass(frozen=True)
class IterationRecord:
    """Trace of one training iteration."""
    iteration: int
    train_elbo_estimate: float
    validation_metrics: MetricReport
    mean_raw_weight: float
    weight_variance: float
    wall_time: float
    oracle_log_marginal: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "train_elbo_estimate": self.train_elbo_estimate,
            "validation_metrics": self.validation_metrics.to_dict(),
            "mean_raw_weight": self.mean_raw_weight,
            "weight_variance": self.weight_variance,
            "wall_time": self.wall_time,
            "oracle_log_marginal": self.oracle_log_marginal,
        }


@dataclass(frozen=True, eq=False)
class EarlyStopState:
    """Early-stopping bookkeeping after an iteration: the best validation value, its parameters and the non-improving streak."""
    best_value: float
    best_iteration: int
    best_selector: SelectorParams
    best_generator: GeneratorParams
    stale: int


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Both parameter vectors at a given iteration, tagged with a config fingerprint.

    Checkpoints written during training also carry the early-stopping state.
    """
    selector: SelectorParams
    generator: GeneratorParams
    iteration: int
    fingerprint: str
    early_stop: EarlyStopState | None = None


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one oracle validation check."""
    name: str
    passed: bool
    measured: dict[str, Any]
    detail: str = ""


@dataclass(frozen=True)
class OracleSuiteReport:
    """All oracle checks of one suite run."""
    checks: tuple[CheckResult, ...]
    seed: int

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> list[str]:
        return [check.name for check in self.checks if not check.passed]

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "passed": self.passed,
            "failures": self.failures,
            "checks": [asdict(check) for check in self.checks],
        }


@dataclass(frozen=True)
class SweepRow:
    """One iteration of one sampling-number run."""
    m: int
    iteration: int
    f1: float
    em: float
    recall_5: float
    weight_variance: float

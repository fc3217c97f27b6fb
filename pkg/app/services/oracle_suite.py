# ABOUTME: Validation suite checking the estimator identities against exact enumeration
# ABOUTME: Normalization, Jensen gap, tightness, Monte Carlo unbiasedness, variance identities and exact-EM monotonicity

from collections.abc import Callable, Sequence
import math

import numpy as np

from app.core.config import OptimizerConfig, OracleConfig, TaskSpec, TrainConfig
from app.core.structured_logging import get_logger, log_performance_metric, log_service_operation
from app.models.reports import CheckResult, OracleSuiteReport
from app.models.types import (
    Candidate,
    FeatureSpec,
    GeneratorParams,
    Instance,
    SelectionConfig,
    SelectorParams,
)
from app.services.estimation_service import WeightNormalizer, estimate, normalize_log_weights, normalize_weights
from app.services.oracle_service import (
    check_enumeration_cap,
    enumerate_perms,
    exact_elbo,
    exact_log_likelihood,
    exact_posterior,
    variance_report,
)
from app.services.selection_policy import perm_log_prob
from app.services.synthetic_task_service import generate_task
from app.services.training_service import TrainingService
from app.utils.hashing import derive_seed
from app.utils.performance_monitor import measure_time

logger = get_logger(__name__)

TIGHTNESS_TOLERANCE = 1e-10
IDENTITY_TOLERANCE = 1e-10
LIKELIHOOD_FORM_TOLERANCE = 1e-12
NORMALIZATION_TOLERANCE = 1e-12
MONOTONICITY_SLACK = 1e-9
UNBIASED_PASS_RATE = 0.95
PL_NORMALIZATION_MAX_N = 5
PL_NORMALIZATION_DRAWS = 50
RANDOM_FEATURE_DIMENSION = 6
RANDOM_ANSWERS = 4


def random_instance(rng: np.random.Generator, n: int, instance_id: str, answers: int = RANDOM_ANSWERS,
                    dimension: int = RANDOM_FEATURE_DIMENSION) -> Instance:
    """Small instance with Gaussian features and answers scattered over the documents at random."""
    answer_terms = [f"answer{a}" for a in range(answers)]
    query_terms = ["alpha", "beta", "gamma"]
    candidates = []
    for j in range(n):
        tokens = [term for term in query_terms if rng.random() < 0.5]
        tokens += [term for term in answer_terms if rng.random() < 0.4]
        tokens += [f"filler{j}x{t}" for t in range(2)]
        candidates.append(Candidate(
            doc_id=f"{instance_id}-d{j}",
            text=" ".join(tokens),
            features=tuple(float(v) for v in rng.normal(0.0, 1.0, dimension)),
        ))
    return Instance(
        id=instance_id,
        query=" ".join(query_terms),
        answer=answer_terms[int(rng.integers(answers))],
        answer_candidates=tuple(answer_terms),
        candidates=tuple(candidates),
    )


def random_params(rng: np.random.Generator, dimension: int, answer_dimension: int = 5) -> tuple[SelectorParams, GeneratorParams]:
    return SelectorParams(rng.normal(0.0, 1.0, dimension)), GeneratorParams(rng.normal(0.0, 1.0, answer_dimension))


class OracleSuite:
    """Runs every oracle check and collects the measured values.

    ``instances`` replaces the random small-pool instances of the ELBO, variance
    and unbiasedness checks; ``normalizer`` is the weight normalization under
    test.
    """

    def __init__(
        self,
        config: OracleConfig,
        cap: int,
        instances: Sequence[Instance] | None = None,
        normalizer: WeightNormalizer = normalize_log_weights,
    ) -> None:
        self.config = config
        self.cap = cap
        self.instances = list(instances) if instances is not None else None
        self.normalizer = normalizer

    def _rng(self, *parts: object) -> np.random.Generator:
        return np.random.default_rng(derive_seed(self.config.seed, "oracle", *parts))

    def _check_caps(self) -> None:
        check_enumeration_cap(PL_NORMALIZATION_MAX_N, PL_NORMALIZATION_MAX_N, self.cap)
        check_enumeration_cap(self.config.em_n, self.config.em_k, self.cap)
        if self.instances is None:
            check_enumeration_cap(self.config.n, self.config.k, self.cap)
        else:
            for instance in self.instances:
                check_enumeration_cap(instance.n, self.config.k, self.cap)

    def _instances(self, count: int, label: str) -> list[Instance]:
        if self.instances is not None:
            return self.instances
        rng = self._rng(label, "instances")
        return [random_instance(rng, self.config.n, f"{label}-{i}") for i in range(count)]

    def run(self) -> OracleSuiteReport:
        """Validate every enumeration size first, then run the checks in order."""
        self._check_caps()
        checks: list[Callable[[], CheckResult]] = [
            self.check_pl_normalization,
            self.check_elbo,
            self.check_unbiasedness,
            self.check_variance_identities,
            self.check_weight_normalization,
            self.check_exact_em_monotonicity,
        ]
        results = []
        for check in checks:
            with measure_time() as timer:
                result = check()
            log_performance_metric(logger, f"oracle.{result.name}", timer.elapsed_ms, passed=result.passed)
            results.append(result)
        report = OracleSuiteReport(checks=tuple(results), seed=self.config.seed)
        log_service_operation(logger, "oracle", "suite", passed=report.passed, failures=report.failures)
        return report

    def check_pl_normalization(self) -> CheckResult:
        """Selector probabilities over every K-permutation sum to one for n ≤ 5."""
        rng = self._rng("pl_normalization")
        worst = 0.0
        for draw in range(PL_NORMALIZATION_DRAWS):
            for n in range(1, PL_NORMALIZATION_MAX_N + 1):
                instance = random_instance(rng, n, f"pl-{draw}-{n}")
                selector, _ = random_params(rng, RANDOM_FEATURE_DIMENSION)
                for k in range(1, n + 1):
                    total = math.fsum(math.exp(perm_log_prob(selector, instance, perm)) for perm in enumerate_perms(n, k, self.cap))
                    worst = max(worst, abs(total - 1.0))
        return CheckResult("pl_normalization", worst <= IDENTITY_TOLERANCE, {"max_abs_error": worst})

    def check_elbo(self) -> CheckResult:
        """Jensen gap is non-negative for random q and vanishes at the posterior."""
        rng = self._rng("elbo")
        selection = SelectionConfig(k=self.config.k)
        min_gap = math.inf
        max_tight_gap = 0.0
        for instance in self._instances(self.config.num_instances, "elbo"):
            selector, generator = random_params(rng, instance.feature_matrix.shape[1])
            table = exact_posterior(selector, generator, instance, selection, self.cap)
            max_tight_gap = max(max_tight_gap, abs(exact_elbo(table, table.posterior_probs).gap))
            for _ in range(self.config.random_q):
                q = rng.dirichlet(np.ones(len(table.perms)))
                min_gap = min(min_gap, exact_elbo(table, q).gap)
        passed = min_gap >= -TIGHTNESS_TOLERANCE and max_tight_gap <= TIGHTNESS_TOLERANCE
        return CheckResult("elbo_jensen_and_tightness", passed, {"min_gap": min_gap, "max_gap_at_posterior": max_tight_gap})

    def check_unbiasedness(self) -> CheckResult:
        """Monte Carlo means of w·f match the enumerated Σ_z p(z|x) w(z) f(z) within three standard errors."""
        rng = self._rng("unbiasedness")
        selection = SelectionConfig(k=self.config.k)
        instances = self._instances(self.config.num_instances, "unbiasedness")
        passes = {"constant": 0, "selector_log_prob": 0}
        for instance in instances:
            selector, generator = random_params(rng, instance.feature_matrix.shape[1])
            table = exact_posterior(selector, generator, instance, selection, self.cap)
            log_probs = dict(zip((perm.docids for perm in table.perms), table.log_proposal_probs, strict=True))
            samples = estimate(selector, generator, instance, selection, self.config.mc_samples, rng)
            weights = samples.raw_weights()
            functions = {
                "constant": (np.ones(len(weights)), table.marginal),
                "selector_log_prob": (
                    np.array([sample.selector_log_prob for sample in samples.samples]),
                    float(table.joint_probs @ np.array([log_probs[perm.docids] for perm in table.perms])),
                ),
            }
            for name, (values, exact) in functions.items():
                products = weights * values
                standard_error = products.std(ddof=1) / math.sqrt(len(products))
                if abs(products.mean() - exact) <= max(3.0 * standard_error, 1e-12):
                    passes[name] += 1

        required = math.ceil(UNBIASED_PASS_RATE * len(instances))
        passed = all(count >= required for count in passes.values())
        return CheckResult(
            "importance_sampling_unbiasedness", passed,
            {**{f"passes_{name}": count for name, count in passes.items()}, "instances": len(instances), "required": required},
        )

    def check_variance_identities(self) -> CheckResult:
        """Variance difference equals E_post[f²(r−1)], the likelihood form is non-positive, E_prop[r f] = E_post[f]."""
        rng = self._rng("variance")
        selection = SelectionConfig(k=self.config.k)
        worst_identity = 0.0
        worst_ratio = 0.0
        max_likelihood_form = -math.inf
        for instance in self._instances(self.config.variance_instances, "variance"):
            selector, generator = random_params(rng, instance.feature_matrix.shape[1])
            table = exact_posterior(selector, generator, instance, selection, self.cap)
            values = dict(zip((perm.docids for perm in table.perms), rng.normal(0.0, 1.0, len(table.perms)), strict=True))
            report = variance_report(table, lambda perm: float(values[perm.docids]))
            worst_identity = max(worst_identity, abs(report.delta_var_exact - report.delta_var_ratio_form))
            worst_ratio = max(worst_ratio, abs(report.mean_proposal_weighted_f - report.mean_posterior_f))
            max_likelihood_form = max(max_likelihood_form, report.delta_var_likelihood_form)
        passed = (
            worst_identity <= IDENTITY_TOLERANCE
            and worst_ratio <= IDENTITY_TOLERANCE
            and max_likelihood_form <= LIKELIHOOD_FORM_TOLERANCE
        )
        return CheckResult("variance_identities", passed, {
            "max_identity_error": worst_identity,
            "max_ratio_identity_error": worst_ratio,
            "max_likelihood_form": max_likelihood_form,
        })

    def check_weight_normalization(self) -> CheckResult:
        """Normalized weights sum to one and stay proportional to the raw weights."""
        rng = self._rng("normalization")
        selection = SelectionConfig(k=self.config.k)
        worst_sum = 0.0
        worst_ratio = 0.0
        for instance in self._instances(self.config.num_instances, "normalization"):
            selector, generator = random_params(rng, instance.feature_matrix.shape[1])
            samples = estimate(selector, generator, instance, selection, 16, rng, self.normalizer)
            norm = samples.norm_weights()
            raw = samples.raw_weights()
            worst_sum = max(worst_sum, abs(norm.sum() - 1.0))
            worst_ratio = max(worst_ratio, float(np.max(np.abs(norm - normalize_weights(raw)))))
        passed = worst_sum <= NORMALIZATION_TOLERANCE and worst_ratio <= NORMALIZATION_TOLERANCE
        return CheckResult("weight_normalization", passed, {"max_sum_error": worst_sum, "max_proportion_error": worst_ratio})

    def check_exact_em_monotonicity(self) -> CheckResult:
        """Exact-posterior EM never lowers the mean log-likelihood of the training set."""
        cfg = self.config
        task = TaskSpec(num_instances=cfg.em_instances, n=cfg.em_n, hops=1, num_distractor_answers=3, seed=cfg.seed)
        feature = FeatureSpec(dimension=8, mode="provided")
        instances = generate_task(task, feature)
        optimizer = OptimizerConfig(learning_rate=0.5, weight_decay=0.0, momentum=0.0, inner_steps=cfg.em_inner_steps)
        train_config = TrainConfig(
            max_iterations=cfg.em_iterations,
            k=cfg.em_k,
            estep_mode="exact",
            patience=cfg.em_iterations,
            seed=cfg.seed,
            selector_optimizer=optimizer,
            generator_optimizer=optimizer,
            enumeration_cap=self.cap,
        )
        service = TrainingService(train_config, feature)
        selector, generator = service.initial_params()
        trace = [exact_log_likelihood(selector, generator, instances, train_config.selection, self.cap)]
        _, records = service.run_training(instances, instances)
        trace += [record.oracle_log_marginal for record in records if record.oracle_log_marginal is not None]
        steps = [after - before for before, after in zip(trace, trace[1:])]
        passed = len(trace) == cfg.em_iterations + 1 and all(step >= -MONOTONICITY_SLACK for step in steps)
        return CheckResult("exact_em_monotonicity", passed, {
            "log_likelihood_trace": trace,
            "min_step": min(steps) if steps else 0.0,
        })


def run_oracle_suite(
    config: OracleConfig,
    cap: int,
    instances: Sequence[Instance] | None = None,
    normalizer: WeightNormalizer = normalize_log_weights,
) -> OracleSuiteReport:
    return OracleSuite(config, cap, instances, normalizer).run()
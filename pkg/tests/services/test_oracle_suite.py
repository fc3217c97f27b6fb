import pytest

from app.core.config import OracleConfig
from app.core.exceptions import EnumerationCapExceededError
from app.models.reports import CheckResult
from app.services.estimation_service import normalize_log_weights
from app.services.oracle_suite import OracleSuite, random_instance, random_params, run_oracle_suite

SMALL = OracleConfig(
    num_instances=5,
    mc_samples=2000,
    random_q=10,
    variance_instances=10,
    em_instances=5,
    em_inner_steps=20,
    em_iterations=3,
)


def _halved(log_weights):
    return normalize_log_weights(log_weights) / 2.0


def test_random_instance_is_well_formed(rng):
    instance = random_instance(rng, 5, "r-0")

    assert instance.n == 5
    assert instance.feature_matrix.shape == (5, 6)
    assert instance.answer in instance.answer_candidates


def test_random_params_shapes(rng):
    selector, generator = random_params(rng, 6)
    assert selector.weights.shape == (6,)
    assert generator.weights.shape == (5,)


@pytest.mark.parametrize(
    ("check", "name"),
    [
        ("check_pl_normalization", "pl_normalization"),
        ("check_elbo", "elbo_jensen_and_tightness"),
        ("check_variance_identities", "variance_identities"),
        ("check_weight_normalization", "weight_normalization"),
        ("check_exact_em_monotonicity", "exact_em_monotonicity"),
    ],
)
def test_exact_checks_pass(check, name):
    result = getattr(OracleSuite(SMALL, cap=50000), check)()

    assert result.name == name
    assert result.passed, result.measured


def test_em_trace_covers_every_iteration():
    result = OracleSuite(SMALL, cap=50000).check_exact_em_monotonicity()
    assert len(result.measured["log_likelihood_trace"]) == SMALL.em_iterations + 1


def test_broken_normalizer_is_detected():
    result = OracleSuite(SMALL, cap=50000, normalizer=_halved).check_weight_normalization()

    assert not result.passed
    assert result.measured["max_sum_error"] == pytest.approx(0.5)


def test_supplied_instances_replace_random_ones(capital_instance):
    suite = OracleSuite(SMALL, cap=50000, instances=[capital_instance])

    assert suite.check_elbo().passed
    assert suite.check_variance_identities().passed


def test_cap_is_checked_before_any_check_runs(mocker):
    spy = mocker.spy(OracleSuite, "check_pl_normalization")

    with pytest.raises(EnumerationCapExceededError):
        OracleSuite(OracleConfig(n=9, k=5), cap=1000).run()

    assert spy.call_count == 0


def test_report_lists_failing_checks(mocker):
    skipped = CheckResult("importance_sampling_unbiasedness", True, {})
    mocker.patch.object(OracleSuite, "check_unbiasedness", return_value=skipped)
    report = OracleSuite(SMALL, cap=50000, normalizer=_halved).run()

    assert not report.passed
    assert report.failures == ["weight_normalization"]
    assert len(report.checks) == 6


@pytest.mark.slow
def test_default_suite_passes():
    report = run_oracle_suite(OracleConfig(), cap=50000)
    assert report.passed, report.failures

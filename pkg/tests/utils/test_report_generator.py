from datetime import datetime, timezone

UTC = timezone.utc

from app.models.reports import CheckResult, MetricReport, OracleSuiteReport, SweepRow
from app.utils.report_generator import create_metric_report, create_oracle_report, create_sweep_report

TIMESTAMP = datetime(2026, 1, 2, 3, 4, 5, tzinfo=UTC)


def test_oracle_report_lists_checks_and_failures():
    report = OracleSuiteReport(
        checks=(
            CheckResult("pl_normalization", True, {"max_abs_error": 1e-15}),
            CheckResult("variance_identities", False, {"max_identity_error": 0.5, "trace": [0.25, 1]}),
        ),
        seed=3,
    )

    result = create_oracle_report(report, TIMESTAMP)

    assert "# Oracle validation report" in result
    assert "2026-01-02 03:04:05 UTC | seed 3" in result
    assert "**Result: 1 check(s) failed**" in result
    assert "| pl_normalization | PASS | max_abs_error=1e-15 |" in result
    assert "| variance_identities | FAIL | max_identity_error=0.5; trace=[0.25, 1] |" in result
    assert "## Failures" in result
    assert "- variance_identities" in result


def test_oracle_report_all_passed():
    report = OracleSuiteReport(checks=(CheckResult("pl_normalization", True, {}),), seed=0)

    result = create_oracle_report(report, TIMESTAMP)

    assert "**Result: all checks passed**" in result
    assert "## Failures" not in result


def test_metric_report_table():
    report = MetricReport(
        em=0.5, f1=0.75, recall_at={1: 0.25, 3: 0.5, 5: 1.0}, count=4,
        baseline_recall_at={1: 0.125, 3: 0.25, 5: 0.375},
    )

    result = create_metric_report(report, TIMESTAMP)

    assert "4 instances" in result
    assert "| EM | 0.5 | |" in result
    assert "| F1 | 0.75 | |" in result
    assert "| Recall@1 | 0.25 | 0.125 |" in result
    assert "| Recall@5 | 1 | 0.375 |" in result


def test_metric_report_without_baseline():
    report = MetricReport(em=1.0, f1=1.0, recall_at={1: 1.0}, count=1)
    assert "| Recall@1 | 1 |  |" in create_metric_report(report, TIMESTAMP)


def test_sweep_report_summarizes_each_m():
    rows = [
        SweepRow(m=4, iteration=1, f1=0.5, em=0.5, recall_5=0.75, weight_variance=0.02),
        SweepRow(m=1, iteration=2, f1=0.1, em=0.0, recall_5=0.5, weight_variance=0.01),
        SweepRow(m=1, iteration=1, f1=0.2, em=0.0, recall_5=0.25, weight_variance=0.03),
    ]

    result = create_sweep_report(rows, TIMESTAMP)

    assert "| 1 | 2 | 0.1 | 0 | 0.5 | 0.2 | 0.01 |" in result
    assert "| 4 | 1 | 0.5 | 0.5 | 0.75 | 0.5 | 0.02 |" in result
    assert result.index("| 1 | 2 |") < result.index("| 4 | 1 |")

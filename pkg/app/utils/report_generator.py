# ABOUTME: Markdown report generator using Jinja2 templates for oracle, evaluation and sweep results
# ABOUTME: Renders check tables with measured values and per-m convergence tables

from collections.abc import Sequence
from datetime import datetime, timezone

UTC = timezone.utc
from typing import Any

from jinja2 import BaseLoader, Environment, StrictUndefined

from app.models.reports import MetricReport, OracleSuiteReport, SweepRow


class StringTemplateLoader(BaseLoader):
    """Simple string-based template loader for Jinja2."""

    def __init__(self, templates: dict[str, str]) -> None:
        self.templates = templates

    def get_source(self, environment: Environment, template: str) -> tuple:
        if template not in self.templates:
            raise FileNotFoundError(f"Template {template} not found")
        source = self.templates[template]
        return source, None, lambda: True


TEMPLATES = {
    "oracle_report": """# Oracle validation report

*Generated: {{ timestamp.strftime('%Y-%m-%d %H:%M:%S UTC') }} | seed {{ report.seed }}*

**Result: {{ 'all checks passed' if report.passed else (report.failures | length) ~ ' check(s) failed' }}**

| Check | Status | Measured |
|---|---|---|
{% for check in report.checks -%}
| {{ check.name }} | {{ 'PASS' if check.passed else 'FAIL' }} | {{ format_measured(check.measured) }} |
{% endfor %}
{% if report.failures %}
## Failures

{% for name in report.failures -%}
- {{ name }}
{% endfor %}
{% endif %}""",

    "metric_report": """# Evaluation report

*Generated: {{ timestamp.strftime('%Y-%m-%d %H:%M:%S UTC') }} | {{ report.count }} instances*

| Metric | Selector | Initial retrieval |
|---|---|---|
| EM | {{ fmt(report.em) }} | |
| F1 | {{ fmt(report.f1) }} | |
{% for k, value in report.recall_at | dictsort -%}
| Recall@{{ k }} | {{ fmt(value) }} | {{ fmt(report.baseline_recall_at[k]) if k in report.baseline_recall_at else '' }} |
{% endfor %}""",

    "sweep_report": """# Sampling-number sweep

*Generated: {{ timestamp.strftime('%Y-%m-%d %H:%M:%S UTC') }}*

| m | Iterations | Final F1 | Final EM | Final Recall@5 | Best F1 | Final weight variance |
|---|---|---|---|---|---|---|
{% for summary in summaries -%}
| {{ summary.m }} | {{ summary.iterations }} | {{ fmt(summary.final.f1) }} | {{ fmt(summary.final.em) }} | {{ fmt(summary.final.recall_5) }} | {{ fmt(summary.best_f1) }} | {{ fmt(summary.final.weight_variance) }} |
{% endfor %}""",
}


def _format_number(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _format_measured(measured: dict[str, Any]) -> str:
    parts = []
    for key, value in measured.items():
        if isinstance(value, list):
            rendered = "[" + ", ".join(_format_number(v) for v in value) + "]"
        else:
            rendered = _format_number(value)
        parts.append(f"{key}={rendered}")
    return "; ".join(parts)


def _create_jinja_env() -> Environment:
    """Create and configure Jinja2 environment with custom functions."""
    env = Environment(loader=StringTemplateLoader(TEMPLATES), undefined=StrictUndefined, trim_blocks=False)
    env.globals["fmt"] = _format_number
    env.globals["format_measured"] = _format_measured
    return env


def create_oracle_report(report: OracleSuiteReport, timestamp: datetime | None = None) -> str:
    """Markdown table with one row per oracle check."""
    template = _create_jinja_env().get_template("oracle_report")
    return template.render(report=report, timestamp=timestamp or datetime.now(UTC))


def create_metric_report(report: MetricReport, timestamp: datetime | None = None) -> str:
    """Markdown table of the evaluation metrics against initial retrieval."""
    template = _create_jinja_env().get_template("metric_report")
    return template.render(report=report, timestamp=timestamp or datetime.now(UTC))


def create_sweep_report(rows: Sequence[SweepRow], timestamp: datetime | None = None) -> str:
    """
    Summarize a sampling-number sweep.

    Args:
        rows: Per-iteration rows of every run, in any order

    Returns:
        Markdown report with one line per sampling number m
    """
    by_m: dict[int, list[SweepRow]] = {}
    for row in rows:
        by_m.setdefault(row.m, []).append(row)

    summaries = []
    for m in sorted(by_m):
        trace = sorted(by_m[m], key=lambda row: row.iteration)
        summaries.append({
            "m": m,
            "iterations": len(trace),
            "final": trace[-1],
            "best_f1": max(row.f1 for row in trace),
        })

    template = _create_jinja_env().get_template("sweep_report")
    return template.render(summaries=summaries, timestamp=timestamp or datetime.now(UTC))

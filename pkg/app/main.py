# ABOUTME: Command-line entry point: task generation, training, evaluation, oracle suite and m sweep
# ABOUTME: Every command reads one run-config file plus KEY=VALUE overrides; DROError exits 1, failed checks exit 2

import argparse
from collections.abc import Callable, Sequence
import csv
from dataclasses import replace
import json
from pathlib import Path
import sys
from typing import Any

from app.core.config import Config, RunConfig
from app.core.error_handling import handle_exceptions
from app.core.exceptions import DROError, InvalidConfigurationError
from app.core.structured_logging import (
    get_logger,
    log_error_with_context,
    log_service_operation,
    set_correlation_id,
    setup_structured_logging,
)
from app.models.reports import Checkpoint, IterationRecord, SweepRow
from app.services.checkpoint_service import load_checkpoint, run_fingerprint, save_checkpoint
from app.services.dataset_service import load_dataset, write_dataset
from app.services.estimation_service import normalize_log_weights
from app.services.oracle_suite import OracleSuite
from app.services.synthetic_task_service import generate_task, split_task
from app.services.training_service import TrainingService, evaluate
from app.utils.report_generator import create_metric_report, create_oracle_report, create_sweep_report

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECKS_FAILED = 2

TRACE_COLUMNS = (
    "iteration", "elbo_estimate", "em", "f1", "recall_1", "recall_3", "recall_5",
    "mean_raw_weight", "weight_variance", "seconds",
)
SWEEP_COLUMNS = ("m", "iteration", "f1", "em", "recall_5", "weight_variance")
MANIFEST_SECTIONS = ("task", "feature")


def trace_row(record: IterationRecord) -> dict[str, Any]:
    """Flat CSV row of one iteration."""
    metrics = record.validation_metrics
    return {
        "iteration": record.iteration,
        "elbo_estimate": float(record.train_elbo_estimate),
        "em": float(metrics.em),
        "f1": float(metrics.f1),
        "recall_1": float(metrics.recall_at.get(1, 0.0)),
        "recall_3": float(metrics.recall_at.get(3, 0.0)),
        "recall_5": float(metrics.recall_at.get(5, 0.0)),
        "mean_raw_weight": float(record.mean_raw_weight),
        "weight_variance": float(record.weight_variance),
        "seconds": f"{record.wall_time:.6f}",
    }


def _write_json(payload: Any, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(rows: Sequence[dict[str, Any]], columns: Sequence[str], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def manifest_path(config: RunConfig) -> Path:
    return config.paths.train.parent / "manifest.env"


@handle_exceptions()
def cmd_gen(config: RunConfig) -> int:
    """Generate the synthetic task and write the train/validation split plus a manifest.

    The manifest is a run-config file holding the task and feature keys, so
    passing it back through ``--config`` regenerates the same files.
    """
    instances = generate_task(config.task, config.feature)
    train, validation = split_task(instances, config.task.validation_fraction)
    write_dataset(train, config.paths.train)
    write_dataset(validation, config.paths.validation)

    manifest = manifest_path(config)
    lines = ["# Regenerate with: dro-rag --config <this file> gen"]
    lines += [f"{key}={value}" for key, value in config.to_values(MANIFEST_SECTIONS).items()]
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")

    log_service_operation(
        logger, "cli", "gen", train=len(train), validation=len(validation), manifest=str(manifest),
    )
    print(f"gen: {len(train)} train / {len(validation)} validation instances -> {config.paths.train.parent}")
    return EXIT_OK


class TraceWriter:
    """Writes the per-iteration checkpoint and appends the trace as JSON lines and CSV."""

    def __init__(self, output_dir: Path) -> None:
        self.output_dir = output_dir
        self.checkpoint_dir = output_dir / "checkpoints"
        self.jsonl_path = output_dir / "trace.jsonl"
        self.csv_path = output_dir / "trace.csv"
        self.rows: list[dict[str, Any]] = []

    def start(self, initial: Checkpoint, resume: bool = False) -> None:
        """Reset the trace files, or on resume keep the rows up to ``initial.iteration``."""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        lines: list[str] = []
        self.rows = []
        if resume:
            if self.jsonl_path.exists():
                lines = [
                    line for line in self.jsonl_path.read_text(encoding="utf-8").splitlines()
                    if line.strip() and json.loads(line)["iteration"] <= initial.iteration
                ]
            if self.csv_path.exists():
                with self.csv_path.open(encoding="utf-8", newline="") as handle:
                    self.rows = [row for row in csv.DictReader(handle) if int(row["iteration"]) <= initial.iteration]
        self.jsonl_path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        _write_csv(self.rows, TRACE_COLUMNS, self.csv_path)
        save_checkpoint(initial, self.checkpoint_path(initial.iteration))

    def checkpoint_path(self, iteration: int) -> Path:
        return self.checkpoint_dir / f"iter_{iteration:03d}.json"

    def __call__(self, record: IterationRecord, checkpoint: Checkpoint) -> None:
        save_checkpoint(checkpoint, self.checkpoint_path(checkpoint.iteration))
        with self.jsonl_path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
        self.rows.append(trace_row(record))
        _write_csv(self.rows, TRACE_COLUMNS, self.csv_path)


@handle_exceptions()
def cmd_train(config: RunConfig) -> int:
    """Train on the configured split; resumes from ``PATH_CHECKPOINT`` when set."""
    train = load_dataset(config.paths.train, config.feature)
    validation = load_dataset(config.paths.validation, config.feature)
    output_dir = config.paths.output_dir

    writer = TraceWriter(output_dir)
    service = TrainingService(config.train, config.feature, on_iteration=writer)
    init = None
    if config.paths.checkpoint is not None:
        init = load_checkpoint(config.paths.checkpoint, service.fingerprint)
        writer.start(init, resume=True)
    else:
        selector, generator = service.initial_params()
        writer.start(Checkpoint(selector, generator, 0, service.fingerprint))

    best, records = service.run_training(train, validation, init)
    save_checkpoint(best, output_dir / "best.json")
    if service.last_checkpoint is not None:
        save_checkpoint(service.last_checkpoint, output_dir / "final.json")

    log_service_operation(logger, "cli", "train", iterations=len(records), best_iteration=best.iteration)
    final = records[-1].validation_metrics if records else None
    summary = f"f1={final.f1:.4f} em={final.em:.4f}" if final is not None else "no iterations run"
    print(f"train: {len(records)} iteration(s), best iteration {best.iteration}, {summary}")
    return EXIT_OK


@handle_exceptions()
def cmd_eval(config: RunConfig) -> int:
    """Evaluate ``PATH_CHECKPOINT`` on ``PATH_DATASET`` (validation file by default)."""
    if config.paths.checkpoint is None:
        raise InvalidConfigurationError(
            "eval requires PATH_CHECKPOINT", error_code="CONFIG_CHECKPOINT_MISSING",
        )
    checkpoint = load_checkpoint(config.paths.checkpoint, run_fingerprint(config.train, config.feature))
    dataset_path = config.paths.dataset or config.paths.validation
    dataset = load_dataset(dataset_path, config.feature)

    service = TrainingService(config.train, config.feature)
    report = evaluate(
        checkpoint.selector, checkpoint.generator, dataset,
        config.train.selection, config.train.workers, service.cutoffs,
    )
    output_dir = config.paths.output_dir
    _write_json({**report.to_dict(), "checkpoint": str(config.paths.checkpoint), "dataset": str(dataset_path)},
                output_dir / "metrics.json")
    (output_dir / "metrics.md").write_text(create_metric_report(report), encoding="utf-8")

    log_service_operation(logger, "cli", "eval", dataset=str(dataset_path), count=report.count)
    recalls = " ".join(f"recall@{k}={value:.4f}" for k, value in sorted(report.recall_at.items()))
    print(f"eval: n={report.count} em={report.em:.4f} f1={report.f1:.4f} {recalls}")
    return EXIT_OK


@handle_exceptions()
def cmd_oracle(config: RunConfig) -> int:
    """Run the oracle validation suite; exits 2 listing the failed checks."""
    instances = load_dataset(config.paths.dataset, config.feature) if config.paths.dataset is not None else None
    suite = OracleSuite(config.oracle, config.train.enumeration_cap, instances, normalizer=normalize_log_weights)
    report = suite.run()

    output_dir = config.paths.output_dir
    _write_json(report.to_dict(), output_dir / "oracle_report.json")
    (output_dir / "oracle_report.md").write_text(create_oracle_report(report), encoding="utf-8")

    if not report.passed:
        print(f"oracle: FAILED checks: {', '.join(report.failures)}", file=sys.stderr)
        return EXIT_CHECKS_FAILED
    print(f"oracle: all {len(report.checks)} checks passed")
    return EXIT_OK


@handle_exceptions()
def cmd_sweep(config: RunConfig) -> int:
    """Train one run per sampling number in ``SWEEP_M_VALUES`` and tabulate the traces."""
    train = load_dataset(config.paths.train, config.feature)
    validation = load_dataset(config.paths.validation, config.feature)

    rows: list[SweepRow] = []
    for m in config.sweep.m_values:
        service = TrainingService(replace(config.train, m=m), config.feature)
        _, records = service.run_training(train, validation)
        rows.extend(
            SweepRow(
                m=m,
                iteration=record.iteration,
                f1=record.validation_metrics.f1,
                em=record.validation_metrics.em,
                recall_5=record.validation_metrics.recall_at.get(5, 0.0),
                weight_variance=record.weight_variance,
            )
            for record in records
        )
        log_service_operation(logger, "cli", "sweep", m=m, iterations=len(records))

    sweep_dir = config.paths.output_dir / "sweep"
    _write_csv(
        [{column: getattr(row, column) for column in SWEEP_COLUMNS} for row in rows],
        SWEEP_COLUMNS, sweep_dir / "sweep.csv",
    )
    (sweep_dir / "sweep.md").write_text(create_sweep_report(rows), encoding="utf-8")
    print(f"sweep: {len(config.sweep.m_values)} run(s) -> {sweep_dir}")
    return EXIT_OK


COMMANDS: dict[str, Callable[[RunConfig], int]] = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "oracle": cmd_oracle,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dro-rag",
        description="Joint EM training of a permutation selector and an answer generator",
    )
    parser.add_argument("--config", type=Path, default=None, help="Run-config file (KEY=VALUE lines)")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Override one config key; may be repeated",
    )
    parser.add_argument("--workers", type=int, default=None, help="Threads for estimation and evaluation")
    subparsers = parser.add_subparsers(dest="command", required=True)
    subparsers.add_parser("gen", help="Generate the synthetic task and split it")
    subparsers.add_parser("train", help="Train and write checkpoints and traces")
    eval_parser = subparsers.add_parser("eval", help="Evaluate a checkpoint")
    eval_parser.add_argument("--checkpoint", type=Path, default=None)
    eval_parser.add_argument("--dataset", type=Path, default=None)
    oracle_parser = subparsers.add_parser("oracle", help="Run the oracle validation suite")
    oracle_parser.add_argument("--dataset", type=Path, default=None)
    subparsers.add_parser("sweep", help="Compare sampling numbers")
    return parser


def _overrides(args: argparse.Namespace) -> list[str]:
    overrides = [*Config.environment_overrides(), *args.overrides]
    if args.workers is not None:
        overrides.append(f"TRAIN_WORKERS={args.workers}")
    if getattr(args, "checkpoint", None) is not None:
        overrides.append(f"PATH_CHECKPOINT={args.checkpoint}")
    if getattr(args, "dataset", None) is not None:
        overrides.append(f"PATH_DATASET={args.dataset}")
    return overrides


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, load the run config and dispatch; returns the process exit code."""
    args = build_parser().parse_args(argv)
    setup_structured_logging()
    run_id = set_correlation_id()
    log_service_operation(logger, "cli", "start", command=args.command, run_id=run_id)

    try:
        config = RunConfig.load(args.config, _overrides(args))
        return COMMANDS[args.command](config)
    except DROError as e:
        log_error_with_context(logger, e, "cli", args.command, run_id=run_id)
        print(f"dro-rag {args.command}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

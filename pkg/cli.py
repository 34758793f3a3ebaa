"""Command line: ``partition``, ``train`` and ``report``."""

import argparse
import logging
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

import artifacts
import defaults
from config import settings
from data import load_dataset
from defaults import default_model_config
from errors import ConfigError, FedPkdError
from fed import run_centralized, run_fedavg
from models.arrays import Dataset, ModelParams
from models.config_models import RunConfig
from models.enums import PartitionStrategy, RunStatus, TrainMode
from models.records import ClassAccuracy, ClientShard, FlopLedger, RoundMetrics, RunManifest
from nn_core import mlp_dims
from partition import (
    DIRICHLET_CONVENTION,
    client_class_counts,
    partition,
    shards_from_mapping,
    shards_to_mapping,
)
from pkd import PipelineResult, account_flops, cost_to_target, cumulative_cost, run_pipeline

logger: logging.Logger = logging.getLogger(__name__)

EXIT_OK: int = 0
EXIT_FAILURE: int = 1
EXIT_CONFIG: int = 2

REPORT: str = "report.csv"
REPORT_COST: str = "report_cost.csv"


# configuration


def load_config(path: Path | None) -> RunConfig:
    """Validate a JSON run document; without a path the defaults are used.

    Raises:
        ConfigError: If the file cannot be read.
        pydantic.ValidationError: On unknown keys or invalid values.

    """
    if path is None:
        return RunConfig()
    try:
        text: str = path.read_text(encoding="utf-8")
    except OSError as exc:
        msg = f"{path}: {exc.strerror or exc}"
        raise ConfigError(msg) from exc
    return RunConfig.model_validate_json(text)


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0,1,2"`` -> ``(0, 1, 2)``."""
    try:
        seeds: tuple[int, ...] = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        msg = f"seeds must be comma-separated integers, got {text!r}"
        raise argparse.ArgumentTypeError(msg) from exc
    if not seeds or min(seeds) < 0:
        msg = f"seeds must be non-negative integers, got {text!r}"
        raise argparse.ArgumentTypeError(msg)
    return seeds


def describe_validation_error(exc: ValidationError) -> str:
    """One ``field.path: message`` clause per error."""
    return "; ".join(
        f"{'.'.join(str(part) for part in error['loc']) or '<root>'}: {error['msg']}"
        for error in exc.errors()
    )


def _base_manifest(config: RunConfig, command: str, mode: str | None, seed: int) -> RunManifest:
    return RunManifest(
        command=command,
        mode=mode,
        seed=seed,
        version=artifacts.version_string(),
        config_hash=config.config_hash(),
        config=config.canonical(),
    )


RUN_FAILURES: tuple[type[Exception], ...] = (FedPkdError, ValidationError, OSError)


def _record_failure(directory: Path, manifest: RunManifest, exc: Exception) -> None:
    manifest.error = describe_validation_error(exc) if isinstance(exc, ValidationError) else str(exc)
    artifacts.write_manifest(directory=directory, manifest=manifest)


def _is_run_directory(path: Path) -> bool:
    """Seed runs carry a seed in their manifest; mode and report directories do not."""
    return (path / artifacts.MANIFEST).is_file() and artifacts.read_manifest(path).seed is not None


def _write_index_manifest(
    directory: Path,
    command: str,
    config: dict[str, Any],
    files: list[str],
    metadata: dict[str, Any],
    mode: str | None = None,
) -> None:
    """Manifest of a directory that indexes runs rather than holding one."""
    manifest = RunManifest(
        status=RunStatus.COMPLETE,
        command=command,
        mode=mode,
        version=artifacts.version_string(),
        config_hash=artifacts.payload_hash(config),
        config=config,
        files=sorted(files),
        metadata=metadata,
    )
    artifacts.write_manifest(directory=directory, manifest=manifest)


# partition


def cmd_partition(config: RunConfig, out: Path, seeds: Sequence[int]) -> list[Path]:
    """Write ``shards.json`` and a manifest per seed under ``out/partition``."""
    written: list[Path] = []
    for seed in seeds:
        seeded: RunConfig = config.for_seed(seed)
        directory: Path = out / "partition" / f"seed_{seed}"
        directory.mkdir(parents=True, exist_ok=True)
        manifest: RunManifest = _base_manifest(config=seeded, command="partition", mode=None, seed=seed)
        artifacts.write_manifest(directory=directory, manifest=manifest)
        try:
            train, _ = load_dataset(source=seeded.dataset)
            shards: list[ClientShard] = partition(ds=train, spec=seeded.partition)
            artifacts.write_json(path=directory / artifacts.SHARDS, payload=shards_to_mapping(shards))
        except RUN_FAILURES as exc:
            _record_failure(directory=directory, manifest=manifest, exc=exc)
            raise
        manifest.metadata = {
            "strategy": str(seeded.partition.strategy),
            "client_sizes": [shard.size for shard in shards],
            "client_class_counts": client_class_counts(ds=train, shards=shards).tolist(),
        }
        if seeded.partition.strategy is PartitionStrategy.DIRICHLET:
            manifest.metadata["dirichlet_convention"] = DIRICHLET_CONVENTION
        manifest.files = [artifacts.SHARDS]
        manifest.status = RunStatus.COMPLETE
        artifacts.write_manifest(directory=directory, manifest=manifest)
        logger.info("Partition written to %s", directory)
        written.append(directory)
    _write_index_manifest(
        directory=out / "partition",
        command="partition",
        config=config.canonical(),
        files=[],
        metadata={"seeds": list(seeds), "runs": [d.name for d in written]},
    )
    return written


# train


def _baseline_ledger(config: RunConfig, train: Dataset) -> FlopLedger:
    return account_flops(
        config=config,
        layer_dims=mlp_dims(
            input_dim=train.dim,
            hidden_layers=config.network.hidden_layers,
            output_dim=train.class_count,
        ),
        total_samples=train.size,
        group_samples=(),
    )


def load_shards(config: RunConfig, out: Path, train: Dataset) -> list[ClientShard]:
    """Shards written by ``partition`` for the same dataset and split, else a fresh split."""
    seed: int = config.partition.seed
    directory: Path = out / "partition" / f"seed_{seed}"
    if (directory / artifacts.MANIFEST).is_file():
        manifest: RunManifest = artifacts.read_manifest(directory)
        current: dict[str, Any] = config.canonical()
        if manifest.status is RunStatus.COMPLETE and all(
            manifest.config.get(key) == current[key] for key in ("dataset", "partition")
        ):
            logger.info("Reusing shards from %s", directory)
            return shards_from_mapping(
                mapping=artifacts.read_json(path=directory / artifacts.SHARDS),
                dataset_size=train.size,
            )
    return partition(ds=train, spec=config.partition)


def run_seed(
    config: RunConfig,
    mode: TrainMode,
    seed: int,
    out: Path,
    workers: int | None = None,
) -> Path:
    """Train one seed and write its run directory ``out/<mode>/seed_<seed>``.

    The manifest is written first as incomplete and rewritten as complete at
    the end, so a failed run stays marked incomplete.
    """
    seeded: RunConfig = config.for_seed(seed)
    directory: Path = out / str(mode) / f"seed_{seed}"
    directory.mkdir(parents=True, exist_ok=True)
    manifest: RunManifest = _base_manifest(config=seeded, command="train", mode=str(mode), seed=seed)
    artifacts.write_manifest(directory=directory, manifest=manifest)
    try:
        train, test = load_dataset(source=seeded.dataset)
        shards: list[ClientShard] = load_shards(config=seeded, out=out, train=train)
        artifacts.write_json(path=directory / artifacts.SHARDS, payload=shards_to_mapping(shards))
        files: list[str] = [artifacts.SHARDS]
        metadata: dict[str, Any] = {"partition_strategy": str(seeded.partition.strategy)}
        if seeded.partition.strategy is PartitionStrategy.DIRICHLET:
            metadata["dirichlet_convention"] = DIRICHLET_CONVENTION

        model: ModelParams
        trace: list[RoundMetrics]
        ledger: FlopLedger
        expert_rounds: int = 0
        match mode:
            case TrainMode.FEDAVG:
                model, trace = run_fedavg(
                    train=train,
                    shards=shards,
                    test=test,
                    config=seeded.fed,
                    hidden_layers=seeded.network.hidden_layers,
                    workers=workers,
                )
                ledger = _baseline_ledger(config=seeded, train=train)
            case TrainMode.CENTRALIZED:
                model, trace = run_centralized(
                    train=train,
                    test=test,
                    config=seeded.fed,
                    hidden_layers=seeded.network.hidden_layers,
                )
                ledger = _baseline_ledger(config=seeded, train=train)
            case TrainMode.PKD:
                result: PipelineResult = run_pipeline(
                    train=train,
                    shards=shards,
                    test=test,
                    config=seeded,
                    workers=workers,
                )
                model, trace, ledger = result.model, list(result.trace), result.ledger
                expert_rounds = seeded.pkd.expert_rounds if result.experts else 0
                artifacts.write_groups(path=directory / artifacts.GROUPS, report=result.report)
                files.append(artifacts.GROUPS)
                metadata["theta"] = result.report.theta
                metadata["groups"] = [list(g) for g in result.report.groups]
                metadata["notes"] = list(result.notes)

        costs: list[tuple[float, float]] = cumulative_cost(
            trace=trace,
            ledger=ledger,
            expert_rounds=expert_rounds,
        )
        artifacts.write_metrics(path=directory / artifacts.METRICS, trace=trace, class_count=test.class_count)
        artifacts.write_flops(path=directory / artifacts.FLOPS, trace=trace, ledger=ledger)
        artifacts.write_cost(path=directory / artifacts.COST, trace=trace, costs=costs)
        artifacts.write_model(path=directory / artifacts.MODEL, model=model)
        files += [artifacts.METRICS, artifacts.FLOPS, artifacts.COST, artifacts.MODEL]
        if trace:
            artifacts.write_accuracy(path=directory / artifacts.ACCURACY, final=trace[-1])
            files.append(artifacts.ACCURACY)
        metadata["ledger"] = artifacts.ledger_summary(ledger)
        metadata["cost_to_target"] = {
            format(target, defaults.float_format): cost
            for target, cost in cost_to_target(
                min_accuracy=[m.min_accuracy for m in trace],
                cumulative=[cumulative for _, cumulative in costs],
                targets=defaults.cost_targets,
            ).items()
        }
    except RUN_FAILURES as exc:
        _record_failure(directory=directory, manifest=manifest, exc=exc)
        raise
    manifest.files = sorted(files)
    manifest.metadata = metadata
    manifest.status = RunStatus.COMPLETE
    artifacts.write_manifest(directory=directory, manifest=manifest)
    logger.info("Run %s complete", directory)
    return directory


SUMMARY_HEADER: list[str] = ["seed", "max", "ave", "min", "icd", "worst"]


def write_summary(mode_dir: Path, run_dirs: Sequence[Path]) -> None:
    """Per-seed final Max/Ave/Min/ICD/worst and a ``mean`` row."""
    rows: list[dict[str, Any]] = []
    for directory in run_dirs:
        final: dict[str, Any] = artifacts.read_json(path=directory / artifacts.ACCURACY)
        rows.append(
            {
                "seed": artifacts.read_manifest(directory).seed,
                "max": final["max"],
                "ave": final["ave"],
                "min": final["min"],
                "icd": final["icd"],
                "worst": final["worst"],
            },
        )
    if rows:
        rows.append(
            {
                "seed": "mean",
                **{
                    key: math.fsum(float(row[key]) for row in rows) / len(rows)
                    for key in ("max", "ave", "min", "icd")
                },
                "worst": None,
            },
        )
    artifacts.write_csv(path=mode_dir / artifacts.SUMMARY, header=SUMMARY_HEADER, rows=rows)


def cmd_train(
    config: RunConfig,
    mode: TrainMode,
    seeds: Sequence[int],
    out: Path,
    workers: int | None = None,
) -> list[Path]:
    """Train every seed, in parallel processes when ``workers > 1``."""
    processes: int = workers or settings.workers
    run_dirs: list[Path]
    if processes > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(processes, len(seeds))) as pool:
            run_dirs = list(
                pool.map(
                    run_seed,
                    [config] * len(seeds),
                    [mode] * len(seeds),
                    seeds,
                    [out] * len(seeds),
                    [1] * len(seeds),
                ),
            )
    else:
        run_dirs = [
            run_seed(config=config, mode=mode, seed=seed, out=out, workers=processes)
            for seed in seeds
        ]
    mode_dir: Path = out / str(mode)
    write_summary(mode_dir=mode_dir, run_dirs=run_dirs)
    _write_index_manifest(
        directory=mode_dir,
        command="train",
        mode=str(mode),
        config=config.canonical(),
        files=[artifacts.SUMMARY],
        metadata={"seeds": list(seeds), "runs": [d.name for d in run_dirs]},
    )
    return run_dirs


# report


class RunSummary(BaseModel):
    """Final metrics of one run, or the seed average of a mode directory."""

    model_config: ConfigDict = default_model_config

    label: str
    accuracy: ClassAccuracy
    min_accuracy_trace: tuple[float, ...]
    cumulative_cost: tuple[float, ...]
    seeds: int = 1


def _load_complete(directory: Path) -> tuple[dict[str, Any], list[dict[str, str]]] | None:
    manifest: RunManifest = artifacts.read_manifest(directory)
    if manifest.status is not RunStatus.COMPLETE:
        logger.warning("Skipping incomplete run %s", directory)
        return None
    return (
        artifacts.read_json(path=directory / artifacts.ACCURACY),
        artifacts.read_csv(path=directory / artifacts.COST),
    )


def summarize(path: Path) -> RunSummary | None:
    """Summary of a run directory or of every complete seed run under a mode directory."""
    if _is_run_directory(path):
        candidates: list[Path] = [path]
        label: str = f"{path.parent.name}/{path.name}"
    else:
        candidates = sorted(p for p in path.glob("seed_*") if (p / artifacts.MANIFEST).is_file())
        label = path.name
    loaded = [found for found in (_load_complete(d) for d in candidates) if found is not None]
    if not loaded:
        logger.warning("No complete runs under %s", path)
        return None
    class_accuracy: np.ndarray = np.mean(
        [np.asarray(final["class_accuracy"], dtype=np.float64) for final, _ in loaded],
        axis=0,
    )
    rounds: int = min(len(cost_rows) for _, cost_rows in loaded)
    min_trace: np.ndarray = np.mean(
        [[float(row["min_accuracy"]) for row in cost_rows[:rounds]] for _, cost_rows in loaded],
        axis=0,
    )
    cumulative: np.ndarray = np.mean(
        [[float(row["cumulative_cost_u"]) for row in cost_rows[:rounds]] for _, cost_rows in loaded],
        axis=0,
    )
    return RunSummary(
        label=label,
        accuracy=ClassAccuracy.from_values(class_accuracy=class_accuracy),
        min_accuracy_trace=tuple(min_trace.tolist()),
        cumulative_cost=tuple(cumulative.tolist()),
        seeds=len(loaded),
    )


_REPORT_ROWS: list[tuple[str, str]] = [
    ("Max", "max_accuracy"),
    ("Ave", "ave_accuracy"),
    ("Min", "min_accuracy"),
    ("ICD", "icd"),
    ("Worst", "worst_class"),
]


def report_rows(summaries: Sequence[RunSummary]) -> tuple[list[str], list[dict[str, Any]]]:
    """Metric rows with one column per run and a delta column per later run.

    Deltas are taken against the first run; the worst-class row has none.
    """
    base: RunSummary = summaries[0]
    header: list[str] = [
        "metric",
        *(s.label for s in summaries),
        *(f"delta_{s.label}" for s in summaries[1:]),
    ]
    rows: list[dict[str, Any]] = []
    for name, field in _REPORT_ROWS:
        row: dict[str, Any] = {"metric": name}
        for summary in summaries:
            row[summary.label] = getattr(summary.accuracy, field)
        for summary in summaries[1:]:
            row[f"delta_{summary.label}"] = (
                None
                if field == "worst_class"
                else getattr(summary.accuracy, field) - getattr(base.accuracy, field)
            )
        rows.append(row)
    return header, rows


COST_REPORT_HEADER: list[str] = ["run", "target_min_accuracy", "cumulative_cost_u"]


def cmd_report(paths: Sequence[Path], out: Path) -> Table:
    """Compare runs; writes ``report.csv`` and ``report_cost.csv`` into ``out``.

    Raises:
        FedPkdError: If no complete run is found, or ``out`` is a run directory.

    """
    summaries: list[RunSummary] = [s for s in (summarize(path=p) for p in paths) if s is not None]
    if not summaries:
        msg = "no completed runs to report"
        raise FedPkdError(msg)
    if _is_run_directory(out):
        msg = f"refusing to write a report into run directory {out}"
        raise FedPkdError(msg)
    header, rows = report_rows(summaries=summaries)
    out.mkdir(parents=True, exist_ok=True)
    artifacts.write_csv(path=out / REPORT, header=header, rows=rows)
    artifacts.write_csv(
        path=out / REPORT_COST,
        header=COST_REPORT_HEADER,
        rows=(
            {"run": summary.label, "target_min_accuracy": target, "cumulative_cost_u": cost}
            for summary in summaries
            for target, cost in cost_to_target(
                min_accuracy=summary.min_accuracy_trace,
                cumulative=summary.cumulative_cost,
                targets=defaults.cost_targets,
            ).items()
        ),
    )
    _write_index_manifest(
        directory=out,
        command="report",
        config={"runs": [str(p) for p in paths]},
        files=[REPORT, REPORT_COST],
        metadata={"labels": [s.label for s in summaries], "seeds": [s.seeds for s in summaries]},
    )
    table: Table = Table(title="Class-wise accuracy")
    for column in header:
        table.add_column(column, justify="left" if column == "metric" else "right")
    for row in rows:
        table.add_row(*(artifacts.fmt(row.get(column)) for column in header))
    return table


# entry point


def build_parser() -> argparse.ArgumentParser:
    """Subcommands and flags."""
    parser: argparse.ArgumentParser = argparse.ArgumentParser(
        prog="fed-pkd",
        description="Federated partial knowledge distillation simulator.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", type=Path, default=None, help="Run configuration JSON.")
        sub.add_argument("--seeds", type=parse_seeds, default=None, help="Comma-separated seeds.")
        sub.add_argument("--out", type=Path, default=None, help="Output directory.")

    common(commands.add_parser("partition", help="Write client shards."))
    train = commands.add_parser("train", help="Train and write run directories.")
    common(train)
    train.add_argument(
        "--mode",
        choices=[str(mode) for mode in TrainMode],
        default=str(TrainMode.FEDAVG),
    )
    report = commands.add_parser("report", help="Compare run directories.")
    report.add_argument("runs", type=Path, nargs="+", help="Run or mode directories.")
    report.add_argument("--out", type=Path, default=Path(), help="Where report CSVs go.")
    return parser


def configure_logging() -> None:
    """Rich console logging at ``settings.log_level``."""
    logging.basicConfig(
        level=settings.log_level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(show_path=False)],
    )


def main(argv: Sequence[str] | None = None) -> int:
    """Run a subcommand and return the process exit code."""
    args: argparse.Namespace = build_parser().parse_args(argv)
    configure_logging()
    config: RunConfig | None = None
    if args.command != "report":
        try:
            config = load_config(path=args.config)
        except ValidationError as exc:
            logger.error("Invalid configuration: %s", describe_validation_error(exc))  # noqa: TRY400
            return EXIT_CONFIG
        except ConfigError as exc:
            logger.error("Cannot read configuration: %s", exc)  # noqa: TRY400
            return EXIT_CONFIG
    try:
        if config is None:
            table: Table = cmd_report(paths=args.runs, out=args.out)
            Console().print(table)
            return EXIT_OK
        out: Path = args.out or config.output_dir
        seeds: tuple[int, ...] = args.seeds or config.seeds
        if args.command == "partition":
            cmd_partition(config=config, out=out, seeds=seeds)
        else:
            cmd_train(config=config, mode=TrainMode(args.mode), seeds=seeds, out=out)
    except ValidationError as exc:
        logger.error("%s", describe_validation_error(exc))  # noqa: TRY400
        return EXIT_FAILURE
    except (FedPkdError, OSError) as exc:
        logger.error("%s", exc)  # noqa: TRY400
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())

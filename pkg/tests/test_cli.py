"""Subcommands and their exit codes."""

import csv
import json
from pathlib import Path
from typing import Any

import numpy as np
import pytest

import artifacts
from cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, main, parse_seeds
from data import write_idx
from models.enums import RunStatus


def _write_config(tmp_path: Path, document: dict[str, Any]) -> Path:
    path: Path = tmp_path / "run.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    return path


def _rows(path: Path) -> list[dict[str, str]]:
    with path.open(newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def test_parse_seeds() -> None:
    assert parse_seeds("0,1, 2") == (0, 1, 2)


def test_partition_writes_balanced_manifest(tmp_path: Path, tiny_config_document: dict[str, Any]) -> None:
    config: Path = _write_config(tmp_path, tiny_config_document)
    assert main(["partition", "--config", str(config), "--out", str(tmp_path / "a")]) == EXIT_OK
    directory: Path = tmp_path / "a" / "partition" / "seed_0"
    manifest = artifacts.read_manifest(directory)
    assert manifest.status is RunStatus.COMPLETE
    assert manifest.metadata["client_class_counts"] == [[10] * 10, [10] * 10]
    assert len(manifest.config_hash) == 64

    assert main(["partition", "--config", str(config), "--out", str(tmp_path / "b")]) == EXIT_OK
    again: Path = tmp_path / "b" / "partition" / "seed_0"
    for name in (artifacts.SHARDS, artifacts.MANIFEST):
        assert (directory / name).read_bytes() == (again / name).read_bytes()


def test_invalid_alpha_exits_with_config_code(
    tmp_path: Path,
    tiny_config_document: dict[str, Any],
    caplog: pytest.LogCaptureFixture,
) -> None:
    document: dict[str, Any] = {**tiny_config_document, "partition": {"strategy": "dirichlet", "alpha": 0}}
    config: Path = _write_config(tmp_path, document)
    assert main(["partition", "--config", str(config), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "partition.alpha" in caplog.text


def test_unknown_key_and_missing_file_exit_with_config_code(
    tmp_path: Path,
    tiny_config_document: dict[str, Any],
) -> None:
    config: Path = _write_config(tmp_path, {**tiny_config_document, "surprise": 1})
    assert main(["train", "--config", str(config), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["train", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG


def test_train_and_report(tmp_path: Path, tiny_config_document: dict[str, Any]) -> None:
    config: Path = _write_config(tmp_path, tiny_config_document)
    out: Path = tmp_path / "runs"
    for mode in ("fedavg", "pkd"):
        assert main(["train", "--config", str(config), "--mode", mode, "--seeds", "0,1", "--out", str(out)]) == EXIT_OK

    run: Path = out / "pkd" / "seed_0"
    manifest = artifacts.read_manifest(run)
    assert manifest.status is RunStatus.COMPLETE
    assert artifacts.GROUPS in manifest.files
    for name in manifest.files:
        assert (run / name).is_file()
    metrics = _rows(run / artifacts.METRICS)
    assert len(metrics) == 4
    assert [row["stage"] for row in metrics] == ["warmup", "warmup", "pkd", "pkd"]
    assert list(metrics[0])[:3] == ["round", "stage", "acc_class_0"]
    accuracy: dict[str, Any] = json.loads((run / artifacts.ACCURACY).read_text(encoding="utf-8"))
    assert accuracy["worst"] == accuracy["class_accuracy"].index(min(accuracy["class_accuracy"]))
    groups: dict[str, Any] = json.loads((run / artifacts.GROUPS).read_text(encoding="utf-8"))
    assert groups["round"] == 2
    assert artifacts.read_model(run / artifacts.MODEL).layer_dims == ((16, 8), (8, 10))

    summary = _rows(out / "fedavg" / artifacts.SUMMARY)
    assert [row["seed"] for row in summary] == ["0", "1", "mean"]

    assert not (out / "fedavg" / artifacts.GROUPS).exists()
    assert main(["report", str(out / "fedavg"), str(out / "pkd"), "--out", str(tmp_path / "report")]) == EXIT_OK
    report = _rows(tmp_path / "report" / "report.csv")
    assert [row["metric"] for row in report] == ["Max", "Ave", "Min", "ICD", "Worst"]
    assert set(report[0]) == {"metric", "fedavg", "pkd", "delta_pkd"}
    minimum: dict[str, str] = report[2]
    assert float(minimum["delta_pkd"]) == pytest.approx(
        float(minimum["pkd"]) - float(minimum["fedavg"]),
        abs=2e-5,
    )
    cost = _rows(tmp_path / "report" / "report_cost.csv")
    assert [row["target_min_accuracy"] for row in cost[:5]] == ["0.5", "0.6", "0.7", "0.8", "0.9"]


def test_report_single_run_has_no_delta(tmp_path: Path, tiny_config_document: dict[str, Any]) -> None:
    config: Path = _write_config(tmp_path, tiny_config_document)
    assert main(["train", "--config", str(config), "--mode", "centralized", "--out", str(tmp_path)]) == EXIT_OK
    assert main(["report", str(tmp_path / "centralized" / "seed_0"), "--out", str(tmp_path)]) == EXIT_OK
    report = _rows(tmp_path / "report.csv")
    assert set(report[0]) == {"metric", "centralized/seed_0"}


def test_training_is_reproducible(tmp_path: Path, tiny_config_document: dict[str, Any]) -> None:
    config: Path = _write_config(tmp_path, tiny_config_document)
    for out in ("first", "second"):
        assert main(["train", "--config", str(config), "--mode", "pkd", "--out", str(tmp_path / out)]) == EXIT_OK
    for name in (artifacts.METRICS, artifacts.FLOPS, artifacts.COST, artifacts.MODEL):
        first: bytes = (tmp_path / "first" / "pkd" / "seed_0" / name).read_bytes()
        assert first == (tmp_path / "second" / "pkd" / "seed_0" / name).read_bytes()


def test_train_reuses_partition_shards(tmp_path: Path, tiny_config_document: dict[str, Any]) -> None:
    config: Path = _write_config(tmp_path, tiny_config_document)
    assert main(["partition", "--config", str(config), "--out", str(tmp_path)]) == EXIT_OK
    assert main(["train", "--config", str(config), "--out", str(tmp_path)]) == EXIT_OK
    written: bytes = (tmp_path / "partition" / "seed_0" / artifacts.SHARDS).read_bytes()
    assert (tmp_path / "fedavg" / "seed_0" / artifacts.SHARDS).read_bytes() == written


def test_missing_idx_file_marks_run_incomplete(
    tmp_path: Path,
    tiny_config_document: dict[str, Any],
    caplog: pytest.LogCaptureFixture,
) -> None:
    document: dict[str, Any] = {**tiny_config_document, "dataset": {"kind": "idx", "root": str(tmp_path / "nothing")}}
    config: Path = _write_config(tmp_path, document)
    assert main(["train", "--config", str(config), "--out", str(tmp_path)]) == EXIT_FAILURE
    assert "train-images-idx3-ubyte" in caplog.text
    manifest = artifacts.read_manifest(tmp_path / "fedavg" / "seed_0")
    assert manifest.status is RunStatus.INCOMPLETE
    assert "train-images-idx3-ubyte" in manifest.error

    assert main(["report", str(tmp_path / "fedavg"), "--out", str(tmp_path)]) == EXIT_FAILURE


def test_invalid_idx_labels_mark_run_failed(
    tmp_path: Path,
    tiny_config_document: dict[str, Any],
    caplog: pytest.LogCaptureFixture,
) -> None:
    images: np.ndarray = np.arange(2 * 2 * 2).reshape(2, 2, 2)
    write_idx(images, np.array([0, 1]), tmp_path / "train-images-idx3-ubyte", tmp_path / "train-labels-idx1-ubyte")
    # the test split holds a class the training split never saw
    write_idx(images, np.array([1, 2]), tmp_path / "t10k-images-idx3-ubyte", tmp_path / "t10k-labels-idx1-ubyte")
    document: dict[str, Any] = {**tiny_config_document, "dataset": {"kind": "idx", "root": str(tmp_path)}}
    config: Path = _write_config(tmp_path, document)
    out: Path = tmp_path / "runs"
    assert main(["train", "--config", str(config), "--out", str(out)]) == EXIT_FAILURE
    assert "class_count" in caplog.text
    manifest = artifacts.read_manifest(out / "fedavg" / "seed_0")
    assert manifest.status is RunStatus.INCOMPLETE
    assert "label 2 >= class_count 2" in manifest.error

    assert main(["partition", "--config", str(config), "--out", str(out)]) == EXIT_FAILURE
    assert "class_count" in artifacts.read_manifest(out / "partition" / "seed_0").error


def test_mode_and_report_directories_get_manifests(tmp_path: Path, tiny_config_document: dict[str, Any]) -> None:
    config: Path = _write_config(tmp_path, tiny_config_document)
    out: Path = tmp_path / "runs"
    assert main(["train", "--config", str(config), "--seeds", "0,1", "--out", str(out)]) == EXIT_OK
    mode = artifacts.read_manifest(out / "fedavg")
    assert (mode.status, mode.command, mode.mode, mode.seed) == (RunStatus.COMPLETE, "train", "fedavg", None)
    assert mode.files == [artifacts.SUMMARY]
    assert mode.metadata == {"seeds": [0, 1], "runs": ["seed_0", "seed_1"]}

    report_dir: Path = tmp_path / "report"
    assert main(["report", str(out / "fedavg"), "--out", str(report_dir)]) == EXIT_OK
    report = artifacts.read_manifest(report_dir)
    assert (report.command, report.seed) == ("report", None)
    assert report.files == sorted(["report.csv", "report_cost.csv"])
    assert report.metadata["labels"] == ["fedavg"]
    assert report.metadata["seeds"] == [2]
    assert len(report.config_hash) == 64
    for name in report.files:
        assert (report_dir / name).is_file()

    # a mode directory with a manifest still averages its seed runs
    assert main(["report", str(out / "fedavg"), "--out", str(out / "fedavg")]) == EXIT_OK
    assert artifacts.read_manifest(out / "fedavg").command == "report"
    assert main(["report", str(report_dir), "--out", str(report_dir)]) == EXIT_FAILURE


def test_report_refuses_to_overwrite_a_run_manifest(tmp_path: Path, tiny_config_document: dict[str, Any]) -> None:
    config: Path = _write_config(tmp_path, tiny_config_document)
    assert main(["train", "--config", str(config), "--out", str(tmp_path)]) == EXIT_OK
    run: Path = tmp_path / "fedavg" / "seed_0"
    assert main(["report", str(run), "--out", str(run)]) == EXIT_FAILURE
    assert artifacts.read_manifest(run).seed == 0
    assert not (run / "report.csv").exists()

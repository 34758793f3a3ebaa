"""Run files: metrics CSVs, JSON documents, model blobs and manifests."""

import csv
import hashlib
import json
import logging
import struct
import subprocess
from collections.abc import Iterable, Mapping, Sequence
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np

import defaults
from errors import ArtifactError
from models.arrays import ModelParams
from models.enums import Activation
from models.records import FlopLedger, GroupReport, RoundMetrics, RunManifest

logger: logging.Logger = logging.getLogger(__name__)

MODEL_MAGIC: bytes = b"FPKD"
_HEADER_LENGTH: struct.Struct = struct.Struct("<I")

MANIFEST: str = "manifest.json"
METRICS: str = "metrics.csv"
ACCURACY: str = "accuracy.json"
FLOPS: str = "flops.csv"
COST: str = "cost.csv"
MODEL: str = "model.bin"
GROUPS: str = "groups.json"
SHARDS: str = "shards.json"
SUMMARY: str = "summary.csv"


def fmt(value: float | int | str | None) -> str:
    """CSV cell: floats with six significant digits, None as empty."""
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, defaults.float_format)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> None:
    """Write rows with a fixed header, formatting every cell with :func:`fmt`."""
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer: csv.DictWriter = csv.DictWriter(handle, fieldnames=list(header), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: fmt(value) for key, value in row.items()})


def read_csv(path: Path) -> list[dict[str, str]]:
    """Rows of a CSV written by :func:`write_csv`."""
    if not path.is_file():
        raise ArtifactError(path=path, reason="file not found")
    with path.open(newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def write_json(path: Path, payload: Any) -> None:
    """Indented JSON with sorted keys and a trailing newline."""
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def payload_hash(payload: Any) -> str:
    """sha256 of compact, key-sorted JSON."""
    text: str = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def read_json(path: Path) -> Any:
    """Parse a JSON file."""
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ArtifactError(path=path, reason="file not found") from None
    except json.JSONDecodeError as exc:
        raise ArtifactError(path=path, reason=f"invalid JSON: {exc}") from exc


def metrics_header(class_count: int) -> list[str]:
    """Columns of ``metrics.csv``."""
    return [
        "round",
        "stage",
        *(f"acc_class_{c}" for c in range(class_count)),
        "max",
        "ave",
        "min",
        "icd",
        "worst",
        "flops",
        "n_kd",
    ]


def write_metrics(path: Path, trace: Sequence[RoundMetrics], class_count: int) -> None:
    """One row per round."""
    rows: list[dict[str, Any]] = [
        {
            "round": m.round,
            "stage": str(m.stage),
            **{f"acc_class_{c}": a for c, a in enumerate(m.class_accuracy)},
            "max": m.max_accuracy,
            "ave": m.ave_accuracy,
            "min": m.min_accuracy,
            "icd": m.icd,
            "worst": m.worst_class,
            "flops": m.flops_round,
            "n_kd": m.n_kd,
        }
        for m in trace
    ]
    write_csv(path=path, header=metrics_header(class_count), rows=rows)


def write_accuracy(path: Path, final: RoundMetrics) -> None:
    """Final class-wise accuracies and their summary."""
    write_json(
        path=path,
        payload={
            "round": final.round,
            "stage": str(final.stage),
            "class_accuracy": list(final.class_accuracy),
            "max": final.max_accuracy,
            "ave": final.ave_accuracy,
            "min": final.min_accuracy,
            "icd": final.icd,
            "worst": final.worst_class,
        },
    )


FLOPS_HEADER: list[str] = [
    "round",
    "stage",
    "flops",
    "n_kd",
    "n_kd_over_EN",
    "u_t3_exact",
    "u_t3_approx",
]


def write_flops(path: Path, trace: Sequence[RoundMetrics], ledger: FlopLedger) -> None:
    """Measured FLOPs per round; ledger columns on distillation rounds only."""
    by_round: dict[int, tuple[float, float, float]] = {
        r: (ratio, exact, approx)
        for r, ratio, exact, approx in zip(
            ledger.rounds,
            ledger.kd_ratios,
            ledger.u_t3_exact,
            ledger.u_t3_approx,
            strict=True,
        )
    }
    rows: list[dict[str, Any]] = []
    for m in trace:
        ratio, exact, approx = by_round.get(m.round, (None, None, None))
        rows.append(
            {
                "round": m.round,
                "stage": str(m.stage),
                "flops": m.flops_round,
                "n_kd": m.n_kd,
                "n_kd_over_EN": ratio,
                "u_t3_exact": exact,
                "u_t3_approx": approx,
            },
        )
    write_csv(path=path, header=FLOPS_HEADER, rows=rows)


COST_HEADER: list[str] = ["round", "stage", "cost_u", "cumulative_cost_u", "min_accuracy"]


def write_cost(
    path: Path,
    trace: Sequence[RoundMetrics],
    costs: Sequence[tuple[float, float]],
) -> None:
    """Per-round and cumulative cost in units of one baseline round."""
    write_csv(
        path=path,
        header=COST_HEADER,
        rows=(
            {
                "round": m.round,
                "stage": str(m.stage),
                "cost_u": cost,
                "cumulative_cost_u": cumulative,
                "min_accuracy": m.min_accuracy,
            }
            for m, (cost, cumulative) in zip(trace, costs, strict=True)
        ),
    )


def ledger_summary(ledger: FlopLedger) -> dict[str, Any]:
    """Scalar ledger fields for the manifest."""
    return {
        "u_fp": ledger.u_fp,
        "u_bp": ledger.u_bp,
        "U": ledger.u_round,
        "u_t1": ledger.u_t1,
        "u_t2": ledger.u_t2,
        "u_t2_over_U": ledger.u_t2 / ledger.u_round,
        "local_epochs": ledger.local_epochs,
        "expert_epochs": ledger.expert_epochs,
        "total_samples": ledger.total_samples,
        "group_samples": list(ledger.group_samples),
    }


def write_groups(path: Path, report: GroupReport) -> None:
    """``{"groups": [[0, 6], [2, 4, 6]], "theta": ..., "round": ...}`` plus diagnostics."""
    write_json(path=path, payload=report.model_dump(mode="json"))


def write_model(path: Path, model: ModelParams) -> None:
    """Little-endian blob: ``FPKD``, uint32 header length, JSON header, float64 payload.

    The header holds ``activation``, ``count``, ``dtype`` (``"<f8"``) and
    ``layer_dims``; the payload is the flat parameter vector.
    """
    header: bytes = json.dumps(
        {
            "activation": str(model.activation),
            "count": int(model.weights.size),
            "dtype": "<f8",
            "layer_dims": [list(dims) for dims in model.layer_dims],
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    path.write_bytes(
        MODEL_MAGIC
        + _HEADER_LENGTH.pack(len(header))
        + header
        + model.weights.astype("<f8").tobytes(),
    )


def read_model(path: Path) -> ModelParams:
    """Inverse of :func:`write_model`.

    Raises:
        ArtifactError: On a missing file, wrong magic or size mismatch.

    """
    try:
        raw: bytes = path.read_bytes()
    except FileNotFoundError:
        raise ArtifactError(path=path, reason="file not found") from None
    prefix: int = len(MODEL_MAGIC) + _HEADER_LENGTH.size
    if len(raw) < prefix or raw[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ArtifactError(path=path, reason="not a model blob")
    (length,) = _HEADER_LENGTH.unpack_from(raw, len(MODEL_MAGIC))
    try:
        header: dict[str, Any] = json.loads(raw[prefix : prefix + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(path=path, reason=f"bad header: {exc}") from exc
    payload: bytes = raw[prefix + length :]
    if len(payload) != 8 * header["count"]:  # noqa: PLR2004
        raise ArtifactError(
            path=path,
            reason=f"expected {header['count']} float64 values, found {len(payload)} bytes",
        )
    return ModelParams(
        layer_dims=tuple(tuple(dims) for dims in header["layer_dims"]),
        weights=np.frombuffer(payload, dtype="<f8").astype(np.float64),
        activation=Activation(header["activation"]),
    )


def version_string() -> str:
    """``git describe`` of the source tree, else the installed package version."""
    described: subprocess.CompletedProcess[str] | None
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],  # noqa: S607
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            check=False,
            timeout=5,
        )
    except (OSError, subprocess.TimeoutExpired):
        described = None
    if described is not None and described.returncode == 0 and described.stdout.strip():
        return described.stdout.strip()
    try:
        return metadata.version("fed-pkd")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(directory: Path, manifest: RunManifest) -> None:
    """(Re)write ``manifest.json``."""
    logger.debug("Manifest %s: %s", directory, manifest.status)
    write_json(path=directory / MANIFEST, payload=manifest.model_dump(mode="json"))


def read_manifest(directory: Path) -> RunManifest:
    """Load ``manifest.json`` from a run directory."""
    return RunManifest.model_validate(read_json(path=directory / MANIFEST))

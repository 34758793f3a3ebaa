"""Records produced while training: shards, metrics, groups, experts, ledgers."""

from __future__ import annotations

import math
from typing import Any

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveInt,
    model_validator,
)

from defaults import default_model_config
from models.arrays import ModelParams
from models.constraints import ClassGroup, FloatArray, LabelArray
from models.enums import RunStatus, Stage

_TOLERANCE: float = 1e-12
Accuracy = float


class ClientShard(BaseModel):
    """Indices of one client's samples in the global training set."""

    model_config: ConfigDict = default_model_config

    client_id: NonNegativeInt
    sample_indices: LabelArray

    @model_validator(mode="after")
    def _check_unique(self) -> ClientShard:
        if np.unique(self.sample_indices).size != self.sample_indices.size:
            msg = f"client {self.client_id}: duplicate sample indices"
            raise ValueError(msg)
        return self

    @property
    def size(self) -> int:
        """Number of samples held."""
        return int(self.sample_indices.size)


class ClassAccuracy(BaseModel):
    """Class-wise accuracy summary of one evaluation."""

    model_config: ConfigDict = default_model_config

    class_accuracy: tuple[Accuracy, ...] = Field(min_length=1)
    max_accuracy: Accuracy
    ave_accuracy: Accuracy
    min_accuracy: Accuracy
    icd: Accuracy
    worst_class: NonNegativeInt

    @model_validator(mode="after")
    def _check_summary(self) -> ClassAccuracy:
        if any(not 0.0 <= a <= 1.0 for a in self.class_accuracy):
            msg = "class accuracies must lie in [0, 1]"
            raise ValueError(msg)
        if not (
            self.min_accuracy - _TOLERANCE
            <= self.ave_accuracy
            <= self.max_accuracy + _TOLERANCE
        ):
            msg = "expected min <= ave <= max"
            raise ValueError(msg)
        if self.icd != self.max_accuracy - self.min_accuracy:
            msg = "icd must equal max - min"
            raise ValueError(msg)
        if self.class_accuracy[self.worst_class] != self.min_accuracy:
            msg = "worst_class must point at the minimum accuracy"
            raise ValueError(msg)
        return self

    @classmethod
    def from_values(cls, class_accuracy: np.ndarray) -> ClassAccuracy:
        """Summarise per-class accuracies; ties for worst go to the lowest class."""
        values: tuple[float, ...] = tuple(float(a) for a in class_accuracy)
        highest: float = max(values)
        lowest: float = min(values)
        return cls(
            class_accuracy=values,
            max_accuracy=highest,
            ave_accuracy=math.fsum(values) / len(values),
            min_accuracy=lowest,
            icd=highest - lowest,
            worst_class=values.index(lowest),
        )


class RoundMetrics(ClassAccuracy):
    """Metrics of one global round."""

    round: NonNegativeInt  # noqa: A003
    stage: Stage
    flops_round: NonNegativeFloat = 0.0
    kd_flops: NonNegativeFloat = 0.0
    n_kd: NonNegativeInt = 0


class LocalStats(BaseModel):
    """What a client reports back besides its weights."""

    model_config: ConfigDict = default_model_config

    client_id: NonNegativeInt
    n_samples: NonNegativeInt
    steps: NonNegativeInt
    trigger_counts: tuple[NonNegativeInt, ...] = ()
    misclassified_counts: tuple[NonNegativeInt, ...] = ()
    flops: NonNegativeFloat = 0.0
    kd_flops: NonNegativeFloat = 0.0
    mean_loss: float = 0.0

    @property
    def n_kd(self) -> int:
        """Expert activations over all local batches."""
        return sum(self.trigger_counts)


class ConfusionStats(BaseModel):
    """``counts[i][j]``: samples of true class ``i`` predicted as ``j``."""

    model_config: ConfigDict = default_model_config

    counts: np.ndarray

    @model_validator(mode="before")
    @classmethod
    def _as_matrix(cls, data: dict) -> dict:
        counts: np.ndarray = np.asarray(data["counts"], dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:  # noqa: PLR2004
            msg = f"confusion counts must be square, got {counts.shape}"
            raise ValueError(msg)
        if counts.size and counts.min() < 0:
            msg = "confusion counts must be non-negative"
            raise ValueError(msg)
        return {**data, "counts": counts}

    @property
    def class_count(self) -> int:
        """C."""
        return int(self.counts.shape[0])

    @property
    def row_totals(self) -> np.ndarray:
        """Samples per true class."""
        return self.counts.sum(axis=1)


class MisclassProbMatrix(BaseModel):
    """Row-normalised confusion: ``m[i][j] = counts[i][j] / row_sum(i)``."""

    model_config: ConfigDict = default_model_config

    m: FloatArray

    @model_validator(mode="after")
    def _check_rows(self) -> MisclassProbMatrix:
        if self.m.ndim != 2 or self.m.shape[0] != self.m.shape[1]:  # noqa: PLR2004
            msg = f"matrix must be square, got {self.m.shape}"
            raise ValueError(msg)
        if self.m.min() < 0.0 or self.m.max() > 1.0:
            msg = "probabilities must lie in [0, 1]"
            raise ValueError(msg)
        if not np.allclose(self.m.sum(axis=1), 1.0, rtol=0.0, atol=1e-9):
            msg = "rows must sum to 1"
            raise ValueError(msg)
        return self

    def off_diagonal(self) -> np.ndarray:
        """Copy with the diagonal zeroed (the diagonal never forms an edge)."""
        matrix: np.ndarray = self.m.copy()
        np.fill_diagonal(matrix, 0.0)
        return matrix


class WeakGroupSet(BaseModel):
    """Ordered weak-class groups; a class may sit in several groups."""

    model_config: ConfigDict = default_model_config

    groups: tuple[ClassGroup, ...] = ()

    @model_validator(mode="after")
    def _check_distinct(self) -> WeakGroupSet:
        if len(set(self.groups)) != len(self.groups):
            msg = "groups must be distinct"
            raise ValueError(msg)
        return self

    def __len__(self) -> int:
        return len(self.groups)

    def membership(self, class_count: int) -> np.ndarray:
        """Boolean ``G x C`` matrix, True where the class belongs to the group."""
        matrix: np.ndarray = np.zeros((len(self.groups), class_count), dtype=bool)
        for row, group in enumerate(self.groups):
            matrix[row, list(group)] = True
        return matrix


class TriggerRecord(BaseModel):
    """Routing decision for one sample of a local batch."""

    model_config: ConfigDict = default_model_config

    sample_index: NonNegativeInt
    true_class: NonNegativeInt
    predicted_class: NonNegativeInt
    expert: NonNegativeInt | None = None

    @model_validator(mode="after")
    def _check_trigger(self) -> TriggerRecord:
        if self.expert is not None and self.true_class == self.predicted_class:
            msg = "a correctly classified sample never triggers an expert"
            raise ValueError(msg)
        return self


class Expert(BaseModel):
    """A group-restricted model whose output ``k`` is class ``group[k]``."""

    model_config: ConfigDict = default_model_config

    group: ClassGroup
    model: ModelParams

    @model_validator(mode="after")
    def _check_width(self) -> Expert:
        if self.model.output_dim != len(self.group):
            msg = (
                f"expert for {list(self.group)} needs {len(self.group)} outputs, "
                f"got {self.model.output_dim}"
            )
            raise ValueError(msg)
        return self

    @property
    def index_map(self) -> dict[int, int]:
        """Global class -> expert output position."""
        return {label: position for position, label in enumerate(self.group)}


class FlopLedger(BaseModel):
    """Training cost accounting per stage, in FLOPs.

    ``u_round`` is the baseline cost of one local training round over every
    training sample; stage costs are per round.
    """

    model_config: ConfigDict = default_model_config

    u_fp: NonNegativeFloat
    u_bp: NonNegativeFloat
    u_round: NonNegativeFloat
    u_t1: NonNegativeFloat
    u_t2: NonNegativeFloat
    u_t3_exact: tuple[NonNegativeFloat, ...] = ()
    u_t3_approx: tuple[NonNegativeFloat, ...] = ()
    n_kd_per_round: tuple[NonNegativeInt, ...] = ()
    rounds: tuple[NonNegativeInt, ...] = ()
    local_epochs: PositiveInt
    expert_epochs: PositiveInt
    total_samples: PositiveInt
    group_samples: tuple[NonNegativeInt, ...] = ()

    @model_validator(mode="after")
    def _check_identity(self) -> FlopLedger:
        expected: float = self.local_epochs * self.total_samples * (self.u_fp + self.u_bp)
        if not math.isclose(self.u_round, expected, rel_tol=_TOLERANCE):
            msg = "u_round must equal E * N * (u_fp + u_bp)"
            raise ValueError(msg)
        lengths: set[int] = {
            len(self.u_t3_exact),
            len(self.u_t3_approx),
            len(self.n_kd_per_round),
            len(self.rounds),
        }
        if len(lengths) != 1:
            msg = "per-round ledger columns must have equal length"
            raise ValueError(msg)
        return self

    @property
    def kd_ratios(self) -> tuple[float, ...]:
        """``n_kd / (E * N)`` per distillation round."""
        scale: int = self.local_epochs * self.total_samples
        return tuple(n / scale for n in self.n_kd_per_round)


class GroupReport(BaseModel):
    """What the stage boundary decided, persisted as ``groups.json``."""

    model_config: ConfigDict = default_model_config

    groups: tuple[tuple[int, ...], ...]
    theta: float
    round: NonNegativeInt  # noqa: A003
    detected: tuple[tuple[int, ...], ...] = ()
    within_group_distance: float | None = None
    cross_group_distance: float | None = None
    expert_accuracy: tuple[float, ...] = ()
    warmup_group_accuracy: tuple[float, ...] = ()
    group_samples: tuple[int, ...] = ()


class RunManifest(BaseModel):
    """Index of an output directory."""

    model_config: ConfigDict = default_model_config | ConfigDict(frozen=False)

    status: RunStatus = RunStatus.INCOMPLETE
    command: str
    mode: str | None = None
    seed: int | None = None
    version: str
    config_hash: str
    config: dict
    files: list[str] = Field(default_factory=list)
    metadata: dict[str, Any] = Field(default_factory=dict)
    error: str | None = None

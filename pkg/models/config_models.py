"""Run configuration documents."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Annotated, Any, Literal

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    model_validator,
)

import defaults
from defaults import default_model_config
from models.constraints import FloatArray, Fraction, Seed, Temperature, Threshold
from models.enums import KlDirection, PartitionStrategy, TieBreak


class SyntheticSpec(BaseModel):
    """Isotropic Gaussian classes around fixed means."""

    model_config: ConfigDict = default_model_config

    class_count: PositiveInt
    dim: PositiveInt
    samples_per_class: PositiveInt
    class_means: FloatArray
    within_class_stddev: PositiveFloat
    seed: Seed = 0

    @model_validator(mode="after")
    def _check_means(self) -> SyntheticSpec:
        if self.class_means.shape != (self.class_count, self.dim):
            msg = (
                f"class_means must be {self.class_count}x{self.dim}, "
                f"got {self.class_means.shape}"
            )
            raise ValueError(msg)
        return self


class SyntheticSource(BaseModel):
    """Dataset section for the synthetic confusable-clusters benchmark.

    Without ``class_means`` the planted benchmark geometry is used, which needs
    ten classes.
    """

    model_config: ConfigDict = default_model_config

    kind: Literal["synthetic"] = "synthetic"
    class_count: PositiveInt = 10
    dim: PositiveInt = 16
    samples_per_class: PositiveInt = 300
    test_samples_per_class: PositiveInt = 100
    within_class_stddev: PositiveFloat = 1.0
    class_means: tuple[tuple[float, ...], ...] | None = None
    seed: Seed = 0


class IdxSource(BaseModel):
    """Dataset section for IDX image/label files (MNIST, FashionMNIST)."""

    model_config: ConfigDict = default_model_config

    kind: Literal["idx"] = "idx"
    root: Path = Field(
        default=Path("data"),
        description="Directory holding the four files; FEDPKD_DATA_DIR wins.",
    )
    train_images: str = "train-images-idx3-ubyte"
    train_labels: str = "train-labels-idx1-ubyte"
    test_images: str = "t10k-images-idx3-ubyte"
    test_labels: str = "t10k-labels-idx1-ubyte"
    name: str = "idx"


DatasetSource = Annotated[SyntheticSource | IdxSource, Field(discriminator="kind")]


class PartitionSpec(BaseModel):
    """Client split of the global training set."""

    model_config: ConfigDict = default_model_config

    strategy: PartitionStrategy = PartitionStrategy.LOCAL_BALANCED
    client_count: PositiveInt = defaults.client_count
    classes_per_client: PositiveInt = Field(
        default=defaults.classes_per_client,
        description="Pathological strategy only.",
    )
    alpha: PositiveFloat = Field(
        default=defaults.dirichlet_alpha,
        description="Dirichlet strategy only.",
    )
    seed: Seed = 0


class NetworkSpec(BaseModel):
    """Hidden widths of the dense rectifier network."""

    model_config: ConfigDict = default_model_config

    hidden_layers: tuple[PositiveInt, ...] = defaults.hidden_layers


class FedConfig(BaseModel):
    """FedAvg hyperparameters."""

    model_config: ConfigDict = default_model_config

    rounds: PositiveInt = defaults.rounds
    client_fraction: Fraction = defaults.client_fraction
    local_epochs: PositiveInt = defaults.local_epochs
    batch_size: PositiveInt = defaults.batch_size
    learning_rate: PositiveFloat = defaults.learning_rate
    seed: Seed = 0


class PkdConfig(BaseModel):
    """Warmup, expert learning and partial distillation settings."""

    model_config: ConfigDict = default_model_config

    warmup_rounds: PositiveInt = defaults.warmup_rounds
    expert_rounds: PositiveInt = defaults.expert_rounds
    expert_epochs: PositiveInt | None = Field(
        default=None,
        description="Local epochs per expert round; defaults to fed.local_epochs.",
    )
    pkd_rounds: NonNegativeInt | None = Field(
        default=None,
        description="Distillation rounds; defaults to fed.rounds - warmup_rounds.",
    )
    theta: Threshold | None = Field(
        default=None,
        description="Confusion threshold; None derives it from the matrix.",
    )
    max_groups: PositiveInt = defaults.max_groups
    pkd_lambda: NonNegativeFloat = Field(default=defaults.pkd_lambda, alias="lambda")
    temperature: Temperature = defaults.temperature
    kl_direction: KlDirection = KlDirection.STUDENT_FIRST
    tie_break: TieBreak = TieBreak.LOWEST_INDEX


class RunConfig(BaseModel):
    """A complete, validated run document."""

    model_config: ConfigDict = default_model_config

    dataset: DatasetSource = Field(default_factory=SyntheticSource)
    partition: PartitionSpec = Field(default_factory=PartitionSpec)
    network: NetworkSpec = Field(default_factory=NetworkSpec)
    fed: FedConfig = Field(default_factory=FedConfig)
    pkd: PkdConfig = Field(default_factory=PkdConfig)
    output_dir: Path = Path("runs")
    seeds: tuple[Seed, ...] = Field(default=(0,), min_length=1)

    @model_validator(mode="after")
    def _check_stage_rounds(self) -> RunConfig:
        if self.pkd.pkd_rounds is None and self.pkd.warmup_rounds > self.fed.rounds:
            msg = (
                f"pkd.warmup_rounds ({self.pkd.warmup_rounds}) exceeds "
                f"fed.rounds ({self.fed.rounds})"
            )
            raise ValueError(msg)
        return self

    @property
    def pkd_stage_rounds(self) -> int:
        """Rounds of distillation after warmup."""
        if self.pkd.pkd_rounds is not None:
            return self.pkd.pkd_rounds
        return self.fed.rounds - self.pkd.warmup_rounds

    @property
    def expert_epochs(self) -> int:
        """Local epochs per expert round."""
        return self.pkd.expert_epochs or self.fed.local_epochs

    def for_seed(self, seed: int) -> RunConfig:
        """Copy with the training and partition seeds replaced by ``seed``."""
        return self.model_copy(
            update={
                "fed": self.fed.model_copy(update={"seed": seed}),
                "partition": self.partition.model_copy(update={"seed": seed}),
                "seeds": (seed,),
            },
        )

    def canonical(self) -> dict[str, Any]:
        """JSON-ready dict using the public key names."""
        return self.model_dump(mode="json", by_alias=True)

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form."""
        text: str = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

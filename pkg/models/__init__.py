"""Init."""

from models.arrays import Dataset, ModelParams, parameter_count, split_layers
from models.config_models import (
    DatasetSource,
    FedConfig,
    IdxSource,
    NetworkSpec,
    PartitionSpec,
    PkdConfig,
    RunConfig,
    SyntheticSource,
    SyntheticSpec,
)
from models.enums import (
    Activation,
    KlDirection,
    PartitionStrategy,
    RunStatus,
    Stage,
    TieBreak,
    TrainMode,
)
from models.records import (
    ClassAccuracy,
    ClientShard,
    ConfusionStats,
    Expert,
    FlopLedger,
    GroupReport,
    LocalStats,
    MisclassProbMatrix,
    RoundMetrics,
    RunManifest,
    TriggerRecord,
    WeakGroupSet,
)

__all__: list[str] = [
    "Activation",
    "ClassAccuracy",
    "ClientShard",
    "ConfusionStats",
    "Dataset",
    "DatasetSource",
    "Expert",
    "FedConfig",
    "FlopLedger",
    "GroupReport",
    "IdxSource",
    "KlDirection",
    "LocalStats",
    "MisclassProbMatrix",
    "ModelParams",
    "NetworkSpec",
    "PartitionSpec",
    "PartitionStrategy",
    "PkdConfig",
    "RoundMetrics",
    "RunConfig",
    "RunManifest",
    "RunStatus",
    "Stage",
    "SyntheticSource",
    "SyntheticSpec",
    "TieBreak",
    "TrainMode",
    "TriggerRecord",
    "WeakGroupSet",
    "parameter_count",
    "split_layers",
]

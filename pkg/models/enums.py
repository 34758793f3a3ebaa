"""Enums."""

from enum import StrEnum, auto


# data partitioning
class PartitionStrategy(StrEnum):
    """How the global training set is split across clients."""

    LOCAL_BALANCED = "local-balanced"
    PATHOLOGICAL = "pathological"
    DIRICHLET = "dirichlet"


class TrainMode(StrEnum):
    """What ``train`` runs."""

    FEDAVG = auto()
    PKD = auto()
    CENTRALIZED = auto()


class Stage(StrEnum):
    """Pipeline stage a round belongs to."""

    FEDAVG = auto()
    CENTRALIZED = auto()
    WARMUP = auto()
    EXPERT = auto()
    PKD = auto()


class Activation(StrEnum):
    """Hidden-layer nonlinearity (only the rectifier is supported)."""

    RELU = auto()


class KlDirection(StrEnum):
    """Argument order of the distillation divergence.

    ``student_first`` is D_KL(p_s || p_e), ``expert_first`` is D_KL(p_e || p_s).
    """

    STUDENT_FIRST = auto()
    EXPERT_FIRST = auto()


class TieBreak(StrEnum):
    """Expert choice when a misclassified pair lies in several groups."""

    LOWEST_INDEX = auto()
    SMALLEST_GROUP = auto()


class RunStatus(StrEnum):
    """Manifest status of an output directory."""

    INCOMPLETE = auto()
    COMPLETE = auto()

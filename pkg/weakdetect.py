"""Weak-class group discovery from client confusion statistics."""

import itertools
import logging
from collections.abc import Sequence

import networkx as nx
import numpy as np
from scipy.spatial.distance import cdist

import defaults
from errors import DatasetError, InvalidArgumentError
from fed import confusion_counts
from models.arrays import Dataset, ModelParams
from models.records import ClientShard, ConfusionStats, MisclassProbMatrix, WeakGroupSet
from nn_core import forward

logger: logging.Logger = logging.getLogger(__name__)


def collect_confusion(
    model: ModelParams,
    train: Dataset,
    shards: Sequence[ClientShard],
) -> ConfusionStats:
    """Sum each client's confusion counts over its own training shard.

    Clients are summed in ascending id order.
    """
    total: np.ndarray = np.zeros((train.class_count, train.class_count), dtype=np.int64)
    for shard in sorted(shards, key=lambda s: s.client_id):
        local: ConfusionStats = confusion_counts(
            model=model,
            ds=train,
            indices=shard.sample_indices,
        )
        logger.debug("Client %d confusion rows: %s", shard.client_id, local.row_totals.tolist())
        total += local.counts
    return ConfusionStats(counts=total)


def misclassification_matrix(stats: ConfusionStats) -> MisclassProbMatrix:
    """Row-normalise the counts.

    Raises:
        DatasetError: If a class has no samples.

    """
    totals: np.ndarray = stats.row_totals
    empty: list[int] = np.flatnonzero(totals == 0).tolist()
    if empty:
        msg = f"classes {empty} have no training samples"
        raise DatasetError(msg)
    return MisclassProbMatrix(m=stats.counts / totals[:, np.newaxis])


def default_threshold(m: MisclassProbMatrix) -> float:
    """``5 x`` the mean off-diagonal probability, clipped to ``[0.05, 0.5]``."""
    classes: int = m.m.shape[0]
    if classes < 2:  # noqa: PLR2004
        return defaults.theta_ceiling
    mean: float = float(m.off_diagonal().sum()) / (classes * (classes - 1))
    return float(
        np.clip(defaults.theta_multiplier * mean, defaults.theta_floor, defaults.theta_ceiling),
    )


def confusion_graph(m: np.ndarray, threshold: float) -> nx.Graph:
    """Classes as nodes, an edge where either direction reaches ``threshold``."""
    graph: nx.Graph = nx.Graph()
    graph.add_nodes_from(range(m.shape[0]))
    symmetric: np.ndarray = np.maximum(m, m.T)
    for i, j in zip(*np.triu_indices(m.shape[0], k=1), strict=True):
        if symmetric[i, j] >= threshold:
            graph.add_edge(int(i), int(j))
    return graph


def detect_groups(m: MisclassProbMatrix | np.ndarray, threshold: float) -> WeakGroupSet:
    """Maximal cliques (two or more classes) of the confusion graph.

    Groups are ordered by descending pairwise confusion mass
    ``sum_{i<j in g} m[i][j] + m[j][i]``, then lexicographically.

    Args:
        m (MisclassProbMatrix | np.ndarray): Misclassification probabilities;
            a bare matrix may be any non-negative scaling.
        threshold (float): Edge threshold, positive.

    Returns:
        WeakGroupSet: Possibly empty.

    Raises:
        InvalidArgumentError: If ``threshold`` is not positive.

    """
    if not threshold > 0.0:
        msg = f"threshold must be positive, got {threshold}"
        raise InvalidArgumentError(msg)
    matrix: np.ndarray = m.m if isinstance(m, MisclassProbMatrix) else np.asarray(m, dtype=np.float64)
    graph: nx.Graph = confusion_graph(m=matrix, threshold=threshold)
    cliques: list[tuple[int, ...]] = [
        tuple(sorted(clique)) for clique in nx.find_cliques(graph) if len(clique) >= 2  # noqa: PLR2004
    ]

    def mass(group: tuple[int, ...]) -> float:
        return float(
            sum(matrix[i, j] + matrix[j, i] for i, j in itertools.combinations(group, 2)),
        )

    ordered: list[tuple[int, ...]] = sorted(cliques, key=lambda g: (-mass(g), g))
    logger.info("Detected %d weak groups at threshold %.4g: %s", len(ordered), threshold, ordered)
    return WeakGroupSet(groups=tuple(ordered))


def select_worst_groups(
    groups: WeakGroupSet,
    class_accuracy: Sequence[float],
    max_groups: int,
) -> WeakGroupSet:
    """Keep the ``max_groups`` groups with the lowest mean class accuracy.

    Ties keep the earlier group; kept groups stay in detection order.
    """
    if len(groups) <= max_groups:
        return groups
    scores: list[tuple[float, int]] = [
        (float(np.mean([class_accuracy[c] for c in group])), position)
        for position, group in enumerate(groups.groups)
    ]
    kept: list[int] = sorted(position for _, position in sorted(scores)[:max_groups])
    dropped: list[tuple[int, ...]] = [
        g for position, g in enumerate(groups.groups) if position not in kept
    ]
    logger.info("Keeping the %d worst groups, dropping %s", max_groups, dropped)
    return WeakGroupSet(groups=tuple(groups.groups[position] for position in kept))


def class_feature_means(model: ModelParams, ds: Dataset) -> np.ndarray:
    """``C x f`` mean penultimate feature per class.

    Raises:
        DatasetError: If a class has no samples.

    """
    counts: np.ndarray = ds.class_counts
    empty: list[int] = np.flatnonzero(counts == 0).tolist()
    if empty:
        msg = f"classes {empty} have no samples in {ds.name}"
        raise DatasetError(msg)
    _, features = forward(model=model, inputs=ds.features)
    sums: np.ndarray = np.zeros((ds.class_count, features.shape[1]))
    np.add.at(sums, ds.labels, features)
    return sums / counts[:, np.newaxis]


def feature_distance_matrix(model: ModelParams, ds: Dataset) -> np.ndarray:
    """Euclidean distances between per-class mean features, ``C x C``."""
    means: np.ndarray = class_feature_means(model=model, ds=ds)
    return cdist(means, means, metric="euclidean")


def group_distance_summary(
    distances: np.ndarray,
    groups: WeakGroupSet,
) -> tuple[float | None, float | None]:
    """Mean distance over class pairs sharing a group, and over all other pairs.

    Returns ``(None, None)`` when there are no groups.
    """
    if not len(groups):
        return None, None
    within: set[tuple[int, int]] = {
        pair for group in groups.groups for pair in itertools.combinations(group, 2)
    }
    classes: int = distances.shape[0]
    inside: list[float] = []
    outside: list[float] = []
    for pair in itertools.combinations(range(classes), 2):
        (inside if pair in within else outside).append(float(distances[pair]))
    cross: float | None = float(np.mean(outside)) if outside else None
    return float(np.mean(inside)), cross

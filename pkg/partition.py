"""Client partitioning of a global training set."""

import logging
import math
from collections.abc import Mapping, Sequence

import numpy as np

from errors import PartitionError
from models.arrays import Dataset
from models.config_models import PartitionSpec
from models.enums import PartitionStrategy
from models.records import ClientShard

logger: logging.Logger = logging.getLogger(__name__)

DIRICHLET_CONVENTION: str = "per-class proportions over clients"


def _nearest_divisor(value: int, target: int) -> int:
    divisors: list[int] = [d for d in range(1, value + 1) if value % d == 0]
    return min(divisors, key=lambda d: (abs(d - target), d))


def _to_shards(buckets: Sequence[list[np.ndarray]]) -> list[ClientShard]:
    shards: list[ClientShard] = []
    for client_id, parts in enumerate(buckets):
        indices: np.ndarray = (
            np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
        )
        shards.append(ClientShard(client_id=client_id, sample_indices=indices))
    return shards


def partition_balanced(ds: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    """Every client gets ``count(c) / K`` samples of every class ``c``.

    Args:
        ds (Dataset): Global training set.
        spec (PartitionSpec): ``client_count`` and ``seed`` are used.

    Returns:
        list[ClientShard]: One shard per client, indices ascending.

    Raises:
        PartitionError: If a class count is not divisible by ``client_count``;
            the message suggests the nearest client count that works.

    """
    clients: int = spec.client_count
    counts: np.ndarray = ds.class_counts
    if np.any(counts % clients):
        common: int = int(np.gcd.reduce(counts[counts > 0]))
        nearest: int = _nearest_divisor(value=common, target=clients)
        raise PartitionError(
            message=(
                f"class counts {counts.tolist()} are not all divisible by "
                f"client_count={clients}"
            ),
            suggestion=f"nearest valid client_count is {nearest}",
        )
    rng: np.random.Generator = np.random.default_rng(spec.seed)
    buckets: list[list[np.ndarray]] = [[] for _ in range(clients)]
    for label in range(ds.class_count):
        shuffled: np.ndarray = rng.permutation(ds.indices_of(label))
        for client_id, part in enumerate(np.split(shuffled, clients)):
            buckets[client_id].append(part)
    return _to_shards(buckets=buckets)


def _pathological_single(ds: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    clients: int = spec.client_count
    rng: np.random.Generator = np.random.default_rng(spec.seed)
    buckets: list[list[np.ndarray]] = [[] for _ in range(clients)]
    for label in range(ds.class_count):
        owners: list[int] = list(range(label, clients, ds.class_count))
        members: np.ndarray = ds.indices_of(label)
        if members.size % len(owners):
            raise PartitionError(
                message=(
                    f"class {label} has {members.size} samples, not divisible "
                    f"by its {len(owners)} clients"
                ),
                suggestion=f"use a client_count that is a multiple of {ds.class_count}",
            )
        for client_id, part in zip(
            owners,
            np.split(rng.permutation(members), len(owners)),
            strict=True,
        ):
            buckets[client_id].append(part)
    return _to_shards(buckets=buckets)


def _pathological_shards(ds: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    clients: int = spec.client_count
    per_client: int = spec.classes_per_client
    shard_count: int = per_client * clients
    if ds.size % shard_count:
        raise PartitionError(
            message=f"{ds.size} samples cannot be cut into {shard_count} equal shards",
        )
    rng: np.random.Generator = np.random.default_rng(spec.seed)
    shuffled: np.ndarray = rng.permutation(ds.size)
    ordered: np.ndarray = shuffled[np.argsort(ds.labels[shuffled], kind="stable")]
    pieces: list[np.ndarray] = np.split(ordered, shard_count)
    for position, piece in enumerate(pieces):
        if np.unique(ds.labels[piece]).size != 1:
            raise PartitionError(
                message=f"shard {position} straddles a class boundary",
                suggestion="class counts must be multiples of the shard size",
            )
    buckets: list[list[np.ndarray]] = [
        [pieces[client_id + turn * clients] for turn in range(per_client)]
        for client_id in range(clients)
    ]
    for client_id, parts in enumerate(buckets):
        held: int = np.unique(ds.labels[np.concatenate(parts)]).size
        if held != per_client:
            raise PartitionError(
                message=f"client {client_id} would hold {held} classes, not {per_client}",
                suggestion="use a client_count that divides evenly into the classes",
            )
    return _to_shards(buckets=buckets)


def partition_pathological(ds: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    """Each client gets samples of exactly ``classes_per_client`` classes.

    With one class per client, client ``k`` owns class ``k mod C`` and shares
    it with the other owners of that class. With two or more, samples are
    sorted by label (shuffled within class), cut into ``c * K`` equal shards
    and client ``k`` receives shards ``k, k + K, ..., k + (c - 1) * K``.

    Raises:
        PartitionError: If ``c * K < C``, ``c > C``, or the counts do not
            split evenly.

    """
    classes: int = ds.class_count
    per_client: int = spec.classes_per_client
    if per_client > classes:
        raise PartitionError(
            message=f"classes_per_client={per_client} exceeds the {classes} classes",
        )
    if per_client * spec.client_count < classes:
        raise PartitionError(
            message=(
                f"{spec.client_count} clients x {per_client} classes cannot "
                f"cover {classes} classes"
            ),
            suggestion=f"use at least {math.ceil(classes / per_client)} clients",
        )
    if per_client == 1:
        return _pathological_single(ds=ds, spec=spec)
    return _pathological_shards(ds=ds, spec=spec)


def largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total``, closest to ``proportions * total``.

    Leftover units go to the largest fractional parts, lowest index first on ties.
    """
    raw: np.ndarray = proportions * total
    counts: np.ndarray = np.floor(raw).astype(np.int64)
    leftover: int = total - int(counts.sum())
    order: np.ndarray = np.argsort(-(raw - counts), kind="stable")
    counts[order[:leftover]] += 1
    return counts


def partition_dirichlet(ds: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    """Split each class over clients with ``Dir(alpha)`` proportions.

    Per class, in class order: ``K`` gamma variates with shape ``alpha`` are
    normalised (if all underflow to zero the class goes to one uniformly chosen
    client), rounded with :func:`largest_remainder`, and a permutation of the
    class indices is cut at the cumulative counts.
    """
    clients: int = spec.client_count
    rng: np.random.Generator = np.random.default_rng(spec.seed)
    buckets: list[list[np.ndarray]] = [[] for _ in range(clients)]
    for label in range(ds.class_count):
        members: np.ndarray = ds.indices_of(label)
        variates: np.ndarray = rng.standard_gamma(spec.alpha, size=clients)
        total: float = float(variates.sum())
        proportions: np.ndarray
        if total > 0.0:
            proportions = variates / total
        else:
            proportions = np.zeros(clients)
            proportions[rng.integers(clients)] = 1.0
        counts: np.ndarray = largest_remainder(proportions=proportions, total=members.size)
        shuffled: np.ndarray = rng.permutation(members)
        for client_id, part in enumerate(np.split(shuffled, np.cumsum(counts)[:-1])):
            buckets[client_id].append(part)
    return _to_shards(buckets=buckets)


def partition(ds: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    """Dispatch on ``spec.strategy`` and log a summary."""
    shards: list[ClientShard]
    match spec.strategy:
        case PartitionStrategy.LOCAL_BALANCED:
            shards = partition_balanced(ds=ds, spec=spec)
        case PartitionStrategy.PATHOLOGICAL:
            shards = partition_pathological(ds=ds, spec=spec)
        case PartitionStrategy.DIRICHLET:
            shards = partition_dirichlet(ds=ds, spec=spec)
    empty: list[int] = [shard.client_id for shard in shards if shard.size == 0]
    if empty:
        logger.warning("Clients %s received no samples and will be skipped", empty)
    logger.info(
        "Created %d %s partitions of %s (sizes %d..%d)",
        len(shards),
        spec.strategy,
        ds.name,
        min(shard.size for shard in shards),
        max(shard.size for shard in shards),
    )
    logger.debug("Per-client class counts: %s", client_class_counts(ds, shards).tolist())
    return shards


def client_class_counts(ds: Dataset, shards: Sequence[ClientShard]) -> np.ndarray:
    """``K x C`` matrix of samples per client and class."""
    return np.stack(
        [
            np.bincount(ds.labels[shard.sample_indices], minlength=ds.class_count)
            for shard in shards
        ],
    )


def check_partition(shards: Sequence[ClientShard], dataset_size: int) -> None:
    """Verify that the shards cover ``0..dataset_size-1`` exactly once.

    Raises:
        PartitionError: On a missing, repeated or out-of-range index.

    """
    merged: np.ndarray = np.concatenate(
        [shard.sample_indices for shard in shards] or [np.empty(0, dtype=np.int64)],
    )
    if merged.size != dataset_size or not np.array_equal(
        np.sort(merged),
        np.arange(dataset_size),
    ):
        raise PartitionError(
            message=f"shards do not cover the {dataset_size} samples exactly once",
        )


def shards_to_mapping(shards: Sequence[ClientShard]) -> dict[str, list[int]]:
    """``client_id -> indices`` with string keys, ready for JSON."""
    return {str(shard.client_id): shard.sample_indices.tolist() for shard in shards}


def shards_from_mapping(
    mapping: Mapping[str, Sequence[int]],
    dataset_size: int,
) -> list[ClientShard]:
    """Inverse of :func:`shards_to_mapping`, checked against the dataset size."""
    shards: list[ClientShard] = sorted(
        (
            ClientShard(client_id=int(key), sample_indices=np.asarray(indices, dtype=np.int64))
            for key, indices in mapping.items()
        ),
        key=lambda shard: shard.client_id,
    )
    check_partition(shards=shards, dataset_size=dataset_size)
    return shards

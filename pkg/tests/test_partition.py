"""Client splits."""

import numpy as np
import pytest

from errors import PartitionError
from models.arrays import Dataset
from models.config_models import PartitionSpec
from models.enums import PartitionStrategy
from models.records import ClientShard
from partition import (
    check_partition,
    client_class_counts,
    largest_remainder,
    partition,
    partition_balanced,
    partition_dirichlet,
    partition_pathological,
    shards_from_mapping,
    shards_to_mapping,
)


def _labeled(counts: list[int]) -> Dataset:
    labels: np.ndarray = np.repeat(np.arange(len(counts)), counts)
    rng: np.random.Generator = np.random.default_rng(0)
    return Dataset(
        features=rng.normal(size=(labels.size, 2)),
        labels=rng.permutation(labels),
        class_count=len(counts),
    )


def _assert_exact_cover(ds: Dataset, shards: list[ClientShard]) -> None:
    check_partition(shards, ds.size)
    np.testing.assert_array_equal(client_class_counts(ds, shards).sum(axis=0), ds.class_counts)


def test_balanced_arithmetic() -> None:
    ds: Dataset = _labeled([300] * 10)
    shards: list[ClientShard] = partition_balanced(ds, PartitionSpec(client_count=10, seed=3))
    _assert_exact_cover(ds, shards)
    np.testing.assert_array_equal(client_class_counts(ds, shards), np.full((10, 10), 30))
    assert [s.size for s in shards] == [300] * 10


def test_balanced_single_client_is_everything() -> None:
    ds: Dataset = _labeled([7, 3, 5])
    (shard,) = partition_balanced(ds, PartitionSpec(client_count=1))
    np.testing.assert_array_equal(shard.sample_indices, np.arange(ds.size))


def test_balanced_indivisible_suggests_divisor() -> None:
    ds: Dataset = _labeled([12, 18])
    with pytest.raises(PartitionError) as caught:
        partition_balanced(ds, PartitionSpec(client_count=5))
    assert caught.value.suggestion == "nearest valid client_count is 6"


@pytest.mark.parametrize("strategy", list(PartitionStrategy))
def test_same_seed_same_shards(strategy: PartitionStrategy) -> None:
    ds: Dataset = _labeled([20] * 4)
    spec = PartitionSpec(strategy=strategy, client_count=4, classes_per_client=2, seed=9)
    first, second = partition(ds, spec), partition(ds, spec)
    for a, b in zip(first, second, strict=True):
        np.testing.assert_array_equal(a.sample_indices, b.sample_indices)


def test_pathological_single_class_per_client() -> None:
    ds: Dataset = _labeled([50] * 10)
    shards = partition_pathological(
        ds,
        PartitionSpec(strategy=PartitionStrategy.PATHOLOGICAL, client_count=10, classes_per_client=1),
    )
    _assert_exact_cover(ds, shards)
    for shard in shards:
        np.testing.assert_array_equal(shard.sample_indices, ds.indices_of(shard.client_id))


def test_pathological_two_classes_per_client() -> None:
    ds: Dataset = _labeled([40] * 10)
    shards = partition_pathological(
        ds,
        PartitionSpec(strategy=PartitionStrategy.PATHOLOGICAL, client_count=10, classes_per_client=2),
    )
    _assert_exact_cover(ds, shards)
    held: np.ndarray = client_class_counts(ds, shards) > 0
    np.testing.assert_array_equal(held.sum(axis=1), np.full(10, 2))
    np.testing.assert_array_equal(held.sum(axis=0), np.full(10, 2))


def test_pathological_infeasible() -> None:
    ds: Dataset = _labeled([10] * 10)
    with pytest.raises(PartitionError):
        partition_pathological(ds, PartitionSpec(client_count=4, classes_per_client=2))
    with pytest.raises(PartitionError):
        partition_pathological(ds, PartitionSpec(client_count=10, classes_per_client=11))


def test_largest_remainder_sums_exactly() -> None:
    counts: np.ndarray = largest_remainder(np.array([0.5, 0.25, 0.25]), 3)
    np.testing.assert_array_equal(counts, [1, 1, 1])
    # equal remainders go to the lower index
    np.testing.assert_array_equal(largest_remainder(np.array([0.5, 0.5]), 3), [2, 1])
    rng: np.random.Generator = np.random.default_rng(1)
    for total in range(0, 200, 7):
        assert largest_remainder(rng.dirichlet(np.ones(6)), total).sum() == total


def _dirichlet_oracle(ds: Dataset, clients: int, alpha: float, seed: int) -> np.ndarray:
    """Per-class counts from gamma variates normalised, then largest remainder."""
    rng: np.random.Generator = np.random.default_rng(seed)
    counts: np.ndarray = np.zeros((clients, ds.class_count), dtype=np.int64)
    for label in range(ds.class_count):
        size: int = int(ds.class_counts[label])
        variates: np.ndarray = np.array([rng.standard_gamma(alpha) for _ in range(clients)])
        raw: np.ndarray = variates / variates.sum() * size
        floor: np.ndarray = np.floor(raw).astype(np.int64)
        remainders: list[tuple[float, int]] = sorted(
            ((-(raw[k] - floor[k]), k) for k in range(clients)),
        )
        for _, k in remainders[: size - int(floor.sum())]:
            floor[k] += 1
        counts[:, label] = floor
        rng.permutation(size)
    return counts


def test_dirichlet_matches_gamma_oracle() -> None:
    ds: Dataset = _labeled([300] * 10)
    spec = PartitionSpec(strategy=PartitionStrategy.DIRICHLET, client_count=10, alpha=0.5, seed=42)
    shards: list[ClientShard] = partition_dirichlet(ds, spec)
    _assert_exact_cover(ds, shards)
    np.testing.assert_array_equal(
        client_class_counts(ds, shards),
        _dirichlet_oracle(ds, clients=10, alpha=0.5, seed=42),
    )


def test_dirichlet_large_alpha_is_nearly_uniform() -> None:
    ds: Dataset = _labeled([100] * 5)
    close: int = 0
    for seed in range(100):
        spec = PartitionSpec(strategy=PartitionStrategy.DIRICHLET, client_count=5, alpha=10000.0, seed=seed)
        counts: np.ndarray = client_class_counts(ds, partition_dirichlet(ds, spec))
        close += bool(np.all(np.abs(counts - 20) <= 4))
    assert close >= 99


def test_partition_contracts_over_random_specs() -> None:
    rng: np.random.Generator = np.random.default_rng(2024)
    for _ in range(50):
        clients: int = int(rng.integers(1, 6))
        classes: int = int(rng.integers(2, 6))
        per_class: int = clients * 2 * int(rng.integers(1, 5))
        ds: Dataset = _labeled([per_class] * classes)
        seed: int = int(rng.integers(0, 10_000))
        specs: list[PartitionSpec] = [
            PartitionSpec(strategy=PartitionStrategy.LOCAL_BALANCED, client_count=clients, seed=seed),
            PartitionSpec(
                strategy=PartitionStrategy.DIRICHLET,
                client_count=clients,
                alpha=float(rng.uniform(0.05, 5.0)),
                seed=seed,
            ),
            PartitionSpec(
                strategy=PartitionStrategy.PATHOLOGICAL,
                client_count=classes,
                classes_per_client=1,
                seed=seed,
            ),
        ]
        for spec in specs:
            _assert_exact_cover(ds, partition(ds, spec))


def test_mapping_round_trip_is_checked() -> None:
    ds: Dataset = _labeled([6, 6])
    shards = partition(ds, PartitionSpec(client_count=3))
    restored = shards_from_mapping(shards_to_mapping(shards), ds.size)
    assert [s.client_id for s in restored] == [0, 1, 2]
    mapping = shards_to_mapping(shards)
    mapping["0"] = mapping["0"][1:]
    with pytest.raises(PartitionError):
        shards_from_mapping(mapping, ds.size)


def test_duplicate_indices_rejected() -> None:
    with pytest.raises(ValueError, match="duplicate"):
        ClientShard(client_id=0, sample_indices=[1, 1])

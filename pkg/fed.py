"""Federated averaging: client sampling, local SGD, aggregation, evaluation."""

import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Protocol

import numpy as np

import defaults
from config import settings
from errors import DatasetError, InvalidArgumentError, ShapeMismatchError
from models.arrays import Dataset, ModelParams
from models.config_models import FedConfig
from models.enums import Stage
from models.records import (
    ClassAccuracy,
    ClientShard,
    ConfusionStats,
    LocalStats,
    RoundMetrics,
)
from nn_core import (
    ForwardTrace,
    flops_per_sample,
    forward_trace,
    init_model,
    loss_and_gradient,
    mlp_dims,
    predict,
    sgd_step,
)

logger: logging.Logger = logging.getLogger(__name__)


class BatchResult(NamedTuple):
    """Loss, gradient and counters of one minibatch."""

    loss: float
    gradient: np.ndarray
    triggered: int = 0
    misclassified: int = 0
    kd_flops: float = 0.0


class BatchObjective(Protocol):
    """Loss of a minibatch; must not keep state between calls."""

    def __call__(
        self,
        model: ModelParams,
        features: np.ndarray,
        labels: np.ndarray,
    ) -> BatchResult: ...


def cross_entropy_objective(
    model: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
) -> BatchResult:
    """Plain mean cross-entropy."""
    trace: ForwardTrace = forward_trace(model=model, inputs=features)
    loss, gradient = loss_and_gradient(
        model=model,
        features=features,
        labels=labels,
        trace=trace,
    )
    misclassified: int = int(np.count_nonzero(np.argmax(trace.logits, axis=-1) != labels))
    return BatchResult(loss=loss, gradient=gradient, misclassified=misclassified)


def client_rng(seed: int, client_id: int, round_number: int) -> np.random.Generator:
    """Generator owned by one client in one round, independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence([seed, client_id, round_number]))


def sample_clients(
    round_number: int,
    client_ids: Sequence[int],
    fraction: float,
    seed: int,
) -> list[int]:
    """``ceil(fraction * K)`` distinct clients, uniform without replacement.

    Args:
        round_number (int): Global round; with ``seed`` it fixes the draw.
        client_ids (Sequence[int]): All clients.
        fraction (float): Share of clients per round, in ``(0, 1]``.
        seed (int): Run seed.

    Returns:
        list[int]: Selected ids, ascending.

    Raises:
        InvalidArgumentError: If ``fraction`` is outside ``(0, 1]``.

    """
    if not 0.0 < fraction <= 1.0:
        msg = f"client fraction must lie in (0, 1], got {fraction}"
        raise InvalidArgumentError(msg)
    population: list[int] = sorted(client_ids)
    wanted: int = max(1, math.ceil(fraction * len(population) - 1e-9))
    if wanted >= len(population):
        return population
    rng: np.random.Generator = np.random.default_rng(
        np.random.SeedSequence([seed, round_number]),
    )
    chosen: np.ndarray = rng.choice(len(population), size=wanted, replace=False)
    return sorted(population[int(i)] for i in chosen)


def local_train(
    global_model: ModelParams,
    train: Dataset,
    shard: ClientShard,
    config: FedConfig,
    rng: np.random.Generator,
    objective: BatchObjective = cross_entropy_objective,
    local_epochs: int | None = None,
) -> tuple[ModelParams, LocalStats]:
    """Run ``E`` epochs of minibatch SGD on one client's shard.

    Each epoch visits the shard in a fresh permutation drawn from ``rng``; the
    last batch may be partial. ``E * ceil(n / B)`` steps are taken.

    Args:
        global_model (ModelParams): Broadcast model; never modified.
        train (Dataset): Global training set the shard indexes into.
        shard (ClientShard): The client's samples.
        config (FedConfig): Batch size and learning rate (and epochs).
        rng (np.random.Generator): The client's generator for this round.
        objective (BatchObjective): Minibatch loss.
        local_epochs (int | None): Overrides ``config.local_epochs``.

    Returns:
        tuple[ModelParams, LocalStats]: Updated model and counters.

    Raises:
        DatasetError: If the shard is empty.

    """
    if shard.size == 0:
        msg = f"client {shard.client_id} has no samples"
        raise DatasetError(msg)
    epochs: int = local_epochs or config.local_epochs
    forward_flops, backward_flops = flops_per_sample(layer_dims=global_model.layer_dims)
    model: ModelParams = global_model
    losses: list[float] = []
    triggers: list[int] = []
    misclassified: list[int] = []
    flops: float = 0.0
    kd_flops: float = 0.0
    for _ in range(epochs):
        order: np.ndarray = rng.permutation(shard.sample_indices)
        for start in range(0, order.size, config.batch_size):
            batch: np.ndarray = order[start : start + config.batch_size]
            result: BatchResult = objective(
                model,
                train.features[batch],
                train.labels[batch],
            )
            model = sgd_step(model=model, gradient=result.gradient, lr=config.learning_rate)
            losses.append(result.loss)
            triggers.append(result.triggered)
            misclassified.append(result.misclassified)
            flops += batch.size * (forward_flops + backward_flops) + result.kd_flops
            kd_flops += result.kd_flops
    logger.debug(
        "Client %d: %d steps, mean loss %.4f, %d triggers",
        shard.client_id,
        len(losses),
        math.fsum(losses) / len(losses),
        sum(triggers),
    )
    return model, LocalStats(
        client_id=shard.client_id,
        n_samples=shard.size,
        steps=len(losses),
        trigger_counts=tuple(triggers),
        misclassified_counts=tuple(misclassified),
        flops=flops,
        kd_flops=kd_flops,
        mean_loss=math.fsum(losses) / len(losses),
    )


def aggregate(models: Sequence[ModelParams], sample_counts: Sequence[int]) -> ModelParams:
    """Sample-weighted mean ``sum_k (n_k / n) w_k``, summed in the given order.

    Callers pass clients in ascending id order. Zero-count clients carry no
    weight, so a single contributing client is returned bitwise.

    Raises:
        InvalidArgumentError: On a length mismatch, a negative count or a zero total.
        ShapeMismatchError: If the architectures differ.

    """
    if len(models) != len(sample_counts) or not models:
        msg = f"{len(models)} models for {len(sample_counts)} sample counts"
        raise InvalidArgumentError(msg)
    if any(count < 0 for count in sample_counts):
        msg = "sample counts must be non-negative"
        raise InvalidArgumentError(msg)
    total: int = sum(sample_counts)
    if total == 0:
        msg = "aggregation needs at least one sample"
        raise InvalidArgumentError(msg)
    reference: ModelParams = models[0]
    for model in models[1:]:
        if model.layer_dims != reference.layer_dims:
            msg = f"cannot average {model.layer_dims} with {reference.layer_dims}"
            raise ShapeMismatchError(msg)
    averaged: np.ndarray | None = None
    for model, count in zip(models, sample_counts, strict=True):
        if count == 0:
            continue
        term: np.ndarray = (count / total) * model.weights
        averaged = term if averaged is None else averaged + term
    return reference.with_weights(weights=averaged)


def evaluate(model: ModelParams, test: Dataset) -> ClassAccuracy:
    """Per-class test accuracy and its max/ave/min/icd summary.

    Raises:
        DatasetError: If a class has no test samples.

    """
    counts: np.ndarray = test.class_counts
    missing: list[int] = np.flatnonzero(counts == 0).tolist()
    if missing:
        msg = f"classes {missing} are absent from {test.name}"
        raise DatasetError(msg)
    predictions: np.ndarray = predict(model=model, inputs=test.features)
    correct: np.ndarray = np.bincount(
        test.labels[predictions == test.labels],
        minlength=test.class_count,
    )
    return ClassAccuracy.from_values(class_accuracy=correct / counts)


def confusion_counts(
    model: ModelParams,
    ds: Dataset,
    indices: np.ndarray | None = None,
) -> ConfusionStats:
    """``counts[i][j]`` over ``ds`` (or the rows in ``indices``)."""
    classes: int = ds.class_count
    rows: np.ndarray = np.arange(ds.size) if indices is None else indices
    labels: np.ndarray = ds.labels[rows]
    if rows.size == 0:
        return ConfusionStats(counts=np.zeros((classes, classes), dtype=np.int64))
    predictions: np.ndarray = predict(model=model, inputs=ds.features[rows])
    flat: np.ndarray = np.bincount(labels * classes + predictions, minlength=classes * classes)
    return ConfusionStats(counts=flat.reshape(classes, classes))


def _train_round(
    model: ModelParams,
    train: Dataset,
    shards: Sequence[ClientShard],
    config: FedConfig,
    objective: BatchObjective,
    round_number: int,
    local_epochs: int | None,
    workers: int,
) -> tuple[ModelParams, list[LocalStats]]:
    def run_client(shard: ClientShard) -> tuple[ModelParams, LocalStats]:
        return local_train(
            global_model=model,
            train=train,
            shard=shard,
            config=config,
            rng=client_rng(config.seed, shard.client_id, round_number),
            objective=objective,
            local_epochs=local_epochs,
        )

    by_id: dict[int, ClientShard] = {shard.client_id: shard for shard in shards}
    selected: list[int] = sample_clients(
        round_number=round_number,
        client_ids=list(by_id),
        fraction=config.client_fraction,
        seed=config.seed,
    )
    active: list[ClientShard] = [by_id[i] for i in selected if by_id[i].size > 0]
    if len(active) < len(selected):
        logger.debug("Round %d: skipping %d empty clients", round_number, len(selected) - len(active))
    if not active:
        logger.warning("Round %d: no selected client holds data, model unchanged", round_number)
        return model, []
    results: list[tuple[ModelParams, LocalStats]]
    if workers > 1 and len(active) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_client, active))
    else:
        results = [run_client(shard) for shard in active]
    updated: ModelParams = aggregate(
        models=[local for local, _ in results],
        sample_counts=[stats.n_samples for _, stats in results],
    )
    return updated, [stats for _, stats in results]


def run_fedavg(
    train: Dataset,
    shards: Sequence[ClientShard],
    test: Dataset,
    config: FedConfig,
    hidden_layers: Sequence[int] = defaults.hidden_layers,
    objective: BatchObjective = cross_entropy_objective,
    model: ModelParams | None = None,
    rounds: int | None = None,
    round_offset: int = 0,
    stage: Stage = Stage.FEDAVG,
    local_epochs: int | None = None,
    workers: int | None = None,
    on_round: Callable[[RoundMetrics, list[LocalStats]], None] | None = None,
) -> tuple[ModelParams, list[RoundMetrics]]:
    """Rounds of sample, broadcast, local train, aggregate and evaluate.

    Args:
        train (Dataset): Global training set.
        shards (Sequence[ClientShard]): Client partition of ``train``.
        test (Dataset): Evaluation set, every class present.
        config (FedConfig): Hyperparameters and seed.
        hidden_layers (Sequence[int]): Hidden widths of a fresh model.
        objective (BatchObjective): Minibatch loss used by every client.
        model (ModelParams | None): Starting model; fresh from ``config.seed`` if None.
        rounds (int | None): Overrides ``config.rounds``; 0 returns the start model.
        round_offset (int): Rounds already run, so numbering and client streams
            continue across stages.
        stage (Stage): Tag written into every metric row.
        local_epochs (int | None): Overrides ``config.local_epochs``.
        workers (int | None): Client threads; defaults to ``settings.workers``.
        on_round (Callable | None): Called with each round's metrics and client stats.

    Returns:
        tuple[ModelParams, list[RoundMetrics]]: Final model and one metric row per round.

    """
    current: ModelParams | None = model
    if current is None:
        current = init_model(
            layer_dims=mlp_dims(
                input_dim=train.dim,
                hidden_layers=hidden_layers,
                output_dim=train.class_count,
            ),
            seed=config.seed,
        )
    total_rounds: int = config.rounds if rounds is None else rounds
    threads: int = workers or settings.workers
    trace: list[RoundMetrics] = []
    for step in range(total_rounds):
        round_number: int = round_offset + step + 1
        current, stats = _train_round(
            model=current,
            train=train,
            shards=shards,
            config=config,
            objective=objective,
            round_number=round_number,
            local_epochs=local_epochs,
            workers=threads,
        )
        accuracy: ClassAccuracy = evaluate(model=current, test=test)
        metrics: RoundMetrics = RoundMetrics(
            **accuracy.model_dump(),
            round=round_number,
            stage=stage,
            flops_round=math.fsum(s.flops for s in stats),
            kd_flops=math.fsum(s.kd_flops for s in stats),
            n_kd=sum(s.n_kd for s in stats),
        )
        trace.append(metrics)
        logger.info(
            "Round %d [%s]: ave %.4f min %.4f icd %.4f worst %d n_kd %d",
            round_number,
            stage,
            metrics.ave_accuracy,
            metrics.min_accuracy,
            metrics.icd,
            metrics.worst_class,
            metrics.n_kd,
        )
        if on_round is not None:
            on_round(metrics, stats)
    return current, trace


def run_centralized(
    train: Dataset,
    test: Dataset,
    config: FedConfig,
    hidden_layers: Sequence[int] = defaults.hidden_layers,
    rounds: int | None = None,
) -> tuple[ModelParams, list[RoundMetrics]]:
    """The same loop with one client holding every training sample."""
    everything: ClientShard = ClientShard(client_id=0, sample_indices=np.arange(train.size))
    return run_fedavg(
        train=train,
        shards=[everything],
        test=test,
        config=config.model_copy(update={"client_fraction": 1.0}),
        hidden_layers=hidden_layers,
        rounds=rounds,
        stage=Stage.CENTRALIZED,
        workers=1,
    )

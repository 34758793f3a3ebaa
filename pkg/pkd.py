"""Partial knowledge distillation: experts, routing, gated loss, cost ledger, pipeline."""

import logging
import math
from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat

from data import group_indices, remap_labels
from defaults import default_model_config
from errors import InvalidArgumentError
from fed import BatchObjective, BatchResult, cross_entropy_objective, run_fedavg
from models.arrays import Dataset, LayerDims, ModelParams
from models.config_models import PkdConfig, RunConfig
from models.constraints import Temperature
from models.enums import KlDirection, Stage, TieBreak
from models.records import (
    ClientShard,
    Expert,
    FlopLedger,
    GroupReport,
    MisclassProbMatrix,
    RoundMetrics,
    TriggerRecord,
    WeakGroupSet,
)
from nn_core import (
    DistillTerm,
    ForwardTrace,
    LossSpec,
    flops_per_sample,
    forward,
    forward_trace,
    kl_div,
    loss_and_gradient,
    mlp_dims,
    softmax_t,
)
from weakdetect import (
    collect_confusion,
    default_threshold,
    detect_groups,
    feature_distance_matrix,
    group_distance_summary,
    misclassification_matrix,
    select_worst_groups,
)

logger: logging.Logger = logging.getLogger(__name__)

NO_EXPERT: int = -1


# experts


def group_shards(
    train: Dataset,
    shards: Sequence[ClientShard],
    group: Sequence[int],
) -> list[ClientShard]:
    """Client shards re-indexed into ``remap_labels(train, group)``.

    Clients without samples of the group keep an empty shard.
    """
    kept: np.ndarray = group_indices(ds=train, group=group)
    position: np.ndarray = np.full(train.size, NO_EXPERT, dtype=np.int64)
    position[kept] = np.arange(kept.size)
    result: list[ClientShard] = []
    for shard in shards:
        mapped: np.ndarray = position[shard.sample_indices]
        result.append(
            ClientShard(client_id=shard.client_id, sample_indices=mapped[mapped >= 0]),
        )
    return result


def train_expert(
    group: Sequence[int],
    train: Dataset,
    shards: Sequence[ClientShard],
    test: Dataset,
    config: RunConfig,
    workers: int | None = None,
) -> tuple[Expert, list[RoundMetrics]]:
    """Federated training of one expert on the samples of ``group``.

    The expert uses the global hidden layers, a ``|group|``-wide output layer,
    the run seed and ``pkd.expert_rounds`` rounds of ``expert_epochs`` epochs.

    Raises:
        DatasetError: If no training sample belongs to ``group``.

    """
    group_train: Dataset = remap_labels(ds=train, group=group)
    group_test: Dataset = remap_labels(ds=test, group=group)
    model, trace = run_fedavg(
        train=group_train,
        shards=group_shards(train=train, shards=shards, group=group),
        test=group_test,
        config=config.fed,
        hidden_layers=config.network.hidden_layers,
        rounds=config.pkd.expert_rounds,
        stage=Stage.EXPERT,
        local_epochs=config.expert_epochs,
        workers=workers,
    )
    logger.info(
        "Expert %s: within-group accuracy %.4f after %d rounds",
        list(group),
        trace[-1].ave_accuracy if trace else float("nan"),
        len(trace),
    )
    return Expert(group=tuple(group), model=model), trace


def train_experts(
    groups: WeakGroupSet,
    train: Dataset,
    shards: Sequence[ClientShard],
    test: Dataset,
    config: RunConfig,
    workers: int | None = None,
) -> list[Expert]:
    """One federated expert per group, in group order.

    Raises:
        InvalidArgumentError: If ``groups`` is empty.
        DatasetError: If a group has no training samples.

    """
    if not len(groups):
        msg = "expert training needs at least one group"
        raise InvalidArgumentError(msg)
    experts: list[Expert] = []
    for group in groups.groups:
        expert, _ = train_expert(
            group=group,
            train=train,
            shards=shards,
            test=test,
            config=config,
            workers=workers,
        )
        experts.append(expert)
    return experts


# routing


def route_indices(
    predictions: np.ndarray,
    labels: np.ndarray,
    groups: WeakGroupSet,
    class_count: int,
    tie_break: TieBreak = TieBreak.LOWEST_INDEX,
) -> np.ndarray:
    """Expert index per sample, ``-1`` where no expert applies.

    A misclassified sample goes to a group holding both its true and its
    predicted class. Among several, ``lowest_index`` picks the first group and
    ``smallest_group`` the smallest one (first on ties).

    Raises:
        InvalidArgumentError: If the arrays differ in length.

    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        msg = f"{predictions.size} predictions for {labels.size} labels"
        raise InvalidArgumentError(msg)
    experts: np.ndarray = np.full(labels.shape, NO_EXPERT, dtype=np.int64)
    if not len(groups) or labels.size == 0:
        return experts
    membership: np.ndarray = groups.membership(class_count=class_count)
    preference: np.ndarray = np.arange(len(groups))
    if tie_break is TieBreak.SMALLEST_GROUP:
        preference = np.array(
            sorted(range(len(groups)), key=lambda g: (len(groups.groups[g]), g)),
        )
    ranked: np.ndarray = membership[preference]
    candidates: np.ndarray = ranked[:, labels] & ranked[:, predictions] & (predictions != labels)
    hit: np.ndarray = candidates.any(axis=0)
    experts[hit] = preference[np.argmax(candidates[:, hit], axis=0)]
    return experts


def route(
    predictions: np.ndarray,
    labels: np.ndarray,
    groups: WeakGroupSet,
    class_count: int | None = None,
    tie_break: TieBreak = TieBreak.LOWEST_INDEX,
    sample_indices: np.ndarray | None = None,
) -> list[TriggerRecord]:
    """One :class:`TriggerRecord` per sample."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    width: int = class_count or 1 + max(
        int(labels.max(initial=0)),
        int(predictions.max(initial=0)),
        *(max(group) for group in groups.groups),
    )
    assigned: np.ndarray = route_indices(
        predictions=predictions,
        labels=labels,
        groups=groups,
        class_count=width,
        tie_break=tie_break,
    )
    indices: np.ndarray = np.arange(labels.size) if sample_indices is None else sample_indices
    return [
        TriggerRecord(
            sample_index=int(index),
            true_class=int(true),
            predicted_class=int(predicted),
            expert=None if expert == NO_EXPERT else int(expert),
        )
        for index, true, predicted, expert in zip(indices, labels, predictions, assigned, strict=True)
    ]


# loss


def pkd_loss(
    student_logits: np.ndarray,
    expert: Expert,
    sample: np.ndarray,
    temperature: float,
    kl_direction: KlDirection = KlDirection.STUDENT_FIRST,
) -> float:
    """Divergence between the student's group-restricted softmax and the expert's.

    Only the student logits of ``expert.group`` are read.
    """
    expert_logits, _ = forward(model=expert.model, inputs=sample)
    teacher: np.ndarray = softmax_t(logits=expert_logits, temperature=temperature)
    student: np.ndarray = softmax_t(
        logits=np.asarray(student_logits)[list(expert.group)],
        temperature=temperature,
    )
    if kl_direction is KlDirection.STUDENT_FIRST:
        return kl_div(p=student, q=teacher)
    return kl_div(p=teacher, q=student)


class PartialDistillation(BaseModel):
    """Minibatch objective: cross-entropy plus expert-gated distillation.

    Triggers are read from the student's predictions in the same forward pass
    that feeds the loss. Experts are only evaluated on the rows routed to them.
    """

    model_config: ConfigDict = default_model_config

    experts: tuple[Expert, ...] = ()
    lam: NonNegativeFloat = Field(default=1.0, alias="lambda")
    temperature: Temperature = 5.0
    kl_direction: KlDirection = KlDirection.STUDENT_FIRST
    tie_break: TieBreak = TieBreak.LOWEST_INDEX

    @property
    def groups(self) -> WeakGroupSet:
        """Groups in expert order."""
        return WeakGroupSet(groups=tuple(expert.group for expert in self.experts))

    def __call__(
        self,
        model: ModelParams,
        features: np.ndarray,
        labels: np.ndarray,
    ) -> BatchResult:
        """Loss, gradient, trigger count and expert FLOPs for one batch."""
        trace: ForwardTrace = forward_trace(model=model, inputs=features)
        predictions: np.ndarray = np.argmax(trace.logits, axis=-1)
        assigned: np.ndarray = route_indices(
            predictions=predictions,
            labels=labels,
            groups=self.groups,
            class_count=model.output_dim,
            tie_break=self.tie_break,
        )
        terms: list[DistillTerm] = []
        kd_flops: float = 0.0
        for position, expert in enumerate(self.experts):
            rows: np.ndarray = np.flatnonzero(assigned == position)
            if rows.size == 0:
                continue
            expert_logits, _ = forward(model=expert.model, inputs=features[rows])
            terms.append(
                DistillTerm(
                    rows=rows,
                    classes=expert.group,
                    teacher_probs=softmax_t(logits=expert_logits, temperature=self.temperature),
                ),
            )
            kd_flops += rows.size * flops_per_sample(layer_dims=expert.model.layer_dims)[0]
        loss, gradient = loss_and_gradient(
            model=model,
            features=features,
            labels=labels,
            loss_spec=LossSpec(
                lam=self.lam,
                temperature=self.temperature,
                kl_direction=self.kl_direction,
                terms=tuple(terms),
            ),
            trace=trace,
        )
        return BatchResult(
            loss=loss,
            gradient=gradient,
            triggered=int(np.count_nonzero(assigned != NO_EXPERT)),
            misclassified=int(np.count_nonzero(predictions != labels)),
            kd_flops=kd_flops,
        )


def combined_loss(
    features: np.ndarray,
    labels: np.ndarray,
    student: ModelParams,
    experts: Sequence[Expert],
    lam: float,
    temperature: float,
    kl_direction: KlDirection = KlDirection.STUDENT_FIRST,
    tie_break: TieBreak = TieBreak.LOWEST_INDEX,
) -> tuple[float, np.ndarray]:
    """``mean CE + lam * mean_{triggered} KL`` and its gradient for the student."""
    objective: PartialDistillation = PartialDistillation(
        experts=tuple(experts),
        lam=lam,
        temperature=temperature,
        kl_direction=kl_direction,
        tie_break=tie_break,
    )
    result: BatchResult = objective(student, features, labels)
    return result.loss, result.gradient


# cost accounting


def account_flops(
    config: RunConfig,
    layer_dims: LayerDims,
    total_samples: int,
    group_samples: Sequence[int],
    n_kd_per_round: Sequence[int] = (),
    kd_flops_per_round: Sequence[float] | None = None,
    rounds: Sequence[int] | None = None,
) -> FlopLedger:
    """Per-stage round costs in FLOPs.

    ``U = E * N * (fp + bp)``; warmup costs ``U``; one expert round costs
    ``E_exp * sum(n_g) * (fp + bp)``; a distillation round costs ``U`` plus
    the expert forward passes, counted exactly when ``kd_flops_per_round`` is
    given (else ``n_kd * fp``), and approximately as ``U * (1 + n_kd / (3EN))``.
    """
    forward_flops, backward_flops = flops_per_sample(layer_dims=layer_dims)
    per_sample: float = forward_flops + backward_flops
    epochs: int = config.fed.local_epochs
    baseline: float = epochs * total_samples * per_sample
    extra: list[float] = (
        [float(f) for f in kd_flops_per_round]
        if kd_flops_per_round is not None
        else [n * forward_flops for n in n_kd_per_round]
    )
    return FlopLedger(
        u_fp=forward_flops,
        u_bp=backward_flops,
        u_round=baseline,
        u_t1=baseline,
        u_t2=config.expert_epochs * sum(group_samples) * per_sample,
        u_t3_exact=tuple(baseline + e for e in extra),
        u_t3_approx=tuple(baseline * (1.0 + n / (3.0 * epochs * total_samples)) for n in n_kd_per_round),
        n_kd_per_round=tuple(n_kd_per_round),
        rounds=tuple(rounds) if rounds is not None else tuple(range(1, len(n_kd_per_round) + 1)),
        local_epochs=epochs,
        expert_epochs=config.expert_epochs,
        total_samples=total_samples,
        group_samples=tuple(group_samples),
    )


def cumulative_cost(
    trace: Sequence[RoundMetrics],
    ledger: FlopLedger,
    expert_rounds: int,
) -> list[tuple[float, float]]:
    """``(round cost, cumulative cost)`` per trace row, in units of ``U``.

    Non-distillation rounds cost 1. The whole expert stage is charged to the
    first distillation round.
    """
    per_round: dict[int, float] = dict(zip(ledger.rounds, ledger.u_t3_exact, strict=True))
    expert_stage: float = expert_rounds * ledger.u_t2 / ledger.u_round
    rows: list[tuple[float, float]] = []
    running: float = 0.0
    charged: bool = False
    for metrics in trace:
        cost: float = 1.0
        if metrics.stage is Stage.PKD:
            cost = per_round.get(metrics.round, ledger.u_round) / ledger.u_round
            if not charged:
                cost += expert_stage
                charged = True
        running += cost
        rows.append((cost, running))
    return rows


def cost_to_target(
    min_accuracy: Sequence[float],
    cumulative: Sequence[float],
    targets: Sequence[float],
) -> dict[float, float | None]:
    """Cumulative cost at the first round whose min class accuracy reaches each target.

    Targets never reached map to None.
    """
    reached: dict[float, float | None] = {}
    for target in targets:
        reached[target] = next(
            (
                cost
                for accuracy, cost in zip(min_accuracy, cumulative, strict=True)
                if accuracy >= target
            ),
            None,
        )
    return reached


# pipeline


class PipelineResult(BaseModel):
    """Everything a distillation run produces."""

    model_config: ConfigDict = default_model_config

    model: ModelParams
    trace: tuple[RoundMetrics, ...]
    report: GroupReport
    experts: tuple[Expert, ...] = ()
    expert_traces: tuple[tuple[RoundMetrics, ...], ...] = ()
    ledger: FlopLedger
    notes: tuple[str, ...] = ()


def group_accuracy(model: ModelParams, test: Dataset, group: Sequence[int]) -> float:
    """Mean per-class accuracy on ``group`` with the argmax restricted to ``group``."""
    classes: list[int] = list(group)
    rows: np.ndarray = group_indices(ds=test, group=classes)
    logits, _ = forward(model=model, inputs=test.features[rows])
    chosen: np.ndarray = np.asarray(classes)[np.argmax(logits[:, classes], axis=-1)]
    labels: np.ndarray = test.labels[rows]
    return math.fsum(float(np.mean(chosen[labels == c] == c)) for c in classes) / len(classes)


def run_pipeline(
    train: Dataset,
    shards: Sequence[ClientShard],
    test: Dataset,
    config: RunConfig,
    workers: int | None = None,
) -> PipelineResult:
    """Warmup, group detection, expert training, then distillation rounds.

    The distillation stage continues the warmup model; experts are never
    aggregated into it. Without any detected group the remaining rounds run
    as plain FedAvg and a note is recorded.
    """
    pkd_config: PkdConfig = config.pkd
    hidden: tuple[int, ...] = config.network.hidden_layers
    logger.info("Stage 1: %d warmup rounds", pkd_config.warmup_rounds)
    warmup_model, warmup = run_fedavg(
        train=train,
        shards=shards,
        test=test,
        config=config.fed,
        hidden_layers=hidden,
        rounds=pkd_config.warmup_rounds,
        stage=Stage.WARMUP,
        workers=workers,
    )

    probabilities: MisclassProbMatrix = misclassification_matrix(
        stats=collect_confusion(model=warmup_model, train=train, shards=shards),
    )
    theta: float = pkd_config.theta or default_threshold(m=probabilities)
    detected: WeakGroupSet = detect_groups(m=probabilities, threshold=theta)
    groups: WeakGroupSet = select_worst_groups(
        groups=detected,
        class_accuracy=np.diag(probabilities.m).tolist(),
        max_groups=pkd_config.max_groups,
    )
    within, cross = group_distance_summary(
        distances=feature_distance_matrix(model=warmup_model, ds=train),
        groups=groups,
    )
    notes: list[str] = []

    experts: list[Expert] = []
    expert_traces: list[tuple[RoundMetrics, ...]] = []
    objective: BatchObjective
    stage: Stage = Stage.PKD
    if len(groups):
        logger.info("Stage 2: experts for %s", list(groups.groups))
        for group in groups.groups:
            expert, expert_trace = train_expert(
                group=group,
                train=train,
                shards=shards,
                test=test,
                config=config,
                workers=workers,
            )
            experts.append(expert)
            expert_traces.append(tuple(expert_trace))
        objective = PartialDistillation(
            experts=tuple(experts),
            lam=pkd_config.pkd_lambda,
            temperature=pkd_config.temperature,
            kl_direction=pkd_config.kl_direction,
            tie_break=pkd_config.tie_break,
        )
    else:
        note: str = f"no weak groups at threshold {theta:.6g}; continuing as plain FedAvg"
        logger.warning(note)
        notes.append(note)
        objective = cross_entropy_objective
        stage = Stage.FEDAVG

    logger.info("Stage 3: %d distillation rounds", config.pkd_stage_rounds)
    model, distilled = run_fedavg(
        train=train,
        shards=shards,
        test=test,
        config=config.fed,
        hidden_layers=hidden,
        objective=objective,
        model=warmup_model,
        rounds=config.pkd_stage_rounds,
        round_offset=pkd_config.warmup_rounds,
        stage=stage,
        workers=workers,
    )

    group_samples: list[int] = [int(train.class_counts[list(g)].sum()) for g in groups.groups]
    ledger: FlopLedger = account_flops(
        config=config,
        layer_dims=mlp_dims(input_dim=train.dim, hidden_layers=hidden, output_dim=train.class_count),
        total_samples=train.size,
        group_samples=group_samples,
        n_kd_per_round=[m.n_kd for m in distilled],
        kd_flops_per_round=[m.kd_flops for m in distilled],
        rounds=[m.round for m in distilled],
    )
    report: GroupReport = GroupReport(
        groups=groups.groups,
        theta=theta,
        round=pkd_config.warmup_rounds,
        detected=detected.groups,
        within_group_distance=within,
        cross_group_distance=cross,
        expert_accuracy=tuple(t[-1].ave_accuracy for t in expert_traces if t),
        warmup_group_accuracy=tuple(
            group_accuracy(model=warmup_model, test=test, group=g) for g in groups.groups
        ),
        group_samples=tuple(group_samples),
    )
    return PipelineResult(
        model=model,
        trace=(*warmup, *distilled),
        report=report,
        experts=tuple(experts),
        expert_traces=tuple(expert_traces),
        ledger=ledger,
        notes=tuple(notes),
    )

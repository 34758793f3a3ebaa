"""Desk-scale benchmark on the planted-group synthetic data (``pytest -m slow``)."""

import math

import numpy as np
import pytest

import benchmark_defaults
from data import load_dataset
from fed import run_fedavg
from models.config_models import RunConfig
from models.records import RoundMetrics
from partition import partition
from pkd import PipelineResult, group_accuracy, run_pipeline

pytestmark = pytest.mark.slow

BenchmarkRuns = dict[int, tuple[list[RoundMetrics], PipelineResult]]


@pytest.fixture(scope="module")
def benchmark_runs() -> BenchmarkRuns:
    """FedAvg and distillation traces for every benchmark seed."""
    base: RunConfig = RunConfig.model_validate(benchmark_defaults.benchmark_run_config)
    runs: BenchmarkRuns = {}
    for seed in benchmark_defaults.benchmark_seeds:
        config: RunConfig = base.for_seed(seed)
        train, test = load_dataset(source=config.dataset)
        shards = partition(ds=train, spec=config.partition)
        _, fedavg = run_fedavg(
            train=train,
            shards=shards,
            test=test,
            config=config.fed,
            hidden_layers=config.network.hidden_layers,
        )
        runs[seed] = (fedavg, run_pipeline(train=train, shards=shards, test=test, config=config))
    return runs


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values)


def test_fedavg_shows_class_imbalance(benchmark_runs: BenchmarkRuns) -> None:
    hits: int = 0
    for fedavg, _ in benchmark_runs.values():
        final: RoundMetrics = fedavg[-1]
        hits += (
            final.icd >= benchmark_defaults.icd_floor
            and final.worst_class in benchmark_defaults.planted_classes
        )
    assert hits >= len(benchmark_runs) - 1


def test_detection_finds_planted_groups(benchmark_runs: BenchmarkRuns) -> None:
    planted: set[tuple[int, ...]] = set(benchmark_defaults.planted_groups)
    for _, result in benchmark_runs.values():
        assert set(result.report.groups) <= set(result.report.detected)
        assert set(result.report.groups) & planted
        if result.report.within_group_distance is not None:
            assert result.report.within_group_distance < result.report.cross_group_distance


def test_experts_beat_warmup_model_inside_their_group(benchmark_runs: BenchmarkRuns) -> None:
    for _, result in benchmark_runs.values():
        for expert, warmup in zip(
            result.report.expert_accuracy,
            result.report.warmup_group_accuracy,
            strict=True,
        ):
            assert expert > warmup


def test_distillation_lifts_minimum_accuracy(benchmark_runs: BenchmarkRuns) -> None:
    fedavg_min: float = _mean([fedavg[-1].min_accuracy for fedavg, _ in benchmark_runs.values()])
    pkd_min: float = _mean([result.trace[-1].min_accuracy for _, result in benchmark_runs.values()])
    fedavg_ave: float = _mean([fedavg[-1].ave_accuracy for fedavg, _ in benchmark_runs.values()])
    pkd_ave: float = _mean([result.trace[-1].ave_accuracy for _, result in benchmark_runs.values()])
    assert pkd_min - fedavg_min >= benchmark_defaults.min_accuracy_gain
    assert abs(pkd_ave - fedavg_ave) <= benchmark_defaults.ave_accuracy_band


def test_expert_triggers_decay(benchmark_runs: BenchmarkRuns) -> None:
    decayed: int = 0
    for _, result in benchmark_runs.values():
        n_kd: np.ndarray = np.array([m.n_kd for m in result.trace if m.round > result.report.round])
        decayed += bool(n_kd[-10:].mean() < n_kd[:10].mean())
    assert decayed >= len(benchmark_runs) - 1


def test_group_accuracy_restricts_argmax(benchmark_runs: BenchmarkRuns) -> None:
    config: RunConfig = RunConfig.model_validate(benchmark_defaults.benchmark_run_config)
    _, test = load_dataset(source=config.dataset)
    _, result = benchmark_runs[benchmark_defaults.benchmark_seeds[0]]
    for group in result.report.groups:
        assert 0.0 <= group_accuracy(model=result.model, test=test, group=group) <= 1.0

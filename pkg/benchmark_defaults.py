"""Mandatory benchmark defaults."""

from typing import Any

# planted weak-class groups of the synthetic benchmark
planted_groups: list[tuple[int, ...]] = [(0, 6), (2, 4, 6)]
planted_classes: frozenset[int] = frozenset(
    label for group in planted_groups for label in group
)

# geometry, in units of within-class stddev; every planted pair is group_spacing apart
separated_distance: float = 6.0
group_spacing: float = 2.0
benchmark_dim: int = 16
benchmark_class_count: int = 10
benchmark_train_per_class: int = 300
benchmark_test_per_class: int = 100

benchmark_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

# desk-scale thresholds, percentage points as fractions
icd_floor: float = 0.15
min_accuracy_gain: float = 0.05
ave_accuracy_band: float = 0.01

benchmark_run_config: dict[str, Any] = {
    "dataset": {
        "kind": "synthetic",
        "class_count": benchmark_class_count,
        "dim": benchmark_dim,
        "samples_per_class": benchmark_train_per_class,
        "test_samples_per_class": benchmark_test_per_class,
        "within_class_stddev": 1.0,
        "seed": 0,
    },
    "partition": {
        "strategy": "local-balanced",
        "client_count": 10,
        "seed": 0,
    },
    "network": {"hidden_layers": [32, 32]},
    "fed": {
        "rounds": 60,
        "client_fraction": 1.0,
        "local_epochs": 5,
        "batch_size": 50,
        "learning_rate": 0.01,
        "seed": 0,
    },
    "pkd": {
        "warmup_rounds": 20,
        "expert_rounds": 25,
        "max_groups": 2,
        "lambda": 1.0,
        "temperature": 5.0,
        "kl_direction": "student_first",
        "tie_break": "lowest_index",
    },
    "output_dir": "runs",
    "seeds": list(benchmark_seeds),
}


if __name__ == "__main__":
    ...

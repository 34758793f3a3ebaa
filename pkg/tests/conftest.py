"""Shared fixtures."""

from collections.abc import Callable
from typing import Any

import numpy as np
import pytest

import testing_default_values
from models.arrays import Dataset, LayerDims, ModelParams, split_layers
from models.config_models import RunConfig
from nn_core import init_model


@pytest.fixture
def identity_model() -> Callable[[int], ModelParams]:
    """Single-layer network whose logits equal its input."""

    def build(width: int) -> ModelParams:
        return ModelParams(
            layer_dims=((width, width),),
            weights=np.concatenate([np.eye(width).ravel(), np.zeros(width)]),
        )

    return build


@pytest.fixture
def one_hot() -> Callable[[list[int], int], np.ndarray]:
    """Rows that an identity network classifies as the given classes."""

    def build(classes: list[int], width: int) -> np.ndarray:
        return np.eye(width)[np.asarray(classes, dtype=np.int64)]

    return build


@pytest.fixture
def blobs() -> Dataset:
    """Four well separated Gaussian classes, 20 samples each, in 3 dimensions."""
    rng: np.random.Generator = np.random.default_rng(7)
    means: np.ndarray = np.array(
        [[4.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 4.0], [-4.0, -4.0, -4.0]],
    )
    labels: np.ndarray = np.repeat(np.arange(4), 20)
    return Dataset(
        features=means[labels] + 0.5 * rng.standard_normal((labels.size, 3)),
        labels=labels,
        class_count=4,
        name="blobs",
    )


@pytest.fixture
def smooth_model() -> Callable[[LayerDims, np.ndarray, np.random.Generator], ModelParams]:
    """Initialised network with nonzero biases, away from ReLU kinks and logit ties.

    Biases are redrawn until every hidden pre-activation and the gap between
    the two largest logits of every row of ``features`` exceed
    ``gradcheck_margin``, so central differences never straddle a kink and the
    predicted classes survive each perturbation.
    """

    def margins(model: ModelParams, features: np.ndarray) -> tuple[float, float]:
        activation: np.ndarray = features
        layers: list[tuple[np.ndarray, np.ndarray]] = model.layers()
        hidden: float = np.inf
        for weight, bias in layers[:-1]:
            activation = activation @ weight + bias
            hidden = min(hidden, float(np.abs(activation).min()))
            activation = np.maximum(activation, 0.0)
        weight, bias = layers[-1]
        top_two: np.ndarray = np.sort(activation @ weight + bias, axis=-1)[:, -2:]
        return hidden, float((top_two[:, 1] - top_two[:, 0]).min())

    def build(layer_dims: LayerDims, features: np.ndarray, rng: np.random.Generator) -> ModelParams:
        base: ModelParams = init_model(layer_dims, seed=int(rng.integers(2**32)))
        for _ in range(testing_default_values.gradcheck_attempts):
            weights: np.ndarray = base.weights.copy()
            for _, bias in split_layers(weights, layer_dims):
                bias[:] = rng.normal(scale=0.5, size=bias.size)
            model: ModelParams = base.with_weights(weights)
            if min(margins(model, features)) > testing_default_values.gradcheck_margin:
                return model
        pytest.fail("no smooth parameter draw found")

    return build


@pytest.fixture
def tiny_config_document() -> dict[str, Any]:
    """A run document small enough to train in well under a second."""
    return {
        "dataset": {
            "kind": "synthetic",
            "class_count": 10,
            "dim": 16,
            "samples_per_class": 20,
            "test_samples_per_class": 10,
            "seed": 0,
        },
        "partition": {"strategy": "local-balanced", "client_count": 2},
        "network": {"hidden_layers": [8]},
        "fed": {
            "rounds": 4,
            "local_epochs": 1,
            "batch_size": 10,
            "learning_rate": 0.05,
        },
        "pkd": {
            "warmup_rounds": 2,
            "expert_rounds": 2,
            "theta": 0.05,
            "lambda": 1.0,
            "temperature": 5.0,
        },
        "seeds": [0],
    }


@pytest.fixture
def tiny_config(tiny_config_document: dict[str, Any]) -> RunConfig:
    """Validated form of ``tiny_config_document``."""
    return RunConfig.model_validate(tiny_config_document)

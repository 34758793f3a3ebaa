"""Array-backed value types."""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, NonNegativeInt, PositiveInt, model_validator

from defaults import default_model_config
from models.constraints import FloatArray, LabelArray
from models.enums import Activation

LayerDims = tuple[tuple[PositiveInt, PositiveInt], ...]


class ModelParams(BaseModel):
    """Flat parameter vector of a dense rectifier network.

    Per layer the vector holds the ``in_dim x out_dim`` weight matrix in
    row-major order followed by the ``out_dim`` biases. This is the unit of
    FedAvg aggregation.
    """

    model_config: ConfigDict = default_model_config

    layer_dims: LayerDims
    weights: FloatArray
    activation: Activation = Activation.RELU

    @model_validator(mode="after")
    def _check_layout(self) -> ModelParams:
        if not self.layer_dims:
            msg = "a model needs at least one layer"
            raise ValueError(msg)
        for (_, out_prev), (in_next, _) in zip(
            self.layer_dims[:-1],
            self.layer_dims[1:],
            strict=True,
        ):
            if out_prev != in_next:
                msg = f"layer widths do not chain: {out_prev} -> {in_next}"
                raise ValueError(msg)
        expected: int = parameter_count(layer_dims=self.layer_dims)
        if self.weights.ndim != 1 or self.weights.size != expected:
            msg = f"expected {expected} parameters, got shape {self.weights.shape}"
            raise ValueError(msg)
        return self

    @property
    def input_dim(self) -> int:
        """Width of the input vector."""
        return self.layer_dims[0][0]

    @property
    def output_dim(self) -> int:
        """Number of logits."""
        return self.layer_dims[-1][1]

    @property
    def feature_dim(self) -> int:
        """Width of the penultimate activations (the input for a single layer)."""
        return self.layer_dims[-1][0]

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` into the flat vector, one pair per layer."""
        return split_layers(flat=self.weights, layer_dims=self.layer_dims)

    def with_weights(self, weights: np.ndarray) -> ModelParams:
        """Same architecture, new parameter values (validated)."""
        return ModelParams(
            layer_dims=self.layer_dims,
            weights=weights,
            activation=self.activation,
        )


def parameter_count(layer_dims: LayerDims) -> int:
    """Total parameters: sum over layers of ``in*out + out``."""
    return sum(in_dim * out_dim + out_dim for in_dim, out_dim in layer_dims)


def split_layers(
    flat: np.ndarray,
    layer_dims: LayerDims,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Slice a flat parameter-shaped vector into per-layer ``(W, b)`` views.

    Args:
        flat (np.ndarray): Vector of length ``parameter_count(layer_dims)``.
        layer_dims (LayerDims): ``(in_dim, out_dim)`` per layer.

    Returns:
        list[tuple[np.ndarray, np.ndarray]]: Views, not copies; writing to them
            writes into ``flat``.

    """
    views: list[tuple[np.ndarray, np.ndarray]] = []
    offset: int = 0
    for in_dim, out_dim in layer_dims:
        w_end: int = offset + in_dim * out_dim
        weight: np.ndarray = flat[offset:w_end].reshape(in_dim, out_dim)
        bias: np.ndarray = flat[w_end : w_end + out_dim]
        views.append((weight, bias))
        offset = w_end + out_dim
    return views


class Dataset(BaseModel):
    """Labeled samples: an ``N x d`` feature matrix and ``N`` class indices."""

    model_config: ConfigDict = default_model_config | ConfigDict(frozen=False)

    features: FloatArray
    labels: LabelArray
    class_count: PositiveInt
    name: str = "dataset"

    @model_validator(mode="after")
    def _check_shapes(self) -> Dataset:
        if self.features.ndim != 2:  # noqa: PLR2004
            msg = f"features must be 2-D, got shape {self.features.shape}"
            raise ValueError(msg)
        if self.features.shape[0] == 0:
            msg = "a dataset needs at least one sample"
            raise ValueError(msg)
        if self.features.shape[0] != self.labels.shape[0]:
            msg = (
                f"{self.features.shape[0]} feature rows but "
                f"{self.labels.shape[0]} labels"
            )
            raise ValueError(msg)
        if int(self.labels.max()) >= self.class_count:
            msg = f"label {int(self.labels.max())} >= class_count {self.class_count}"
            raise ValueError(msg)
        return self

    @property
    def size(self) -> int:
        """Number of samples N."""
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        """Feature width d."""
        return int(self.features.shape[1])

    @property
    def class_counts(self) -> np.ndarray:
        """Samples per class, length C."""
        return np.bincount(self.labels, minlength=self.class_count)

    def indices_of(self, label: NonNegativeInt) -> np.ndarray:
        """Ascending sample indices of one class."""
        return np.flatnonzero(self.labels == label)

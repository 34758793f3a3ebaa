"""Dense rectifier networks: forward, exact backpropagation, SGD, losses."""

import logging
from collections.abc import Sequence
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, model_validator
from scipy.special import log_softmax, rel_entr, softmax

from defaults import default_model_config
from errors import (
    DimensionMismatchError,
    InvalidArgumentError,
    NonFiniteError,
    ShapeMismatchError,
)
from models.arrays import LayerDims, ModelParams, parameter_count, split_layers
from models.constraints import ClassGroup, FloatArray, LabelArray, Temperature
from models.enums import KlDirection

logger: logging.Logger = logging.getLogger(__name__)


class ForwardTrace(NamedTuple):
    """Inputs of every layer (``activations[0]`` is the batch) and the logits."""

    activations: list[np.ndarray]
    logits: np.ndarray

    @property
    def features(self) -> np.ndarray:
        """Input of the final layer."""
        return self.activations[-1]


class DistillTerm(BaseModel):
    """Fixed teacher probabilities for the triggered rows of one expert.

    ``teacher_probs[r]`` is the expert distribution for batch row ``rows[r]``
    over the global classes ``classes`` (ascending, the expert's output order).
    """

    model_config: ConfigDict = default_model_config

    rows: LabelArray
    classes: ClassGroup
    teacher_probs: FloatArray

    @model_validator(mode="after")
    def _check_shape(self) -> "DistillTerm":
        expected: tuple[int, int] = (self.rows.size, len(self.classes))
        if self.teacher_probs.shape != expected:
            msg = f"teacher_probs must be {expected}, got {self.teacher_probs.shape}"
            raise ValueError(msg)
        return self


class LossSpec(BaseModel):
    """Mean cross-entropy plus ``lam`` times the mean distillation divergence."""

    model_config: ConfigDict = default_model_config

    lam: NonNegativeFloat = 0.0
    temperature: Temperature = 1.0
    kl_direction: KlDirection = KlDirection.STUDENT_FIRST
    terms: tuple[DistillTerm, ...] = Field(default=())

    @property
    def triggered(self) -> int:
        """Number of batch rows carrying a distillation target."""
        return sum(term.rows.size for term in self.terms)

    @property
    def distills(self) -> bool:
        """False when the loss is plain cross-entropy."""
        return self.lam > 0.0 and self.triggered > 0


def mlp_dims(
    input_dim: int,
    hidden_layers: Sequence[int],
    output_dim: int,
) -> LayerDims:
    """``(in, out)`` pairs of a network with the given hidden widths."""
    widths: list[int] = [input_dim, *hidden_layers, output_dim]
    return tuple(zip(widths[:-1], widths[1:], strict=True))


def init_model(layer_dims: LayerDims, seed: int) -> ModelParams:
    """Uniform ``[-1/sqrt(in), 1/sqrt(in)]`` weights and zero biases.

    Args:
        layer_dims (LayerDims): ``(in_dim, out_dim)`` per layer.
        seed (int): Generator seed; equal seeds give equal models.

    Returns:
        ModelParams: The initial model.

    """
    rng: np.random.Generator = np.random.default_rng(seed)
    flat: np.ndarray = np.zeros(parameter_count(layer_dims=layer_dims))
    for weight, _ in split_layers(flat=flat, layer_dims=layer_dims):
        bound: float = 1.0 / np.sqrt(weight.shape[0])
        weight[...] = rng.uniform(low=-bound, high=bound, size=weight.shape)
    return ModelParams(layer_dims=layer_dims, weights=flat)


def forward_trace(model: ModelParams, inputs: np.ndarray) -> ForwardTrace:
    """Forward pass keeping every layer input for backpropagation.

    Raises:
        DimensionMismatchError: When a layer receives the wrong width.

    """
    activation: np.ndarray = np.asarray(inputs, dtype=np.float64)
    activations: list[np.ndarray] = []
    layers: list[tuple[np.ndarray, np.ndarray]] = model.layers()
    last: int = len(layers) - 1
    for index, (weight, bias) in enumerate(layers):
        if activation.shape[-1] != weight.shape[0]:
            raise DimensionMismatchError(
                layer=index,
                expected=weight.shape[0],
                actual=activation.shape[-1],
            )
        activations.append(activation)
        activation = activation @ weight + bias
        if index < last:
            activation = np.maximum(activation, 0.0)
    return ForwardTrace(activations=activations, logits=activation)


def forward(model: ModelParams, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and penultimate features for one sample or a batch.

    Args:
        model (ModelParams): Network.
        inputs (np.ndarray): Vector of length ``in_dim`` or ``B x in_dim`` matrix.

    Returns:
        tuple[np.ndarray, np.ndarray]: ``(logits, features)``; features are the
            activations fed to the final layer.

    Raises:
        DimensionMismatchError: When a layer receives the wrong width.

    """
    trace: ForwardTrace = forward_trace(model=model, inputs=inputs)
    return trace.logits, trace.features


def predict(model: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Argmax class per row (lowest index on ties)."""
    logits, _ = forward(model=model, inputs=inputs)
    return np.argmax(logits, axis=-1)


def softmax_t(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature softmax over the last axis.

    Raises:
        InvalidArgumentError: If ``temperature`` is not a positive finite number.

    """
    if not (np.isfinite(temperature) and temperature > 0.0):
        msg = f"temperature must be positive, got {temperature}"
        raise InvalidArgumentError(msg)
    return softmax(np.asarray(logits, dtype=np.float64) / temperature, axis=-1)


def kl_div(p: np.ndarray, q: np.ndarray) -> float | np.ndarray:
    """``sum_i p_i ln(p_i / q_i)`` over the last axis, with ``0 ln 0 = 0``.

    Raises:
        InvalidArgumentError: On a length mismatch.

    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        msg = f"distributions differ in shape: {p.shape} vs {q.shape}"
        raise InvalidArgumentError(msg)
    divergence: np.ndarray = np.sum(rel_entr(p, q), axis=-1)
    return float(divergence) if divergence.ndim == 0 else divergence


def cross_entropy(logits: np.ndarray, label: int | np.ndarray) -> float | np.ndarray:
    """``-ln softmax(z)[label]`` for one sample, or per row for a batch.

    Raises:
        InvalidArgumentError: If a label is outside ``[0, len(z))``.

    """
    logits = np.asarray(logits, dtype=np.float64)
    labels: np.ndarray = np.asarray(label, dtype=np.int64)
    width: int = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= width):
        msg = f"label out of range for {width} classes"
        raise InvalidArgumentError(msg)
    log_probs: np.ndarray = log_softmax(logits, axis=-1)
    if logits.ndim == 1:
        return float(-log_probs[int(labels)])
    return -log_probs[np.arange(labels.size), labels]


def _distill_value_and_grad(
    logits: np.ndarray,
    term: DistillTerm,
    temperature: float,
    kl_direction: KlDirection,
) -> tuple[float, np.ndarray]:
    """Summed divergence of one term and its gradient w.r.t. the restricted logits."""
    restricted: np.ndarray = logits[np.ix_(term.rows, term.classes)] / temperature
    log_student: np.ndarray = log_softmax(restricted, axis=-1)
    student: np.ndarray = np.exp(log_student)
    teacher: np.ndarray = term.teacher_probs
    if kl_direction is KlDirection.STUDENT_FIRST:
        per_row: np.ndarray = np.sum(rel_entr(student, teacher), axis=-1)
        log_ratio: np.ndarray = log_student - np.log(teacher)
        grad: np.ndarray = student * (log_ratio - per_row[:, np.newaxis]) / temperature
    else:
        per_row = np.sum(rel_entr(teacher, student), axis=-1)
        grad = (student - teacher) / temperature
    return float(per_row.sum()), grad


def loss_and_gradient(
    model: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    loss_spec: LossSpec | None = None,
    trace: ForwardTrace | None = None,
) -> tuple[float, np.ndarray]:
    """Mean batch loss and its exact gradient.

    The loss is ``mean CE + lam * mean_{triggered} KL``. Teacher probabilities
    are constants. With ``lam == 0`` or no triggered rows the distillation term
    is never evaluated, so the result equals plain cross-entropy bitwise.

    Args:
        model (ModelParams): Student network.
        features (np.ndarray): ``B x in_dim`` batch.
        labels (np.ndarray): ``B`` class indices.
        loss_spec (LossSpec | None): Distillation settings; None is plain CE.
        trace (ForwardTrace | None): A forward pass of ``features`` already run
            on ``model``.

    Returns:
        tuple[float, np.ndarray]: Loss and gradient shaped like ``model.weights``.

    Raises:
        DimensionMismatchError: When a layer receives the wrong width.
        InvalidArgumentError: If a label is out of range.

    """
    if trace is None:
        trace = forward_trace(model=model, inputs=np.atleast_2d(features))
    logits: np.ndarray = trace.logits
    labels = np.asarray(labels, dtype=np.int64)
    batch: int = logits.shape[0]
    loss: float = float(np.mean(cross_entropy(logits=logits, label=labels)))
    delta: np.ndarray = softmax(logits, axis=-1)
    delta[np.arange(batch), labels] -= 1.0
    delta /= batch

    if loss_spec is not None and loss_spec.distills:
        scale: float = loss_spec.lam / loss_spec.triggered
        divergence: float = 0.0
        for term in loss_spec.terms:
            value, grad = _distill_value_and_grad(
                logits=logits,
                term=term,
                temperature=loss_spec.temperature,
                kl_direction=loss_spec.kl_direction,
            )
            divergence += value
            delta[np.ix_(term.rows, term.classes)] += scale * grad
        loss += scale * divergence

    gradient: np.ndarray = np.zeros_like(model.weights)
    grad_layers: list[tuple[np.ndarray, np.ndarray]] = split_layers(
        flat=gradient,
        layer_dims=model.layer_dims,
    )
    layers: list[tuple[np.ndarray, np.ndarray]] = model.layers()
    for index in range(len(layers) - 1, -1, -1):
        layer_input: np.ndarray = trace.activations[index]
        grad_weight, grad_bias = grad_layers[index]
        grad_weight[...] = layer_input.T @ delta
        grad_bias[...] = delta.sum(axis=0)
        if index > 0:
            delta = (delta @ layers[index][0].T) * (layer_input > 0.0)
    return loss, gradient


def backward(
    model: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    loss_spec: LossSpec | None = None,
) -> np.ndarray:
    """Gradient of the mean batch loss, shaped like ``model.weights``."""
    _, gradient = loss_and_gradient(
        model=model,
        features=features,
        labels=labels,
        loss_spec=loss_spec,
    )
    return gradient


def batch_loss(
    model: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    loss_spec: LossSpec | None = None,
) -> float:
    """Mean batch loss without the gradient."""
    loss, _ = loss_and_gradient(
        model=model,
        features=features,
        labels=labels,
        loss_spec=loss_spec,
    )
    return loss


def sgd_step(model: ModelParams, gradient: np.ndarray, lr: float) -> ModelParams:
    """``w - lr * g``.

    Raises:
        ShapeMismatchError: If the gradient does not match the parameters.
        InvalidArgumentError: If ``lr`` is negative.
        NonFiniteError: If the gradient or the result is not finite.

    """
    if gradient.shape != model.weights.shape:
        msg = f"gradient shape {gradient.shape} != parameter shape {model.weights.shape}"
        raise ShapeMismatchError(msg)
    if lr < 0.0:
        msg = f"learning rate must be non-negative, got {lr}"
        raise InvalidArgumentError(msg)
    if not np.all(np.isfinite(gradient)):
        msg = "non-finite gradient"
        raise NonFiniteError(msg)
    updated: np.ndarray = model.weights - lr * gradient
    if not np.all(np.isfinite(updated)):
        msg = "SGD step produced non-finite parameters"
        raise NonFiniteError(msg)
    return model.with_weights(weights=updated)


def flops_per_sample(layer_dims: LayerDims) -> tuple[float, float]:
    """Analytic ``(forward, backward)`` FLOPs for one sample.

    A dense layer costs ``2 * in * out`` forward; backward is twice forward.
    """
    forward_flops: float = float(sum(2 * in_dim * out_dim for in_dim, out_dim in layer_dims))
    return forward_flops, 2.0 * forward_flops

"""MLP math: forward, losses and gradients."""

import math
from collections.abc import Callable
from decimal import Decimal, getcontext

import numpy as np
import pytest

import testing_default_values
from errors import DimensionMismatchError, InvalidArgumentError, NonFiniteError, ShapeMismatchError
from models.arrays import LayerDims, ModelParams, parameter_count
from models.enums import KlDirection
from nn_core import (
    DistillTerm,
    LossSpec,
    backward,
    batch_loss,
    cross_entropy,
    flops_per_sample,
    forward,
    init_model,
    kl_div,
    loss_and_gradient,
    mlp_dims,
    sgd_step,
    softmax_t,
)

getcontext().prec = 50


def _decimal_softmax(logits: list[int], temperature: int) -> list[Decimal]:
    exps: list[Decimal] = [(Decimal(z) / Decimal(temperature)).exp() for z in logits]
    total: Decimal = sum(exps, Decimal(0))
    return [e / total for e in exps]


def _numeric_gradient(
    model: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    loss_spec: LossSpec | None,
    step: float = testing_default_values.gradcheck_step,
) -> np.ndarray:
    numeric: np.ndarray = np.zeros_like(model.weights)
    for index in range(model.weights.size):
        plus: np.ndarray = model.weights.copy()
        minus: np.ndarray = model.weights.copy()
        plus[index] += step
        minus[index] -= step
        numeric[index] = (
            batch_loss(model.with_weights(plus), features, labels, loss_spec)
            - batch_loss(model.with_weights(minus), features, labels, loss_spec)
        ) / (2 * step)
    return numeric


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale: float = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return float(np.linalg.norm(analytic - numeric)) / max(scale, 1e-12)


def test_forward_identity(identity_model: Callable[[int], ModelParams]) -> None:
    x: np.ndarray = np.array([0.3, -1.2, 4.0])
    logits, features = forward(identity_model(3), x)
    np.testing.assert_array_equal(logits, x)
    np.testing.assert_array_equal(features, x)


def test_forward_zero_model_gives_zero_logits() -> None:
    dims = mlp_dims(input_dim=4, hidden_layers=(5,), output_dim=3)
    model = ModelParams(layer_dims=dims, weights=np.zeros(parameter_count(dims)))
    logits, _ = forward(model, np.array([[1.0, 2.0, 3.0, 4.0], [-1.0, 0.0, 2.0, 9.0]]))
    np.testing.assert_array_equal(logits, np.zeros((2, 3)))


def test_forward_matches_hand_rolled_matmul() -> None:
    dims = mlp_dims(input_dim=3, hidden_layers=(4,), output_dim=2)
    model: ModelParams = init_model(layer_dims=dims, seed=0)
    x: list[float] = [0.5, -1.0, 2.0]
    (w1, b1), (w2, b2) = model.layers()
    hidden: list[float] = [
        max(0.0, sum(x[i] * w1[i, j] for i in range(3)) + b1[j]) for j in range(4)
    ]
    expected: list[float] = [
        sum(hidden[i] * w2[i, j] for i in range(4)) + b2[j] for j in range(2)
    ]
    logits, features = forward(model, np.array(x))
    np.testing.assert_allclose(logits, expected, rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(features, hidden, rtol=0.0, atol=1e-12)


def test_forward_dimension_mismatch_names_layer() -> None:
    model: ModelParams = init_model(layer_dims=mlp_dims(3, (4,), 2), seed=0)
    with pytest.raises(DimensionMismatchError) as caught:
        forward(model, np.ones(5))
    assert caught.value.layer == 0
    assert caught.value.expected == 3
    assert caught.value.actual == 5


def test_init_model_is_seeded() -> None:
    dims = mlp_dims(6, (5, 4), 3)
    np.testing.assert_array_equal(init_model(dims, 3).weights, init_model(dims, 3).weights)
    assert not np.array_equal(init_model(dims, 3).weights, init_model(dims, 4).weights)


def test_softmax_uniform_logits() -> None:
    np.testing.assert_allclose(softmax_t(np.zeros(3), 5.0), [1 / 3] * 3, rtol=0.0, atol=1e-15)


def test_softmax_matches_high_precision() -> None:
    expected: list[Decimal] = _decimal_softmax([1, 2, 3], 1)
    np.testing.assert_allclose(
        softmax_t(np.array([1.0, 2.0, 3.0]), 1.0),
        [float(e) for e in expected],
        rtol=0.0,
        atol=1e-15,
    )


@pytest.mark.parametrize("temperature", [0.5, 1.0, 5.0, 20.0])
def test_softmax_depends_only_on_scaled_gap(temperature: float) -> None:
    low: np.ndarray = softmax_t(np.array([0.0, 1.5]), temperature)
    high: np.ndarray = softmax_t(np.array([700.0, 701.5]), temperature)
    np.testing.assert_allclose(low, high, rtol=0.0, atol=1e-9)
    assert low.sum() == pytest.approx(1.0, abs=1e-9)


def test_softmax_shift_invariance_and_positivity() -> None:
    rng: np.random.Generator = np.random.default_rng(11)
    for _ in range(50):
        z: np.ndarray = rng.normal(scale=10.0, size=7)
        p: np.ndarray = softmax_t(z, 5.0)
        assert np.all(p > 0.0)
        assert p.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.max(np.abs(p - softmax_t(z + rng.normal(scale=100.0), 5.0))) < 1e-9


@pytest.mark.parametrize("temperature", [0.0, -1.0, float("nan"), float("inf")])
def test_softmax_rejects_bad_temperature(temperature: float) -> None:
    with pytest.raises(InvalidArgumentError):
        softmax_t(np.zeros(3), temperature)


def test_kl_identity_and_closed_form() -> None:
    p: np.ndarray = np.array([0.2, 0.3, 0.5])
    assert kl_div(p, p) == pytest.approx(0.0, abs=1e-12)
    assert kl_div(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == pytest.approx(math.log(2), abs=1e-15)


def test_kl_matches_summation_oracle() -> None:
    rng: np.random.Generator = np.random.default_rng(5)
    for _ in range(100):
        p: np.ndarray = rng.dirichlet(np.ones(6))
        q: np.ndarray = rng.dirichlet(np.ones(6))
        oracle: float = math.fsum(pi * math.log(pi / qi) for pi, qi in zip(p, q, strict=True))
        value: float = kl_div(p, q)
        assert value == pytest.approx(oracle, abs=1e-12)
        assert value > 0.0


def test_kl_rejects_length_mismatch() -> None:
    with pytest.raises(InvalidArgumentError):
        kl_div(np.array([0.5, 0.5]), np.array([0.2, 0.3, 0.5]))


def test_cross_entropy_cases() -> None:
    assert cross_entropy(np.zeros(10), 3) == pytest.approx(math.log(10), abs=1e-15)
    assert cross_entropy(np.array([0.0, 60.0, 0.0]), 1) < 1e-20
    expected: Decimal = -_decimal_softmax([1, 2, 3], 1)[0].ln()
    assert cross_entropy(np.array([1.0, 2.0, 3.0]), 0) == pytest.approx(float(expected), abs=1e-14)


@pytest.mark.parametrize("label", [-1, 3])
def test_cross_entropy_rejects_label_out_of_range(label: int) -> None:
    with pytest.raises(InvalidArgumentError):
        cross_entropy(np.zeros(3), label)


def test_zero_model_final_bias_gradient() -> None:
    dims = mlp_dims(2, (3,), 3)
    model = ModelParams(layer_dims=dims, weights=np.zeros(parameter_count(dims)))
    gradient: np.ndarray = backward(
        model,
        np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 1.0]]),
        np.array([0, 0, 1]),
    )
    np.testing.assert_allclose(gradient[-3:], [-1 / 3, 0.0, 1 / 3], rtol=0.0, atol=1e-15)
    np.testing.assert_array_equal(gradient[:-3], 0.0)


def _distill_spec(rng: np.random.Generator, lam: float, direction: KlDirection) -> LossSpec:
    return LossSpec(
        lam=lam,
        temperature=float(rng.uniform(1.0, 6.0)),
        kl_direction=direction,
        terms=(
            DistillTerm(rows=[0, 2], classes=(0, 1, 2), teacher_probs=rng.dirichlet(np.ones(3), size=2)),
            DistillTerm(rows=[3], classes=(1, 3), teacher_probs=rng.dirichlet(np.ones(2), size=1)),
        ),
    )


@pytest.mark.parametrize("seed", range(24))
def test_gradient_matches_finite_differences(
    seed: int,
    smooth_model: Callable[[LayerDims, np.ndarray, np.random.Generator], ModelParams],
) -> None:
    rng: np.random.Generator = np.random.default_rng(seed)
    hidden: tuple[int, ...] = ((5,), (4, 3))[seed % 2]
    features: np.ndarray = rng.normal(size=(6, 3))
    model: ModelParams = smooth_model(mlp_dims(3, hidden, 4), features, rng)
    labels: np.ndarray = rng.integers(0, 4, size=6)
    loss_spec: LossSpec | None = None
    if seed >= 8:
        direction: KlDirection = (KlDirection.STUDENT_FIRST, KlDirection.EXPERT_FIRST)[seed % 2]
        loss_spec = _distill_spec(rng, lam=float(rng.uniform(0.5, 2.0)), direction=direction)
    analytic: np.ndarray = backward(model, features, labels, loss_spec)
    numeric: np.ndarray = _numeric_gradient(model, features, labels, loss_spec)
    assert _relative_error(analytic, numeric) < 1e-4


def test_zero_lambda_is_cross_entropy_bitwise() -> None:
    rng: np.random.Generator = np.random.default_rng(3)
    model: ModelParams = init_model(mlp_dims(3, (5,), 4), seed=1)
    features: np.ndarray = rng.normal(size=(6, 3))
    labels: np.ndarray = rng.integers(0, 4, size=6)
    plain_loss, plain_grad = loss_and_gradient(model, features, labels)
    spec: LossSpec = _distill_spec(rng, lam=0.0, direction=KlDirection.STUDENT_FIRST)
    gated_loss, gated_grad = loss_and_gradient(model, features, labels, spec)
    assert plain_loss == gated_loss
    np.testing.assert_array_equal(plain_grad, gated_grad)


def test_distill_term_shape_is_checked() -> None:
    with pytest.raises(ValueError, match="teacher_probs"):
        DistillTerm(rows=[0, 1], classes=(0, 1), teacher_probs=np.full((1, 2), 0.5))


def test_sgd_step_arithmetic() -> None:
    model = ModelParams(layer_dims=((1, 1),), weights=np.array([1.0, 0.0]))
    updated: ModelParams = sgd_step(model, np.array([2.0, 0.0]), lr=0.01)
    assert updated.weights[0] == pytest.approx(0.98, abs=1e-15)
    np.testing.assert_array_equal(sgd_step(model, np.zeros(2), lr=0.01).weights, model.weights)
    np.testing.assert_array_equal(sgd_step(model, np.array([5.0, 1.0]), lr=0.0).weights, model.weights)


def test_sgd_step_errors() -> None:
    model = ModelParams(layer_dims=((1, 1),), weights=np.array([1.0, 0.0]))
    with pytest.raises(ShapeMismatchError):
        sgd_step(model, np.zeros(3), lr=0.1)
    with pytest.raises(NonFiniteError):
        sgd_step(model, np.array([np.nan, 0.0]), lr=0.1)
    with pytest.raises(InvalidArgumentError):
        sgd_step(model, np.zeros(2), lr=-0.1)


def test_flops_per_sample() -> None:
    assert flops_per_sample(((4, 3), (3, 2))) == (36.0, 72.0)

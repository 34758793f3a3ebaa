"""Constraints for models."""

from collections.abc import Sequence
from typing import Annotated

import numpy as np
from pydantic import AfterValidator, BeforeValidator, Field

# Reusable constrained scalars

Fraction = Annotated[float, Field(gt=0.0, le=1.0)]
Temperature = Annotated[float, Field(gt=0.0, allow_inf_nan=False)]
Threshold = Annotated[float, Field(gt=0.0, le=1.0)]
Seed = Annotated[int, Field(ge=0, lt=2**63)]


# Array checks


def finite_float_array(value: np.ndarray) -> np.ndarray:
    """Coerce to a float64 array and reject NaN/Inf.

    Args:
        value (np.ndarray): Candidate array.

    Returns:
        np.ndarray: The same values as contiguous float64.

    Raises:
        ValueError: If any value is not finite.

    """
    array: np.ndarray = np.ascontiguousarray(value, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        msg = "array contains NaN or Inf"
        raise ValueError(msg)
    return array


def label_array(value: np.ndarray) -> np.ndarray:
    """Coerce to a 1-D int64 label array with no negative entries."""
    array: np.ndarray = np.ascontiguousarray(value, dtype=np.int64)
    if array.ndim != 1:
        msg = f"labels must be 1-D, got shape {array.shape}"
        raise ValueError(msg)
    if array.size and array.min() < 0:
        msg = "labels must be non-negative"
        raise ValueError(msg)
    return array


FloatArray = Annotated[np.ndarray, BeforeValidator(finite_float_array)]
LabelArray = Annotated[np.ndarray, BeforeValidator(label_array)]


# Class-list checks


def distinct_classes(classes: Sequence[int]) -> tuple[int, ...]:
    """Reject repeated or negative class indices.

    Args:
        classes (Sequence[int]): Class indices in caller order.

    Returns:
        tuple[int, ...]: The indices, order preserved.

    Raises:
        ValueError: On duplicates or negatives.

    """
    group: tuple[int, ...] = tuple(int(c) for c in classes)
    if len(set(group)) != len(group):
        msg = f"class indices must be distinct, got {list(group)}"
        raise ValueError(msg)
    if any(c < 0 for c in group):
        msg = f"class indices must be non-negative, got {list(group)}"
        raise ValueError(msg)
    return group


def sorted_group(classes: Sequence[int]) -> tuple[int, ...]:
    """A weak-class group: at least two distinct classes, ascending."""
    group: tuple[int, ...] = distinct_classes(classes)
    if len(group) < 2:  # noqa: PLR2004
        msg = f"a weak-class group needs at least two classes, got {list(group)}"
        raise ValueError(msg)
    if list(group) != sorted(group):
        msg = f"a weak-class group must be sorted ascending, got {list(group)}"
        raise ValueError(msg)
    return group


ClassList = Annotated[tuple[int, ...], AfterValidator(distinct_classes)]
ClassGroup = Annotated[tuple[int, ...], AfterValidator(sorted_group)]

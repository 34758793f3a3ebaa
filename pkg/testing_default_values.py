"""Default values for testing."""

import struct

# hand-labeled evaluation fixture: 4 classes, 5 samples each, predicted
# classes chosen by hand; an identity network maps a one-hot input to
# the same predicted class
evaluation_class_count: int = 4
evaluation_labels: list[int] = [0] * 5 + [1] * 5 + [2] * 5 + [3] * 5
evaluation_predictions: list[int] = [
    # class 0: 4 of 5 right
    0, 0, 0, 0, 1,
    # class 1: 5 of 5
    1, 1, 1, 1, 1,
    # class 2: 3 of 5
    2, 3, 2, 3, 2,
    # class 3: 3 of 5
    3, 2, 3, 3, 0,
]  # fmt: skip
evaluation_expected: dict[str, float | int | list[float]] = {
    "class_accuracy": [0.8, 1.0, 0.6, 0.6],
    "max": 1.0,
    "ave": 0.75,
    "min": 0.6,
    "icd": 0.4,
    "worst": 2,
}

# two clients, 3 classes, hand-set predictions per client
confusion_class_count: int = 3
confusion_clients: list[dict[str, list[int]]] = [
    {
        "labels": [0, 0, 0, 1, 1, 2],
        "predictions": [0, 1, 0, 1, 2, 2],
    },
    {
        "labels": [0, 1, 1, 1, 2, 2],
        "predictions": [1, 1, 0, 1, 2, 1],
    },
]
confusion_expected: list[list[int]] = [
    [2, 2, 0],
    [1, 3, 1],
    [0, 1, 2],
]

# four weak pairs forming two groups
weak_pairs: list[tuple[int, int]] = [(0, 6), (6, 2), (6, 4), (2, 4)]
weak_pair_probability: float = 0.3
weak_pair_threshold: float = 0.2
expected_weak_groups: list[tuple[int, ...]] = [(2, 4, 6), (0, 6)]

# two 2x2 images and their labels as raw IDX bytes
idx_images: list[list[list[int]]] = [
    [[0, 51], [102, 255]],
    [[255, 204], [153, 0]],
]
idx_labels: list[int] = [3, 1]
idx_image_bytes: bytes = struct.pack(">IIII", 0x00000803, 2, 2, 2) + bytes(
    [0, 51, 102, 255, 255, 204, 153, 0],
)
idx_label_bytes: bytes = struct.pack(">II", 0x00000801, 2) + bytes(idx_labels)
idx_expected_features: list[list[float]] = [
    [0.0, 0.2, 0.4, 1.0],
    [1.0, 0.8, 0.6, 0.0],
]

# central differences: step, and the distance every hidden pre-activation and
# top-two logit gap keeps from zero (ten steps)
gradcheck_step: float = 1e-5
gradcheck_margin: float = 10 * gradcheck_step
gradcheck_attempts: int = 100


if __name__ == "__main__":
    ...

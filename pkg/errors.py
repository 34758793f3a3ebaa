"""Errors."""

from pathlib import Path


class FedPkdError(Exception):
    """Base class of every simulator error."""


class InvalidArgumentError(FedPkdError, ValueError):
    """An argument is outside its documented domain."""


class DimensionMismatchError(FedPkdError, ValueError):
    """Input width does not match a layer.

    Args:
        layer (int): Zero-based index of the offending dense layer.
        expected (int): Width the layer accepts.
        actual (int): Width that was supplied.

    """

    def __init__(self, layer: int, expected: int, actual: int) -> None:
        self.layer: int = layer
        self.expected: int = expected
        self.actual: int = actual
        super().__init__(
            f"layer {layer}: expected input width {expected}, got {actual}",
        )


class ShapeMismatchError(FedPkdError, ValueError):
    """Two parameter vectors or architectures are incompatible."""


class NonFiniteError(FedPkdError, ArithmeticError):
    """A gradient or parameter contains NaN or Inf."""


class DatasetError(FedPkdError):
    """A dataset cannot serve the requested operation (e.g. a class is absent)."""


class PartitionError(FedPkdError):
    """A partition spec is infeasible for the dataset.

    Args:
        message (str): What went wrong.
        suggestion (str | None): How to fix the spec, if known.

    """

    def __init__(self, message: str, suggestion: str | None = None) -> None:
        self.suggestion: str | None = suggestion
        text: str = message if suggestion is None else f"{message} ({suggestion})"
        super().__init__(text)


class IdxParseError(FedPkdError):
    """An IDX file is missing, malformed or inconsistent.

    Args:
        path (Path): File being parsed.
        offset (int): Byte offset where the problem was detected.
        reason (str): Description.

    """

    def __init__(self, path: Path, offset: int, reason: str) -> None:
        self.path: Path = path
        self.offset: int = offset
        self.reason: str = reason
        super().__init__(f"{path}: byte {offset}: {reason}")


class ArtifactError(FedPkdError):
    """A run file is missing or not in the expected format.

    Args:
        path (Path): Offending file.
        reason (str): Description.

    """

    def __init__(self, path: Path, reason: str) -> None:
        self.path: Path = path
        super().__init__(f"{path}: {reason}")


class ConfigError(FedPkdError):
    """The run configuration file cannot be read."""

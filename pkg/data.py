"""Datasets: planted-cluster synthetic benchmark and IDX image/label files."""

import logging
import math
import struct
from collections.abc import Sequence
from pathlib import Path

import numpy as np

import benchmark_defaults
import defaults
from config import settings
from errors import DatasetError, IdxParseError, InvalidArgumentError
from models.arrays import Dataset
from models.config_models import DatasetSource, IdxSource, SyntheticSource, SyntheticSpec

logger: logging.Logger = logging.getLogger(__name__)

IMAGE_MAGIC: int = 0x00000803
LABEL_MAGIC: int = 0x00000801
_IMAGE_HEADER: struct.Struct = struct.Struct(">IIII")
_LABEL_HEADER: struct.Struct = struct.Struct(">II")


def generate_synthetic(spec: SyntheticSpec, name: str = "synthetic") -> Dataset:
    """Draw ``samples_per_class`` isotropic Gaussian samples around each class mean.

    Classes are emitted in order ``0..C-1``, so labels are sorted.

    Args:
        spec (SyntheticSpec): Means, spread, sizes and seed.
        name (str): Dataset name.

    Returns:
        Dataset: ``C * n`` samples; identical bytes for identical specs.

    """
    rng: np.random.Generator = np.random.default_rng(spec.seed)
    blocks: list[np.ndarray] = []
    for mean in spec.class_means:
        noise: np.ndarray = rng.standard_normal(size=(spec.samples_per_class, spec.dim))
        blocks.append(mean + spec.within_class_stddev * noise)
    labels: np.ndarray = np.repeat(
        np.arange(spec.class_count, dtype=np.int64),
        spec.samples_per_class,
    )
    return Dataset(
        features=np.concatenate(blocks, axis=0),
        labels=labels,
        class_count=spec.class_count,
        name=name,
    )


def benchmark_class_means(
    dim: int = benchmark_defaults.benchmark_dim,
    stddev: float = 1.0,
) -> np.ndarray:
    """Ten class means with planted weak groups ``{0, 6}`` and ``{2, 4, 6}``.

    Classes outside the groups sit on their own axis, ``6 * stddev`` from the
    origin. Classes 2, 4 and 6 form an equilateral triangle with side
    ``group_spacing``; class 0 lies the same distance from the hub 6 in the
    opposite direction, so 6 stands between 0 and the pair 2/4 (about
    ``1.93 * group_spacing`` away from both).

    Raises:
        InvalidArgumentError: If ``dim`` is too small for the layout.

    """
    needed: int = 9
    if dim < needed:
        msg = f"benchmark geometry needs dim >= {needed}, got {dim}"
        raise InvalidArgumentError(msg)
    far: float = benchmark_defaults.separated_distance * stddev
    radius: float = benchmark_defaults.group_spacing * stddev
    angle: float = math.radians(30.0)
    means: np.ndarray = np.zeros((benchmark_defaults.benchmark_class_count, dim))
    separated: list[int] = sorted(
        set(range(benchmark_defaults.benchmark_class_count))
        - benchmark_defaults.planted_classes,
    )
    for axis, label in enumerate(separated):
        means[label, axis] = far
    hub_axis, spoke_axis, side_axis = 6, 7, 8
    hub: np.ndarray = np.zeros(dim)
    hub[hub_axis] = far
    means[6] = hub
    means[0] = hub
    means[0, spoke_axis] -= radius
    for label, sign in ((2, 1.0), (4, -1.0)):
        means[label] = hub
        means[label, spoke_axis] += radius * math.cos(angle)
        means[label, side_axis] += sign * radius * math.sin(angle)
    return means


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except FileNotFoundError:
        raise IdxParseError(path=path, offset=0, reason="file not found") from None
    except OSError as exc:
        raise IdxParseError(path=path, offset=0, reason=str(exc)) from exc


def _unpack_header(path: Path, raw: bytes, header: struct.Struct, magic: int) -> tuple[int, ...]:
    if len(raw) < header.size:
        raise IdxParseError(
            path=path,
            offset=len(raw),
            reason=f"truncated header, need {header.size} bytes",
        )
    values: tuple[int, ...] = header.unpack_from(raw, 0)
    if values[0] != magic:
        raise IdxParseError(
            path=path,
            offset=0,
            reason=f"bad magic 0x{values[0]:08x}, expected 0x{magic:08x}",
        )
    return values


def _payload(path: Path, raw: bytes, start: int, length: int) -> np.ndarray:
    end: int = start + length
    if len(raw) < end:
        raise IdxParseError(
            path=path,
            offset=len(raw),
            reason=f"truncated payload, expected {length} bytes from offset {start}",
        )
    if len(raw) > end:
        raise IdxParseError(path=path, offset=end, reason="trailing bytes after payload")
    return np.frombuffer(raw, dtype=np.uint8, count=length, offset=start)


def load_idx(
    images_path: Path,
    labels_path: Path,
    class_count: int | None = None,
    name: str = "idx",
) -> Dataset:
    """Read an IDX image file and its label file.

    Args:
        images_path (Path): ``idx3-ubyte`` images, magic ``0x00000803``.
        labels_path (Path): ``idx1-ubyte`` labels, magic ``0x00000801``.
        class_count (int | None): C; defaults to the largest label plus one.
        name (str): Dataset name.

    Returns:
        Dataset: Pixels scaled to ``[0, 1]``, each image flattened row-major.

    Raises:
        IdxParseError: Missing file, bad magic, truncation or count mismatch,
            with the byte offset where it was detected.
        DatasetError: If the files hold no samples.

    """
    images_path = Path(images_path)
    labels_path = Path(labels_path)
    image_raw: bytes = _read_bytes(path=images_path)
    _, count, rows, cols = _unpack_header(
        path=images_path,
        raw=image_raw,
        header=_IMAGE_HEADER,
        magic=IMAGE_MAGIC,
    )
    pixels: np.ndarray = _payload(
        path=images_path,
        raw=image_raw,
        start=_IMAGE_HEADER.size,
        length=count * rows * cols,
    )
    label_raw: bytes = _read_bytes(path=labels_path)
    _, label_count = _unpack_header(
        path=labels_path,
        raw=label_raw,
        header=_LABEL_HEADER,
        magic=LABEL_MAGIC,
    )
    if label_count != count:
        raise IdxParseError(
            path=labels_path,
            offset=4,
            reason=f"label count {label_count} != image count {count} in {images_path}",
        )
    labels: np.ndarray = _payload(
        path=labels_path,
        raw=label_raw,
        start=_LABEL_HEADER.size,
        length=label_count,
    ).astype(np.int64)
    if count == 0:
        msg = f"{images_path} holds no images"
        raise DatasetError(msg)
    features: np.ndarray = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    logger.debug("Loaded %d images of %dx%d from %s", count, rows, cols, images_path)
    return Dataset(
        features=features,
        labels=labels,
        class_count=class_count or int(labels.max()) + 1,
        name=name,
    )


def write_idx(
    images: np.ndarray,
    labels: np.ndarray,
    images_path: Path,
    labels_path: Path,
) -> None:
    """Write ``N x rows x cols`` unsigned-byte images and ``N`` labels as IDX.

    Raises:
        InvalidArgumentError: On wrong shapes or values outside ``0..255``.

    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:  # noqa: PLR2004
        msg = f"need N x rows x cols images and N labels, got {images.shape} and {labels.shape}"
        raise InvalidArgumentError(msg)
    for array in (images, labels):
        if array.size and (array.min() < 0 or array.max() > 255):  # noqa: PLR2004
            msg = "IDX ubyte values must lie in 0..255"
            raise InvalidArgumentError(msg)
    count, rows, cols = images.shape
    Path(images_path).write_bytes(
        _IMAGE_HEADER.pack(IMAGE_MAGIC, count, rows, cols)
        + images.astype(np.uint8).tobytes(order="C"),
    )
    Path(labels_path).write_bytes(
        _LABEL_HEADER.pack(LABEL_MAGIC, count) + labels.astype(np.uint8).tobytes(),
    )


def _checked_group(ds: Dataset, group: Sequence[int]) -> tuple[int, ...]:
    classes: tuple[int, ...] = tuple(int(c) for c in group)
    if not classes:
        msg = "group must not be empty"
        raise InvalidArgumentError(msg)
    if len(set(classes)) != len(classes):
        msg = f"group classes must be distinct, got {list(classes)}"
        raise InvalidArgumentError(msg)
    if min(classes) < 0 or max(classes) >= ds.class_count:
        msg = f"group {list(classes)} has classes outside 0..{ds.class_count - 1}"
        raise InvalidArgumentError(msg)
    return classes


def group_indices(ds: Dataset, group: Sequence[int]) -> np.ndarray:
    """Ascending indices of the samples whose label is in ``group``."""
    classes: tuple[int, ...] = _checked_group(ds=ds, group=group)
    return np.flatnonzero(np.isin(ds.labels, classes))


def remap_labels(ds: Dataset, group: Sequence[int]) -> Dataset:
    """Keep the samples of ``group`` and relabel class ``group[k]`` as ``k``.

    Args:
        ds (Dataset): Source dataset.
        group (Sequence[int]): Distinct classes, in output order.

    Returns:
        Dataset: ``|group|`` classes; feature rows copied bitwise, original order.

    Raises:
        InvalidArgumentError: Empty group, duplicates or classes outside ``0..C-1``.
        DatasetError: If no sample belongs to the group.

    """
    classes: tuple[int, ...] = _checked_group(ds=ds, group=group)
    kept: np.ndarray = np.flatnonzero(np.isin(ds.labels, classes))
    if kept.size == 0:
        msg = f"no samples of classes {list(classes)} in {ds.name}"
        raise DatasetError(msg)
    lookup: np.ndarray = np.full(ds.class_count, -1, dtype=np.int64)
    lookup[list(classes)] = np.arange(len(classes))
    return Dataset(
        features=ds.features[kept],
        labels=lookup[ds.labels[kept]],
        class_count=len(classes),
        name=f"{ds.name}{list(classes)}",
    )


def _synthetic_pair(source: SyntheticSource) -> tuple[Dataset, Dataset]:
    means: np.ndarray
    if source.class_means is not None:
        means = np.asarray(source.class_means, dtype=np.float64)
    elif source.class_count == benchmark_defaults.benchmark_class_count:
        means = benchmark_class_means(dim=source.dim, stddev=source.within_class_stddev)
    else:
        msg = (
            "the planted benchmark geometry has "
            f"{benchmark_defaults.benchmark_class_count} classes; "
            "give dataset.class_means for other class counts"
        )
        raise InvalidArgumentError(msg)
    train: Dataset = generate_synthetic(
        spec=SyntheticSpec(
            class_count=source.class_count,
            dim=source.dim,
            samples_per_class=source.samples_per_class,
            class_means=means,
            within_class_stddev=source.within_class_stddev,
            seed=source.seed,
        ),
        name="synthetic-train",
    )
    test: Dataset = generate_synthetic(
        spec=SyntheticSpec(
            class_count=source.class_count,
            dim=source.dim,
            samples_per_class=source.test_samples_per_class,
            class_means=means,
            within_class_stddev=source.within_class_stddev,
            seed=source.seed + defaults.test_seed_offset,
        ),
        name="synthetic-test",
    )
    return train, test


def _idx_pair(source: IdxSource, data_dir: Path | None) -> tuple[Dataset, Dataset]:
    root: Path = data_dir or settings.data_dir or source.root
    train: Dataset = load_idx(
        images_path=root / source.train_images,
        labels_path=root / source.train_labels,
        name=f"{source.name}-train",
    )
    test: Dataset = load_idx(
        images_path=root / source.test_images,
        labels_path=root / source.test_labels,
        class_count=train.class_count,
        name=f"{source.name}-test",
    )
    return train, test


def load_dataset(
    source: DatasetSource,
    data_dir: Path | None = None,
) -> tuple[Dataset, Dataset]:
    """Resolve a dataset section into ``(train, test)``.

    For IDX sources the root is ``data_dir``, else ``FEDPKD_DATA_DIR``, else
    ``source.root``.
    """
    train: Dataset
    test: Dataset
    if isinstance(source, SyntheticSource):
        train, test = _synthetic_pair(source=source)
    else:
        train, test = _idx_pair(source=source, data_dir=data_dir)
    logger.info(
        "Dataset %s: %d train / %d test samples, %d classes, dim %d",
        train.name,
        train.size,
        test.size,
        train.class_count,
        train.dim,
    )
    return train, test

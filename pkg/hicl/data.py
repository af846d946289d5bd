"""Task streams: synthetic generation, IDX/CSV ingestion and class splits.

A :class:`TaskStream` is an ordered list of :class:`TaskData` with
pairwise-disjoint class lists. Labels inside a task are local
(``0..c-1``); ``classes`` maps them back to global ids.
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .exceptions import ConfigError, DataError, FormatError, ParameterError, ProtocolError
from .models import DataConfig, Provenance
from .utils import rng_stream

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class TaskData:
    """One task of a stream.

    Training arrays are reachable only until :meth:`seal` is called at
    the end of the task; every access is recorded in ``access_log``.
    """
    task_id: int
    classes: List[int]
    _train_inputs: np.ndarray
    _train_labels: np.ndarray
    test_inputs: np.ndarray
    test_labels: np.ndarray
    sealed: bool = False
    access_log: List[str] = field(default_factory=list)

    def _check_open(self, what: str) -> None:
        self.access_log.append(what)
        if self.sealed:
            raise ProtocolError(f"task {self.task_id} is finished; its raw {what} are no longer accessible")

    @property
    def train_inputs(self) -> np.ndarray:
        self._check_open("train_inputs")
        return self._train_inputs

    @property
    def train_labels(self) -> np.ndarray:
        self._check_open("train_labels")
        return self._train_labels

    @property
    def n_train(self) -> int:
        return int(self._train_labels.shape[0])

    @property
    def n_test(self) -> int:
        return int(self.test_labels.shape[0])

    def seal(self) -> None:
        self.sealed = True

    def to_global(self, local: np.ndarray) -> np.ndarray:
        return np.asarray(self.classes, dtype=np.int64)[np.asarray(local, dtype=np.int64)]

    @property
    def test_global_labels(self) -> np.ndarray:
        return self.to_global(self.test_labels)


@dataclass
class TaskStream:
    """Ordered tasks with disjoint class lists"""
    tasks: List[TaskData]
    provenance: Provenance

    def __len__(self) -> int:
        return len(self.tasks)

    def __getitem__(self, task_id: int) -> TaskData:
        return self.tasks[task_id]

    @property
    def n_classes(self) -> int:
        return sum(len(task.classes) for task in self.tasks)

    @property
    def input_dim(self) -> int:
        return int(self.tasks[0].test_inputs.shape[1])

    @property
    def class_map(self) -> Dict[int, Tuple[int, int]]:
        """global class -> (task id, local label)"""
        return {c: (task.task_id, local) for task in self.tasks for local, c in enumerate(task.classes)}


def _shuffled(rng: np.random.Generator, inputs: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(labels.shape[0])
    return inputs[order], labels[order]


def make_synthetic_stream(n_tasks: int, classes_per_task: int, dim: int, separation: float, seed: int,
                          noise_std: float = 1.0, samples_per_class: int = 200,
                          test_samples_per_class: int = 100) -> TaskStream:
    """Gaussian-blob tasks.

    Each class is an isotropic Gaussian whose mean lies on the sphere of
    radius ``separation``. All draws come from the seed's ``data`` stream.
    Inputs are min-max scaled to [0, 1] with ranges fit on the training
    draws of the whole stream, so every task shares one input space.

    Raises:
        ParameterError: If separation is negative or a count is not positive
    """
    if separation < 0:
        raise ParameterError(f"separation must be >= 0, got {separation}")
    if min(n_tasks, classes_per_task, dim, samples_per_class, test_samples_per_class) <= 0:
        raise ParameterError("task, class, dimension and sample counts must be positive")
    rng = rng_stream(seed, "data")
    n_classes = n_tasks * classes_per_task
    directions = rng.normal(size=(n_classes, dim))
    means = separation * directions / np.linalg.norm(directions, axis=1, keepdims=True)
    raw = []
    for task_id in range(n_tasks):
        classes = list(range(task_id * classes_per_task, (task_id + 1) * classes_per_task))
        splits = []
        for count in (samples_per_class, test_samples_per_class):
            inputs = np.concatenate([means[c] + noise_std * rng.normal(size=(count, dim)) for c in classes])
            labels = np.repeat(np.arange(classes_per_task), count)
            splits.append(_shuffled(rng, inputs, labels))
        raw.append((classes, splits))
    train_all = np.concatenate([splits[0][0] for _, splits in raw])
    low, span = _fit_ranges(train_all)
    tasks: List[TaskData] = []
    for task_id, (classes, ((train_x, train_y), (test_x, test_y))) in enumerate(raw):
        tasks.append(TaskData(task_id, classes, _apply_ranges(train_x, low, span), train_y,
                              _apply_ranges(test_x, low, span), test_y))
    logger.info(f"Synthetic stream: {n_tasks} tasks x {classes_per_task} classes, dim {dim}, separation {separation}")
    return TaskStream(tasks=tasks, provenance=Provenance.SYNTHETIC)


def split_dataset(images: np.ndarray, labels: np.ndarray, n_tasks: int,
                  test_images: Optional[np.ndarray] = None, test_labels: Optional[np.ndarray] = None,
                  provenance: Provenance = Provenance.IDX) -> TaskStream:
    """Split a labelled dataset into tasks of contiguous sorted classes.

    Args:
        images: (n, d) training inputs
        labels: (n,) global labels
        n_tasks: Number of tasks; must divide the class count
        test_images: Optional held-out inputs split the same way
        test_labels: Their global labels
        provenance: Tag stored on the stream

    Raises:
        ConfigError: If the class count is not divisible by ``n_tasks``
        DataError: If test labels contain classes missing from training
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if n_tasks <= 0 or classes.size % n_tasks:
        raise ConfigError(f"{classes.size} classes cannot be split evenly into {n_tasks} tasks")
    if test_images is None:
        test_images = np.zeros((0, images.shape[1]))
        test_labels = np.zeros(0, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    unknown = np.setdiff1d(np.unique(test_labels), classes)
    if unknown.size:
        raise DataError(f"test labels {unknown.tolist()} never appear in training data")
    per_task = classes.size // n_tasks
    tasks: List[TaskData] = []
    for task_id in range(n_tasks):
        task_classes = classes[task_id * per_task:(task_id + 1) * per_task]
        remap = {int(c): local for local, c in enumerate(task_classes)}
        train_rows = np.isin(labels, task_classes)
        test_rows = np.isin(test_labels, task_classes)
        tasks.append(TaskData(
            task_id=task_id,
            classes=[int(c) for c in task_classes],
            _train_inputs=np.asarray(images, dtype=np.float64)[train_rows],
            _train_labels=np.array([remap[int(c)] for c in labels[train_rows]], dtype=np.int64),
            test_inputs=np.asarray(test_images, dtype=np.float64)[test_rows],
            test_labels=np.array([remap[int(c)] for c in test_labels[test_rows]], dtype=np.int64),
        ))
    return TaskStream(tasks=tasks, provenance=provenance)


# ----------------------------------------------------------------------
# IDX
# ----------------------------------------------------------------------
def read_idx(path: str) -> np.ndarray:
    """Raw unsigned-byte IDX array.

    Raises:
        DataError: If the file cannot be read
        FormatError: On a bad magic number or truncated payload
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read IDX file {path}: {exc.strerror or exc}") from None
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header", offset=len(raw))
    magic = struct.unpack(">I", raw[:4])[0]
    if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}", offset=0)
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated IDX header", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    expected = int(np.prod(dims))
    available = len(raw) - header_end
    if available < expected:
        raise FormatError(f"{path}: header declares {dims} ({expected} bytes) but only {available} follow",
                          offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header_end).reshape(dims)


def write_idx(path: str, array: np.ndarray) -> None:
    """Write a 1-D label or 3-D image array as unsigned-byte IDX"""
    array = np.asarray(array)
    if array.ndim not in (1, 3):
        raise DataError(f"IDX writer supports 1-D labels or 3-D images, got {array.ndim}-D")
    if array.size and (array.min() < 0 or array.max() > 255):
        raise DataError("IDX unsigned-byte values must lie in [0, 255]")
    magic = IDX_LABELS_MAGIC if array.ndim == 1 else IDX_IMAGES_MAGIC
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(np.uint8).tobytes())


def load_idx(images_path: str, labels_path: str, n_classes: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Images flattened and scaled to [0, 1], with integer labels.

    Raises:
        FormatError: On malformed files or mismatched item counts
        DataError: If a label is outside ``[0, n_classes)``
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: expected 3-D image data, got {images.ndim}-D", offset=3)
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: expected 1-D label data, got {labels.ndim}-D", offset=3)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels", offset=4)
    labels = labels.astype(np.int64)
    if n_classes is not None and labels.size and labels.max() >= n_classes:
        raise DataError(f"{labels_path}: label {labels.max()} outside [0, {n_classes})")
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return flat, labels


# ----------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------
def load_csv(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Label in the first column, raw features after it; a non-numeric header row is skipped.

    Raises:
        DataError: If the file is missing, empty or not numeric
    """
    try:
        lines = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read CSV file {path}: {exc.strerror or exc}") from None
    if lines:
        try:
            [float(cell) for cell in lines[0].split(",")]
        except ValueError:
            lines = lines[1:]
    if not lines:
        raise DataError(f"{path}: no data rows")
    try:
        table = np.array([[float(cell) for cell in line.split(",")] for line in lines], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if table.shape[1] < 2:
        raise DataError(f"{path}: need a label column and at least one feature column")
    labels = table[:, 0]
    if not np.all(labels == np.round(labels)) or labels.min() < 0:
        raise DataError(f"{path}: labels must be non-negative integers")
    return table[:, 1:], labels.astype(np.int64)


def _fit_ranges(train: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    low = train.min(axis=0)
    return low, train.max(axis=0) - low


def _apply_ranges(values: np.ndarray, low: np.ndarray, span: np.ndarray) -> np.ndarray:
    safe = np.where(span > 0, span, 1.0)
    return np.clip((values - low) / safe * (span > 0), 0.0, 1.0)


def minmax_scale(train: np.ndarray, *others: np.ndarray) -> List[np.ndarray]:
    """Scale every column to [0, 1] with training ranges; constant columns become 0"""
    low, span = _fit_ranges(train)
    return [_apply_ranges(a, low, span) for a in (train,) + others]


def _resolve(base: Path, name: Optional[str]) -> str:
    path = Path(name)
    return str(path if path.is_absolute() else base / path)


def build_stream(config: DataConfig, seed: int, data_dir: str = ".") -> TaskStream:
    """Materialise the configured stream.

    Args:
        config: Data section of the run config
        seed: Run seed (synthetic data uses its ``data`` stream)
        data_dir: Base directory for relative dataset paths

    Returns:
        TaskStream whose tasks have ``config.classes_per_task`` classes each
    """
    if config.source == Provenance.SYNTHETIC:
        return make_synthetic_stream(config.n_tasks, config.classes_per_task, config.dim, config.separation, seed,
                                     config.noise_std, config.samples_per_class, config.test_samples_per_class)
    base = Path(data_dir)
    n_classes = config.n_tasks * config.classes_per_task
    if config.source == Provenance.IDX:
        train_x, train_y = load_idx(_resolve(base, config.train_images), _resolve(base, config.train_labels), n_classes)
        test_x, test_y = load_idx(_resolve(base, config.test_images), _resolve(base, config.test_labels), n_classes)
    else:
        train_x, train_y = load_csv(_resolve(base, config.train_csv))
        test_x, test_y = load_csv(_resolve(base, config.test_csv))
        if test_x.shape[1] != train_x.shape[1]:
            raise DataError(f"CSV feature counts differ: train {train_x.shape[1]}, test {test_x.shape[1]}")
        train_x, test_x = minmax_scale(train_x, test_x)
    stream = split_dataset(train_x, train_y, config.n_tasks, test_x, test_y, config.source)
    for task in stream.tasks:
        if len(task.classes) != config.classes_per_task:
            raise ConfigError(f"task {task.task_id} has {len(task.classes)} classes, config expects "
                              f"{config.classes_per_task}")
    logger.info(f"Loaded {config.source.value} stream: {len(stream)} tasks, {train_x.shape[0]} training samples")
    return stream

"""Prioritised episodic replay.

Each finished task keeps at most B stored samples in its own ring buffer.
Sampling draws across the whole buffer with probability proportional to
``priority ** alpha``; a replayed sample's priority becomes its latest
loss plus a small epsilon.
"""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DataError, ParameterError, ProtocolError

logger = logging.getLogger(__name__)

DEFAULT_PRIORITY_EPSILON = 1e-3


@dataclass
class ReplayItem:
    """One stored training sample"""
    inputs: np.ndarray
    label: int
    task_id: int
    priority: float
    last_loss: float = 0.0


class ReplayBuffer:
    """Per-task ring buffers with proportional prioritised sampling"""

    def __init__(self, capacity_per_task: int, priority_exponent: float = 0.6,
                 epsilon: float = DEFAULT_PRIORITY_EPSILON, rng: Optional[np.random.Generator] = None):
        """Create an empty buffer.

        Args:
            capacity_per_task: Ring size B per task (0 disables replay)
            priority_exponent: alpha_PER; 0 gives uniform sampling
            epsilon: Added to |loss| when priorities are refreshed
            rng: The run's ``sampling`` stream
        """
        if capacity_per_task < 0:
            raise ParameterError(f"buffer capacity must be >= 0, got {capacity_per_task}")
        if priority_exponent < 0:
            raise ParameterError(f"priority exponent must be >= 0, got {priority_exponent}")
        self.capacity_per_task = capacity_per_task
        self.priority_exponent = priority_exponent
        self.epsilon = epsilon
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._tasks: Dict[int, Deque[ReplayItem]] = {}

    def __len__(self) -> int:
        return sum(len(ring) for ring in self._tasks.values())

    def __iter__(self) -> Iterator[ReplayItem]:
        for task_id in sorted(self._tasks):
            yield from self._tasks[task_id]

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    def task_ids(self) -> List[int]:
        return sorted(self._tasks)

    def task_count(self, task_id: int) -> int:
        return len(self._tasks.get(task_id, ()))

    def add(self, item: ReplayItem) -> None:
        """Append to the item's task ring; the oldest entry drops when full"""
        if self.capacity_per_task == 0:
            return
        if item.priority <= 0:
            raise DataError(f"replay priority must be > 0, got {item.priority}")
        ring = self._tasks.setdefault(item.task_id, deque(maxlen=self.capacity_per_task))
        ring.append(item)

    def items(self) -> List[ReplayItem]:
        return list(self)

    def probabilities(self) -> np.ndarray:
        """Sampling distribution over :meth:`items` order"""
        priorities = np.array([item.priority for item in self], dtype=np.float64)
        if priorities.size == 0:
            return priorities
        scaled = priorities ** self.priority_exponent
        return scaled / scaled.sum()

    def sample(self, n: int) -> Tuple[np.ndarray, List[ReplayItem]]:
        """Draw ``n`` distinct items by priority.

        Returns:
            Tuple of (indices into :meth:`items`, items); the whole buffer
            when ``n`` is at least its size
        """
        items = self.items()
        if n <= 0 or not items:
            return np.zeros(0, dtype=np.int64), []
        if n >= len(items):
            indices = np.arange(len(items))
        else:
            indices = self.rng.choice(len(items), size=n, replace=False, p=self.probabilities())
        return indices, [items[i] for i in indices]

    def update_priorities(self, indices: Sequence[int], losses: Sequence[float]) -> None:
        """``priority <- |loss| + epsilon`` for sampled items"""
        items = self.items()
        for index, loss in zip(indices, losses):
            item = items[int(index)]
            item.last_loss = float(loss)
            item.priority = abs(float(loss)) + self.epsilon

    @staticmethod
    def stack(items: Sequence[ReplayItem]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(inputs, labels, task ids) arrays of a sampled batch"""
        if not items:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        inputs = np.stack([item.inputs for item in items])
        labels = np.array([item.label for item in items], dtype=np.int64)
        task_ids = np.array([item.task_id for item in items], dtype=np.int64)
        return inputs, labels, task_ids


def reservoir_indices(n_items: int, capacity: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of ``min(capacity, n_items)`` indices, streaming reservoir style"""
    reservoir: List[int] = []
    for index in range(n_items):
        if index < capacity:
            reservoir.append(index)
            continue
        slot = int(rng.integers(0, index + 1))
        if slot < capacity:
            reservoir[slot] = index
    return np.sort(np.asarray(reservoir, dtype=np.int64))


def populate_buffer(buffer: ReplayBuffer, inputs: np.ndarray, labels: np.ndarray, task_id: int,
                    losses: Optional[np.ndarray] = None) -> ReplayBuffer:
    """Store a finished task's reservoir sample.

    Args:
        buffer: Buffer to fill (its rng drives the reservoir)
        inputs: (n, d) task training inputs
        labels: (n,) local labels
        task_id: The finished task
        losses: Final-epoch per-sample loss; initial priority is loss + epsilon

    Returns:
        The same buffer

    Raises:
        ProtocolError: If the task already has stored samples
    """
    if buffer.task_count(task_id):
        raise ProtocolError(f"task {task_id} was already written to the replay buffer")
    inputs = np.asarray(inputs)
    labels = np.asarray(labels, dtype=np.int64)
    losses = np.zeros(labels.size) if losses is None else np.asarray(losses, dtype=np.float64)
    chosen = reservoir_indices(labels.size, buffer.capacity_per_task, buffer.rng)
    for index in chosen:
        loss = float(losses[index])
        buffer.add(ReplayItem(inputs=inputs[index].copy(), label=int(labels[index]), task_id=task_id,
                              priority=abs(loss) + buffer.epsilon, last_loss=loss))
    logger.info(f"Replay buffer: stored {chosen.size} samples of task {task_id} ({len(buffer)} total)")
    return buffer


def sample_replay(buffer: ReplayBuffer, n: int) -> Tuple[np.ndarray, List[ReplayItem]]:
    """Prioritised draw of ``n`` distinct items (the whole buffer if smaller)"""
    return buffer.sample(n)

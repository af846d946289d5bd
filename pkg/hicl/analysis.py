"""Diagnostics on a trained model: code overlap, prototype geometry, routing.

Every analysis reads only held-out data and draws its samples from the
run seed's ``analysis`` stream, so repeated calls give identical output.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from .data import TaskStream
from .model import HiclModel
from .models import GateMode
from .reporting import csv_text, matrix_csv
from .router import cosine_similarity
from .utils import jaccard, rng_stream

logger = logging.getLogger(__name__)

DEFAULT_PAIRS = 200


@dataclass
class JaccardReport:
    """Mean active-set Jaccard within and across tasks"""
    intra: float
    inter: float
    matrix: np.ndarray

    @property
    def gap(self) -> float:
        return self.intra - self.inter

    def to_csv(self) -> str:
        return matrix_csv(self.matrix, row_label="task", col_prefix="task")

    def summary_csv(self) -> str:
        return csv_text(["intra", "inter", "gap"],
                        [{"intra": repr(self.intra), "inter": repr(self.inter), "gap": repr(self.gap)}])


@dataclass
class PrototypeMatrix:
    """Pairwise prototype cosines; cold experts give zero rows and columns"""
    matrix: np.ndarray
    cold: np.ndarray

    @property
    def max_off_diagonal(self) -> float:
        n = self.matrix.shape[0]
        if n < 2:
            return 0.0
        return float(np.max(self.matrix[~np.eye(n, dtype=bool)]))

    def to_csv(self) -> str:
        return matrix_csv(self.matrix, row_label="expert", col_prefix="expert")


@dataclass
class RoutingMatrix:
    """Hard-gate expert histogram per task"""
    counts: np.ndarray

    @property
    def normalized(self) -> np.ndarray:
        totals = self.counts.sum(axis=1, keepdims=True)
        return self.counts / np.where(totals > 0, totals, 1)

    def diagonal_mass(self, expert_of_task: List[int]) -> np.ndarray:
        rows = np.arange(self.counts.shape[0])
        return self.normalized[rows, expert_of_task]

    def to_csv(self, normalized: bool = False) -> str:
        matrix = self.normalized if normalized else self.counts.astype(np.float64)
        return matrix_csv(matrix, row_label="task", col_prefix="expert")


def jaccard_analysis(model: HiclModel, stream: TaskStream, seed: int = 0, pairs: int = DEFAULT_PAIRS) -> JaccardReport:
    """Active-set overlap of DG codes.

    Cell (a, b) compares codes produced by task a's expert for a task-a
    sample and a task-b sample, averaged over ``pairs`` seeded draws.
    Diagonal cells never pair a sample with itself when the task has
    more than one sample.
    """
    rng = rng_stream(seed, "analysis")
    seen = [task for task in stream.tasks if task.task_id in model.task_classes and task.n_test > 0]
    sets: Dict[int, List[List[frozenset]]] = {}
    for task in seen:
        codes = model.dg_codes(task.test_inputs)
        sets[task.task_id] = [code.active_sets() for code in codes]
    n = len(seen)
    matrix = np.zeros((n, n))
    for row, task_a in enumerate(seen):
        expert = model.expert_for_task(task_a.task_id)
        left = sets[task_a.task_id][expert]
        for col, task_b in enumerate(seen):
            right = sets[task_b.task_id][expert]
            first = rng.integers(0, len(left), size=pairs)
            second = rng.integers(0, len(right), size=pairs)
            if row == col and len(right) > 1:
                clash = first == second
                second[clash] = (second[clash] + 1 + rng.integers(0, len(right) - 1, size=int(clash.sum()))) % len(right)
            matrix[row, col] = float(np.mean([jaccard(left[i], right[j]) for i, j in zip(first, second)]))
    diagonal = np.diag(matrix) if n else np.zeros(0)
    off = matrix[~np.eye(n, dtype=bool)] if n > 1 else np.zeros(0)
    intra = float(diagonal.mean()) if diagonal.size else 0.0
    inter = float(off.mean()) if off.size else 0.0
    logger.info(f"Jaccard analysis: intra {intra:.3f}, inter {inter:.3f}")
    return JaccardReport(intra=intra, inter=inter, matrix=matrix)


def prototype_similarity_matrix(model: HiclModel) -> PrototypeMatrix:
    """``M[i][j] = cos(u_i, u_j)``; diagonal is 1 for every non-zero prototype"""
    n = model.n_experts
    cold = np.array([p.is_cold or not np.any(p.vector) for p in model.prototypes], dtype=bool)
    matrix = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if cold[i] or cold[j]:
                continue
            matrix[i, j] = 1.0 if i == j else cosine_similarity(model.prototypes[i].vector, model.prototypes[j].vector)
    if cold.any():
        logger.warning(f"⚠️ Cold prototypes {np.flatnonzero(cold).tolist()} reported as zero rows")
    return PrototypeMatrix(matrix=matrix, cold=cold)


def routing_matrix(model: HiclModel, stream: TaskStream) -> RoutingMatrix:
    """Counts of hard-gate selections, tasks x experts, over seen tasks"""
    seen = [task for task in stream.tasks if task.task_id in model.task_classes]
    counts = np.zeros((len(seen), model.n_experts), dtype=np.int64)
    for row, task in enumerate(seen):
        if task.n_test == 0:
            continue
        decision = model.route(task.test_inputs, GateMode.HARD)
        counts[row] = np.bincount(decision.top_expert, minlength=model.n_experts)
    return RoutingMatrix(counts=counts)

"""Prototype maintenance and cosine gating for the DG-gated mixture of experts.

Each expert i keeps a prototype u_i, the EMA of its own DG codes. At
inference every expert encodes the input, ``s_i = cos(p_sep^(i), u_i)`` is
computed per expert, and the similarities become gate weights under one of
four modes.
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .encoder import DgCode
from .exceptions import DimensionError, ParameterError, RoutingError
from .models import GateMode
from .tensor import COSINE_EPS, cosine_rows, no_grad

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.1
DEFAULT_EMA_RATE = 0.01


@dataclass(frozen=True)
class Prototype:
    """EMA of one expert's DG codes; cold until the first update"""
    expert_id: int
    vector: np.ndarray
    update_count: int = 0
    ema_rate: float = DEFAULT_EMA_RATE

    @classmethod
    def cold(cls, expert_id: int, dim: int, ema_rate: float = DEFAULT_EMA_RATE) -> "Prototype":
        return cls(expert_id=expert_id, vector=np.zeros(dim), update_count=0, ema_rate=ema_rate)

    @property
    def is_cold(self) -> bool:
        return self.update_count == 0


@dataclass
class GateDecision:
    """Gate output for a batch.

    ``similarities`` and ``weights`` have shape (B, N); ``selected`` lists
    the experts with non-zero weight per row. ``executed`` marks which
    expert pipelines actually ran (filled by the forward pass).
    """
    similarities: np.ndarray
    weights: np.ndarray
    mode: GateMode
    selected: List[Tuple[int, ...]]
    executed: Optional[np.ndarray] = None

    @property
    def top_expert(self) -> np.ndarray:
        """Highest-weight expert per row, lowest id on ties"""
        return np.argmax(self.weights, axis=1)


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine of two vectors; 0 when either norm is below 1e-12.

    Raises:
        DimensionError: If the lengths differ
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"cosine_similarity length mismatch: {a.size} vs {b.size}")
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a < COSINE_EPS or norm_b < COSINE_EPS:
        return 0.0
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def update_prototype(prototype: Prototype, code: Union[DgCode, np.ndarray]) -> Prototype:
    """``u <- (1 - mu) u + mu * code``; a batch of codes contributes its mean.

    Raises:
        DimensionError: If the code length differs from the prototype
    """
    if isinstance(code, DgCode):
        code = code.values.data
    code = np.asarray(code, dtype=np.float64)
    if code.ndim == 2:
        code = code.mean(axis=0)
    if code.shape != prototype.vector.shape:
        raise DimensionError(f"prototype {prototype.expert_id}: code shape {code.shape} vs {prototype.vector.shape}")
    mu = prototype.ema_rate
    vector = (1.0 - mu) * prototype.vector + mu * code
    return replace(prototype, vector=vector, update_count=prototype.update_count + 1)


def similarity_scores(codes: Sequence[DgCode], prototypes: Sequence[Prototype]) -> np.ndarray:
    """(B, N) matrix of s_i = cos(p_sep^(i), u_i), each expert against its own prototype"""
    if len(codes) != len(prototypes):
        raise DimensionError(f"{len(codes)} expert codes for {len(prototypes)} prototypes")
    with no_grad():
        columns = [cosine_rows(code.values.data, proto.vector).data for code, proto in zip(codes, prototypes)]
    return np.stack(columns, axis=1)


def _softmax(values: np.ndarray, temperature: float) -> np.ndarray:
    shifted = (values - values.max()) / temperature
    expo = np.exp(shifted)
    return expo / expo.sum()


def _ranked(row: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    # descending by similarity, lowest expert id first on ties
    order = np.argsort(-row[candidates], kind="stable")
    return candidates[order]


def gate_weights(similarities: np.ndarray, mode: Union[GateMode, str], temperature: float = DEFAULT_TEMPERATURE,
                 warm: Optional[np.ndarray] = None, hybrid_k: int = 2) -> GateDecision:
    """Turn (B, N) similarities into gate weights.

    Cold experts (``warm`` False) always get weight 0.

    Args:
        similarities: s_i per row and expert
        mode: soft, hard, top2 or hybrid
        temperature: Softmax temperature for soft/hybrid (and top-2 fallback)
        warm: Boolean mask over experts; defaults to all warm
        hybrid_k: Similarities kept by hybrid mode

    Returns:
        GateDecision with weights on the probability simplex

    Raises:
        ParameterError: If temperature is not positive
        RoutingError: If no expert is warm
    """
    mode = GateMode(mode)
    if not np.isfinite(temperature) or temperature <= 0:
        raise ParameterError(f"gate temperature must be > 0, got {temperature}")
    similarities = np.atleast_2d(np.asarray(similarities, dtype=np.float64))
    n_rows, n_experts = similarities.shape
    warm = np.ones(n_experts, dtype=bool) if warm is None else np.asarray(warm, dtype=bool)
    candidates = np.flatnonzero(warm)
    if candidates.size == 0:
        raise RoutingError("every prototype is cold; route only after at least one expert has trained")
    weights = np.zeros_like(similarities)
    for r in range(n_rows):
        row = similarities[r]
        ranked = _ranked(row, candidates)
        if mode == GateMode.HARD:
            weights[r, ranked[0]] = 1.0
        elif mode == GateMode.SOFT:
            weights[r, candidates] = _softmax(row[candidates], temperature)
        elif mode == GateMode.TOP2:
            best = ranked[:2]
            if best.size == 1:
                weights[r, best[0]] = 1.0
            elif np.all(row[best] > 0):
                weights[r, best] = row[best] / row[best].sum()
            else:
                weights[r, best] = _softmax(row[best], temperature)
        else:
            best = ranked[:hybrid_k]
            weights[r, best] = _softmax(row[best], temperature)
    selected = [tuple(int(i) for i in np.flatnonzero(w > 0)) for w in weights]
    return GateDecision(similarities=similarities, weights=weights, mode=mode, selected=selected)


def gate(codes: Sequence[DgCode], prototypes: Sequence[Prototype], mode: Union[GateMode, str],
         temperature: float = DEFAULT_TEMPERATURE, hybrid_k: int = 2) -> GateDecision:
    """Score each expert's own code against its own prototype, then gate"""
    warm = np.array([not p.is_cold for p in prototypes], dtype=bool)
    return gate_weights(similarity_scores(codes, prototypes), mode, temperature, warm, hybrid_k)


def forced_decision(similarities: np.ndarray, expert_id: int, mode: Union[GateMode, str]) -> GateDecision:
    """All weight on one expert (training-time routing and Task-IL evaluation)"""
    similarities = np.atleast_2d(similarities)
    weights = np.zeros_like(similarities)
    weights[:, expert_id] = 1.0
    return GateDecision(similarities=similarities, weights=weights, mode=GateMode(mode),
                        selected=[(expert_id,)] * similarities.shape[0])


def routed_fraction(selected: np.ndarray, expected: np.ndarray) -> float:
    """Share of rows whose selected expert equals the expected one"""
    selected = np.asarray(selected)
    if selected.size == 0:
        return 0.0
    return float(np.mean(selected == np.asarray(expected)))


def routing_accuracy(stream, model) -> float:
    """Fraction of held-out samples whose hard-gate expert is their task's expert.

    Args:
        stream: TaskStream with task ids
        model: Trained HiclModel

    Returns:
        Fraction in [0, 1] over all tasks the model has seen
    """
    hits, total = 0, 0
    for task in stream.tasks:
        if task.task_id not in model.task_classes:
            continue
        inputs = task.test_inputs
        decision = model.route(inputs, GateMode.HARD)
        expected = model.expert_for_task(task.task_id)
        hits += int(np.sum(decision.top_expert == expected))
        total += inputs.shape[0]
    return hits / total if total else 0.0

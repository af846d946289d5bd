"""Training objectives.

Phase I combines classification with push-pull code geometry, replay,
feature distillation, similarity-weighted EWC and a sparsity target.
Phase II is a prototype contrastive loss evaluated with only DG
parameters trainable. Every loss returns a scalar :class:`Tensor` on the
caller's tape.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import CheckpointError, DimensionError, RoutingError
from .models import CrossForm, LossWeights
from .router import Prototype, cosine_similarity
from .tensor import (Tensor, absolute, as_tensor, cosine_rows, cross_entropy, pairwise_sq_dist, relu, safe_sqrt,
                     scale, sigmoid, square, tensor_mean, tensor_sum)

logger = logging.getLogger(__name__)

Term = Union[Tensor, float]


def _zero() -> Tensor:
    return Tensor(0.0)


# ----------------------------------------------------------------------
# Phase I terms
# ----------------------------------------------------------------------
def loss_cls(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over the batch"""
    return cross_entropy(logits, labels, reduction="mean")


def loss_intra(codes: Tensor, labels: np.ndarray, lambda_push: float = 1.0, margin: float = 1.0) -> Tensor:
    """Push-pull geometry of a batch of DG codes.

    Sums squared distances of same-label pairs and subtracts the
    ``lambda_push``-weighted squared hinge ``max(0, m - d)^2`` of
    different-label pairs. Each unordered pair i < j counts once.

    Args:
        codes: (B, d) DG codes of the batch
        labels: (B,) labels
        lambda_push: Weight of the hinge term
        margin: Hinge margin on the Euclidean distance

    Returns:
        Scalar; may be negative when different-label codes sit inside the margin
    """
    codes = as_tensor(codes)
    labels = np.asarray(labels)
    if codes.ndim != 2 or labels.shape != (codes.shape[0],):
        raise DimensionError(f"loss_intra expects (B, d) codes and (B,) labels, got {codes.shape}, {labels.shape}")
    if codes.shape[0] < 2:
        return _zero()
    upper = np.triu(np.ones((labels.size, labels.size), dtype=bool), k=1)
    same = labels[:, None] == labels[None, :]
    pull_mask = (upper & same).astype(np.float64)
    push_mask = (upper & ~same).astype(np.float64)
    dist_sq = pairwise_sq_dist(codes)
    pull = tensor_sum(dist_sq * pull_mask)
    hinge = square(relu(margin - safe_sqrt(dist_sq)))
    push = tensor_sum(hinge * push_mask)
    return pull - scale(push, lambda_push)


def loss_replay(model, inputs: np.ndarray, labels: np.ndarray, task_ids: np.ndarray) -> Tuple[Tensor, np.ndarray]:
    """Cross-entropy on replayed samples, each routed through its task's expert.

    Args:
        model: HiclModel
        inputs: (n, input_dim) stored inputs
        labels: (n,) stored local labels
        task_ids: (n,) stored task ids

    Returns:
        Tuple of (mean loss, per-sample losses in input order); an empty
        batch gives (0, empty array)
    """
    labels = np.asarray(labels, dtype=np.int64)
    task_ids = np.asarray(task_ids, dtype=np.int64)
    n = labels.size
    if n == 0:
        return _zero(), np.zeros(0)
    experts = np.array([model.expert_for_task(int(t)) for t in task_ids])
    per_sample = np.zeros(n)
    total: Optional[Tensor] = None
    for expert_id in np.unique(experts):
        rows = np.flatnonzero(experts == expert_id)
        logits, _, _ = model.forward_expert(np.asarray(inputs)[rows], int(expert_id))
        losses = cross_entropy(logits, labels[rows], reduction="none")
        per_sample[rows] = losses.data
        group = tensor_sum(losses)
        total = group if total is None else total + group
    return scale(total, 1.0 / n), per_sample


def loss_distill(features: Tensor, snapshot_features: Optional[Union[Tensor, np.ndarray]]) -> Tensor:
    """MSE between current backbone features and the frozen snapshot's.

    The snapshot side is a constant; no gradient reaches it. Without a
    snapshot (first task) the loss is 0.
    """
    if snapshot_features is None:
        return _zero()
    target = snapshot_features.data if isinstance(snapshot_features, Tensor) else np.asarray(snapshot_features)
    features = as_tensor(features)
    if target.shape != features.shape:
        raise DimensionError(f"distillation shapes differ: {features.shape} vs {target.shape}")
    return tensor_mean(square(features - target))


def loss_sparsity(pre_topk: Tensor, rho: float, temperature: float = 0.01) -> Tensor:
    """``|mean(sigmoid(z / eps_s)) - rho|``, a smooth active-fraction target"""
    return absolute(tensor_mean(sigmoid(scale(pre_topk, 1.0 / temperature))) - rho)


# ----------------------------------------------------------------------
# EWC
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class FisherInfo:
    """Diagonal Fisher and parameter anchors frozen at the end of a task"""
    task_id: int
    fisher: Dict[str, np.ndarray]
    anchors: Dict[str, np.ndarray]
    prototype: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def similarity_weight(self, current_prototype: Optional[np.ndarray], floor: float = 0.05) -> float:
        """``max(0, cos(u_current, u_t)) + floor``"""
        if current_prototype is None or self.prototype.size == 0:
            return 1.0 + floor
        return max(0.0, cosine_similarity(current_prototype, self.prototype)) + floor


def estimate_fisher(model, inputs: np.ndarray, labels: np.ndarray, expert_id: int, task_id: int) -> FisherInfo:
    """Empirical diagonal Fisher: mean squared per-sample cross-entropy gradient.

    Covers the backbone and the task's expert, the parameters its
    classification loss reaches.

    Args:
        model: HiclModel with every parameter trainable
        inputs: Trailing training samples of the task
        labels: Their local labels
        expert_id: Expert the task trained
        task_id: Task the anchors belong to

    Returns:
        FisherInfo with copies of the current parameter values as anchors
    """
    params = dict(model.backbone.named_parameters("backbone."))
    params.update(model.expert_parameters(expert_id))
    squared = {name: np.zeros_like(t.data) for name, t in params.items()}
    inputs = np.asarray(inputs)
    labels = np.asarray(labels, dtype=np.int64)
    for row in range(labels.size):
        for tensor in params.values():
            tensor.zero_grad()
        logits, _, _ = model.forward_expert(inputs[row:row + 1], expert_id)
        loss_cls(logits, labels[row:row + 1]).backward()
        for name, tensor in params.items():
            squared[name] += tensor.grad * tensor.grad
    count = max(labels.size, 1)
    for tensor in params.values():
        tensor.zero_grad()
    return FisherInfo(
        task_id=task_id,
        fisher={name: value / count for name, value in squared.items()},
        anchors={name: t.data.copy() for name, t in params.items()},
        prototype=model.prototypes[expert_id].vector.copy(),
    )


def loss_ewc(params: Mapping[str, Tensor], fisher_set: Sequence[FisherInfo],
             task_weights: Optional[Sequence[float]] = None) -> Tensor:
    """``sum_t w_t sum_j F_tj (theta_j - theta*_tj)^2``.

    Args:
        params: Live parameters by name
        fisher_set: One FisherInfo per finished task
        task_weights: w_t per entry of ``fisher_set``; defaults to 1

    Raises:
        CheckpointError: If an anchor has no live parameter or shapes differ
    """
    if not fisher_set:
        return _zero()
    if task_weights is None:
        task_weights = [1.0] * len(fisher_set)
    total: Optional[Tensor] = None
    for info, weight in zip(fisher_set, task_weights):
        for name, anchor in info.anchors.items():
            if name not in params:
                raise CheckpointError(f"EWC anchor {name!r} of task {info.task_id} has no live parameter")
            live = params[name]
            if live.shape != anchor.shape:
                raise CheckpointError(f"EWC anchor {name!r}: shape {anchor.shape} vs parameter {live.shape}")
            term = scale(tensor_sum(square(live - anchor) * info.fisher[name]), weight)
            total = term if total is None else total + term
    return total if total is not None else _zero()


# ----------------------------------------------------------------------
# Phase II
# ----------------------------------------------------------------------
def loss_contrastive_phase2(codes: Sequence[Tensor], prototypes: Sequence[Prototype],
                            own_expert: Union[int, np.ndarray], margin: float = 0.2,
                            active: Optional[Sequence[bool]] = None,
                            cross_form: Union[CrossForm, str] = CrossForm.AS_WRITTEN) -> Tensor:
    """Prototype alignment for the own expert, hinge suppression for the others.

    Per sample with own expert t the loss is
    ``(1 - cos(p^(t), u_t)) + sum_{j != t} max(0, cos(p^(j), u_j) - m)``,
    averaged over the batch. ``current_code`` replaces ``p^(j)`` in the
    off-expert terms by the sample's own code ``p^(t)``.

    Args:
        codes: Per-expert (B, d) DG code tensors
        prototypes: Per-expert prototypes, used as constants
        own_expert: Expert of each sample (scalar or (B,))
        margin: Hinge margin m
        active: Experts that take part (seen tasks); defaults to all
        cross_form: ``as_written`` or ``current_code``

    Raises:
        RoutingError: If a participating prototype is cold
    """
    cross_form = CrossForm(cross_form)
    n_experts = len(codes)
    if len(prototypes) != n_experts:
        raise DimensionError(f"{n_experts} code tensors for {len(prototypes)} prototypes")
    n_rows = codes[0].shape[0]
    own = np.broadcast_to(np.asarray(own_expert, dtype=np.int64), (n_rows,))
    active = np.ones(n_experts, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    active = active.copy()
    active[np.unique(own)] = True
    for j in np.flatnonzero(active):
        if prototypes[j].is_cold:
            raise RoutingError(f"prototype {j} is cold; consolidation needs warm prototypes for every seen task")
    own_mask = own[:, None] == np.arange(n_experts)[None, :]
    off_mask = ~own_mask & active[None, :]

    if cross_form == CrossForm.CURRENT_CODE:
        own_code: Optional[Tensor] = None
        for j in np.unique(own):
            part = codes[j] * own_mask[:, j:j + 1].astype(np.float64)
            own_code = part if own_code is None else own_code + part
        compared = [own_code] * n_experts
    else:
        compared = list(codes)

    total: Optional[Tensor] = None
    for j in np.flatnonzero(active):
        sim = cosine_rows(compared[j], prototypes[j].vector)
        term = (1.0 - sim) * own_mask[:, j].astype(np.float64) + relu(sim - margin) * off_mask[:, j].astype(np.float64)
        total = term if total is None else total + term
    return tensor_mean(total)


# ----------------------------------------------------------------------
# Composition
# ----------------------------------------------------------------------
def _weighted(pairs: Sequence[Tuple[float, Optional[Term]]]) -> Tensor:
    total: Tensor = _zero()
    for weight, term in pairs:
        if term is None:
            continue
        total = total + scale(as_tensor(term), weight)
    return total


def compose_phase1(weights: LossWeights, terms: Mapping[str, Term]) -> Tensor:
    """``cls + a_intra intra + a_rep replay + a_dist distill + a_ewc ewc + a_s sparsity``"""
    return _weighted([
        (1.0, terms.get("cls")),
        (weights.alpha_intra, terms.get("intra")),
        (weights.alpha_rep, terms.get("replay")),
        (weights.alpha_dist, terms.get("distill")),
        (weights.alpha_ewc, terms.get("ewc")),
        (weights.alpha_s, terms.get("sparsity")),
    ])


def compose_phase2(weights: LossWeights, contrastive: Term) -> Tensor:
    return _weighted([(weights.alpha_contrastive, contrastive)])


def compose_full(weights: LossWeights, phase1: Optional[Term] = None, phase2: Optional[Term] = None,
                 ewc: Optional[Term] = None, replay: Optional[Term] = None) -> Tensor:
    """``l1 phase1 + l2 phase2 + l3 ewc + l4 replay``.

    l3 and l4 count only with ``strict_paper_objective``; otherwise EWC
    and replay enter through phase1 alone.
    """
    return _weighted([
        (weights.lambda1, phase1),
        (weights.lambda2, phase2),
        (weights.effective_lambda3, ewc),
        (weights.effective_lambda4, replay),
    ])


def term_values(terms: Mapping[str, Optional[Term]]) -> Dict[str, float]:
    """Plain floats for the training log"""
    out: Dict[str, float] = {}
    for name, term in terms.items():
        if term is None:
            continue
        out[name] = term.item() if isinstance(term, Tensor) else float(term)
    return out

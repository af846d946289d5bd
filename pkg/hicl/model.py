"""Mixture of hippocampal experts behind a shared backbone.

:class:`HiclModel` owns the backbone, N experts and their prototypes, and
the bookkeeping that maps tasks to experts and local labels to global
classes.
"""

import copy
import logging
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .encoder import Backbone, DgCode, HippocampalExpert, is_dg_parameter
from .exceptions import CheckpointError, ProtocolError, RoutingError
from .models import GateMode, ModelConfig
from .router import GateDecision, Prototype, forced_decision, gate_weights, similarity_scores, update_prototype
from .tensor import Tensor, as_tensor, no_grad, place_rows, take_rows
from .utils import fingerprint, task_expert

logger = logging.getLogger(__name__)


class HiclModel:
    """Shared backbone, N experts, N prototypes"""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        """Initialise every parameter from one generator.

        Args:
            config: Architecture and gating settings
            rng: The run's ``init`` stream
        """
        self.config = config
        encoder = config.encoder
        self.backbone = Backbone(encoder.input_dim, encoder.backbone_widths, rng)
        self.experts: List[HippocampalExpert] = [HippocampalExpert(encoder, rng) for _ in range(config.n_experts)]
        self.prototypes: List[Prototype] = [
            Prototype.cold(i, encoder.dg_dim, config.gating.ema_rate) for i in range(config.n_experts)
        ]
        # task id -> ascending global class ids; key order is arrival order
        self.task_classes: Dict[int, List[int]] = {}

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    # ------------------------------------------------------------------
    # Task bookkeeping
    # ------------------------------------------------------------------
    def assign_task(self, task_id: int, classes: Sequence[int]) -> int:
        """Register the next task and return the expert it trains.

        Raises:
            ProtocolError: If ``task_id`` is not the next task in order
        """
        expected = len(self.task_classes)
        if task_id != expected:
            raise ProtocolError(f"tasks must arrive in order: expected task {expected}, got {task_id}")
        self.task_classes[task_id] = [int(c) for c in classes]
        return self.expert_for_task(task_id)

    def expert_for_task(self, task_id: int) -> int:
        return task_expert(task_id, self.n_experts)

    def expert_task(self, expert_id: int) -> Optional[int]:
        """Most recent seen task trained into an expert"""
        owned = [t for t in self.task_classes if self.expert_for_task(t) == expert_id]
        return max(owned) if owned else None

    @property
    def warm_mask(self) -> np.ndarray:
        return np.array([not p.is_cold for p in self.prototypes], dtype=bool)

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------
    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        yield from self.backbone.named_parameters("backbone.")
        for index, expert in enumerate(self.experts):
            yield from expert.named_parameters(f"expert.{index}.")

    def expert_parameters(self, expert_id: int) -> Iterator[Tuple[str, Tensor]]:
        yield from self.experts[expert_id].named_parameters(f"expert.{expert_id}.")

    def freeze_non_dg(self) -> None:
        """Leave only DG weights, biases and LayerNorm affine trainable"""
        for name, tensor in self.named_parameters():
            tensor.set_requires_grad(is_dg_parameter(name))

    def unfreeze_all(self) -> None:
        for _, tensor in self.named_parameters():
            tensor.set_requires_grad(True)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        """Copy values into the live parameters.

        Raises:
            CheckpointError: If names or shapes do not match this model
        """
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise CheckpointError(f"parameter names differ: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, tensor in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise CheckpointError(f"{name}: stored shape {value.shape}, model shape {tensor.shape}")
            tensor.data[...] = value

    def parameter_hash(self, dg_only: Optional[bool] = None) -> str:
        """Fingerprint of all, only DG (True) or only non-DG (False) parameters"""
        state = self.state_dict()
        if dg_only is not None:
            state = {k: v for k, v in state.items() if is_dg_parameter(k) == dg_only}
        return fingerprint(state)

    def snapshot_backbone(self) -> Backbone:
        """Frozen deep copy of the backbone for feature distillation"""
        snapshot = copy.deepcopy(self.backbone)
        for _, tensor in snapshot.named_parameters():
            tensor.set_requires_grad(False)
        return snapshot

    # ------------------------------------------------------------------
    # Prototypes
    # ------------------------------------------------------------------
    def update_expert_prototype(self, expert_id: int, code: Union[DgCode, np.ndarray]) -> Prototype:
        self.prototypes[expert_id] = update_prototype(self.prototypes[expert_id], code)
        return self.prototypes[expert_id]

    # ------------------------------------------------------------------
    # Forward passes
    # ------------------------------------------------------------------
    def backbone_features(self, x) -> Tensor:
        return self.backbone(x)

    def routing_codes(self, features: Tensor) -> List[DgCode]:
        """DG code of every expert; all N run regardless of gating"""
        return [expert.routing_code(features) for expert in self.experts]

    def dg_codes(self, x) -> List[DgCode]:
        """No-grad routing codes for raw inputs"""
        with no_grad():
            return self.routing_codes(self.backbone_features(x))

    def _decide(self, codes: Sequence[DgCode], mode: GateMode, force_expert: Optional[int]) -> GateDecision:
        similarities = similarity_scores(codes, self.prototypes)
        if force_expert is not None:
            return forced_decision(similarities, force_expert, mode)
        gating = self.config.gating
        return gate_weights(similarities, mode, gating.temperature, self.warm_mask, gating.hybrid_k)

    def route(self, x, mode: Optional[Union[GateMode, str]] = None) -> GateDecision:
        """Gate decision only (no expert completion)

        Raises:
            RoutingError: If every prototype is cold
        """
        mode = GateMode(mode or self.config.gating.mode)
        return self._decide(self.dg_codes(x), mode, None)

    def moe_forward(self, x, mode: Optional[Union[GateMode, str]] = None, conditional: bool = True,
                    force_expert: Optional[int] = None) -> Tuple[Tensor, GateDecision]:
        """Route a batch and aggregate expert logits with the gate weights.

        Args:
            x: (B, input_dim) inputs
            mode: Gating mode; defaults to the configured one
            conditional: Run CA3/CA1/head only for rows where an expert has
                non-zero weight. With False every expert completes every row.
            force_expert: Put all weight on one expert (training, Task-IL)

        Returns:
            Tuple of (B, C) logits and the GateDecision; ``executed`` is a
            (B, N) mask of the expert pipelines that ran per row

        Raises:
            RoutingError: If no prototype is warm and routing is not forced
        """
        mode = GateMode(mode or self.config.gating.mode)
        features = self.backbone_features(x)
        codes = self.routing_codes(features)
        decision = self._decide(codes, mode, force_expert)
        n_rows = features.shape[0]
        executed = np.zeros(decision.weights.shape, dtype=bool)
        logits: Optional[Tensor] = None
        for expert_id, (expert, code) in enumerate(zip(self.experts, codes)):
            column = decision.weights[:, expert_id]
            rows = np.flatnonzero(column > 0) if conditional else np.arange(n_rows)
            if rows.size == 0:
                continue
            executed[rows, expert_id] = True
            partial = rows.size != n_rows
            p_sep = take_rows(code.values, rows) if partial else code.values
            contribution = expert.complete(p_sep) * Tensor(column[rows][:, None])
            if partial:
                contribution = place_rows(contribution, rows, n_rows)
            logits = contribution if logits is None else logits + contribution
        if logits is None:
            raise RoutingError("gate selected no expert")
        decision.executed = executed
        return logits, decision

    def forward_expert(self, x, expert_id: int) -> Tuple[Tensor, DgCode, Tensor]:
        """Full-batch pass through one expert.

        Returns:
            Tuple of (logits, that expert's DG code, backbone features)
        """
        features = self.backbone_features(x)
        logits, code = self.experts[expert_id].forward(features)
        return logits, code, features

    def predict(self, x, mode: Optional[Union[GateMode, str]] = None, conditional: bool = True,
                force_expert: Optional[int] = None) -> Tuple[np.ndarray, GateDecision]:
        """No-grad :meth:`moe_forward` returning plain arrays"""
        with no_grad():
            logits, decision = self.moe_forward(as_tensor(x), mode, conditional, force_expert)
        return logits.data, decision

    def predict_task_il(self, x, task_id: int) -> np.ndarray:
        """Local labels with the task identity given (forced routing)"""
        logits, _ = self.predict(x, GateMode.HARD, True, self.expert_for_task(task_id))
        return np.argmax(logits, axis=1)

    def predict_class_il(self, x) -> np.ndarray:
        """Global class ids without task identity.

        The hard gate picks an expert; its latest task's class list maps
        the local argmax to a global class.
        """
        logits, decision = self.predict(x, GateMode.HARD, True)
        local = np.argmax(logits, axis=1)
        experts = decision.top_expert
        out = np.empty(local.shape[0], dtype=np.int64)
        for row, (expert_id, label) in enumerate(zip(experts, local)):
            task_id = self.expert_task(int(expert_id))
            if task_id is None:
                raise RoutingError(f"expert {expert_id} was selected but owns no task")
            out[row] = self.task_classes[task_id][int(label)]
        return out

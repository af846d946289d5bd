"""Continual training: per-task specialisation and consolidation.

:class:`ContinualTrainer` walks a task stream in order. For every task it
runs Phase I (all parameters trainable, routing forced to the task's
expert, prototype EMA on), then Phase II (only DG parameters trainable,
prototype contrastive loss over current and replayed samples). At the
boundary it estimates the Fisher, refreshes the distillation snapshot,
fills the replay buffer and seals the task's training data.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .checkpoint import save_checkpoint
from .data import TaskData, TaskStream, build_stream
from .encoder import Backbone
from .exceptions import ConfigError, ContractError
from .flops import count_flops
from .model import HiclModel
from .models import Phase2Data, RunConfig
from .objectives import (FisherInfo, compose_full, compose_phase1, compose_phase2, estimate_fisher,
                         loss_cls, loss_contrastive_phase2, loss_distill, loss_ewc, loss_intra, loss_replay,
                         loss_sparsity, term_values)
from .optim import Adam
from .replay import ReplayBuffer, populate_buffer, sample_replay
from .reporting import EvalRecord, JsonLinesWriter, MetricsReport, StepRecord, forgetting_per_task, write_report
from .router import routing_accuracy
from .tensor import cross_entropy, no_grad
from .utils import rng_stream

logger = logging.getLogger(__name__)

StepSink = Callable[[StepRecord], None]


@dataclass
class TaskSummary:
    """What one call to :meth:`ContinualTrainer.train_task` did"""
    task_id: int
    expert_id: int
    phase1_steps: int
    phase2_steps: int
    final_phase1_loss: float
    stored_samples: int


@dataclass
class EvalResult:
    """Accuracies after one task boundary"""
    after_task: int
    task_il: Dict[int, float] = field(default_factory=dict)
    class_il: Dict[int, float] = field(default_factory=dict)
    class_il_overall: float = 0.0
    records: List[EvalRecord] = field(default_factory=list)


def evaluate_model(model: HiclModel, stream: TaskStream, after_task: int) -> EvalResult:
    """Task-IL and Class-IL accuracy on the test split of tasks ``0..after_task``.

    Task-IL routes each task to its own expert; Class-IL uses the hard
    gate with no task identity.
    """
    result = EvalResult(after_task=after_task)
    hits, total = 0, 0
    for task in stream.tasks[:after_task + 1]:
        if task.n_test == 0:
            continue
        task_il = float(np.mean(model.predict_task_il(task.test_inputs, task.task_id) == task.test_labels))
        correct = model.predict_class_il(task.test_inputs) == task.test_global_labels
        class_il = float(np.mean(correct))
        hits += int(correct.sum())
        total += task.n_test
        result.task_il[task.task_id] = task_il
        result.class_il[task.task_id] = class_il
        result.records.append(EvalRecord(after_task=after_task, task=task.task_id, task_il_accuracy=task_il,
                                         class_il_accuracy=class_il, n_samples=task.n_test))
    result.class_il_overall = hits / total if total else 0.0
    return result


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, order.size, batch_size):
        yield order[start:start + batch_size]


class ContinualTrainer:
    """Stateful trainer for one run"""

    def __init__(self, config: RunConfig, step_sink: Optional[StepSink] = None):
        """Build the model, buffer and random streams of a run.

        Args:
            config: Validated run configuration
            step_sink: Receives one StepRecord per optimisation step
        """
        self.config = config
        self.model = HiclModel(config.model, rng_stream(config.seed, "init"))
        self.rng = rng_stream(config.seed, "sampling")
        self.buffer = ReplayBuffer(config.replay.buffer_size, config.replay.priority_exponent,
                                   config.replay.priority_epsilon, self.rng)
        self.fisher_set: List[FisherInfo] = []
        self.snapshot: Optional[Backbone] = None
        self.step_sink = step_sink
        self.global_step = 0

    # ------------------------------------------------------------------
    # Helpers
    # ------------------------------------------------------------------
    def _optimizer(self) -> Adam:
        schedule = self.config.schedule
        return Adam(self.model.named_parameters(), schedule.learning_rate, schedule.beta1, schedule.beta2,
                    schedule.adam_eps)

    def _emit(self, phase: int, task_id: int, epoch: int, terms: Dict[str, float], total: float) -> None:
        self.global_step += 1
        if self.step_sink is not None:
            self.step_sink(StepRecord(phase=phase, task=task_id, epoch=epoch, step=self.global_step,
                                      terms=terms, total=total))

    @property
    def uses_replay(self) -> bool:
        weights = self.config.weights
        return weights.alpha_rep > 0 or weights.effective_lambda4 > 0

    @property
    def uses_ewc(self) -> bool:
        weights = self.config.weights
        return weights.alpha_ewc > 0 or weights.effective_lambda3 > 0

    @property
    def uses_phase2(self) -> bool:
        return self.config.weights.alpha_contrastive > 0 and self.config.weights.lambda2 > 0

    # ------------------------------------------------------------------
    # Phase I
    # ------------------------------------------------------------------
    def phase1(self, task_id: int, expert_id: int, inputs: np.ndarray, labels: np.ndarray) -> Tuple[int, float, np.ndarray]:
        """Specialisation epochs.

        Returns:
            Tuple of (steps taken, last total loss, final-epoch per-sample CE)
        """
        config = self.config
        weights, schedule = config.weights, config.schedule
        rho = config.model.encoder.sparsity_rho
        self.model.unfreeze_all()
        optimizer = self._optimizer()
        params = dict(self.model.named_parameters())
        final_losses = np.zeros(labels.size)
        steps, total_value = 0, 0.0
        for epoch in range(schedule.epochs_phase1):
            order = self.rng.permutation(labels.size)
            last_epoch = epoch == schedule.epochs_phase1 - 1
            for rows in _batches(order, schedule.batch_size):
                optimizer.zero_grad()
                xb, yb = inputs[rows], labels[rows]
                logits, code, features = self.model.forward_expert(xb, expert_id)
                terms = {"cls": loss_cls(logits, yb)}
                if weights.alpha_intra > 0:
                    terms["intra"] = loss_intra(code.values, yb, weights.lambda_push, weights.margin_intra)
                replay_rows, replay_losses = None, None
                if self.uses_replay and not self.buffer.is_empty:
                    replay_rows, items = sample_replay(self.buffer, schedule.replay_batch_size)
                    rx, ry, rt = self.buffer.stack(items)
                    terms["replay"], replay_losses = loss_replay(self.model, rx, ry, rt)
                if weights.alpha_dist > 0 and self.snapshot is not None:
                    with no_grad():
                        target = self.snapshot(xb)
                    terms["distill"] = loss_distill(features, target)
                if self.uses_ewc and self.fisher_set:
                    current = self.model.prototypes[expert_id]
                    reference = None if current.is_cold else current.vector
                    task_weights = [info.similarity_weight(reference, weights.ewc_floor) for info in self.fisher_set]
                    terms["ewc"] = loss_ewc(params, self.fisher_set, task_weights)
                if weights.alpha_s > 0:
                    terms["sparsity"] = loss_sparsity(code.pre_topk, rho, weights.sparsity_temperature)
                phase1 = compose_phase1(weights, terms)
                total = compose_full(weights, phase1=phase1, ewc=terms.get("ewc"), replay=terms.get("replay"))
                total.backward()
                optimizer.step()
                if replay_rows is not None:
                    self.buffer.update_priorities(replay_rows, replay_losses)
                self.model.update_expert_prototype(expert_id, code.values.data)
                if last_epoch:
                    final_losses[rows] = cross_entropy(logits.data, yb, reduction="none").data
                steps += 1
                total_value = total.item()
                self._emit(1, task_id, epoch, term_values(terms), total_value)
        return steps, total_value, final_losses

    # ------------------------------------------------------------------
    # Phase II
    # ------------------------------------------------------------------
    def _phase2_batch(self, inputs: np.ndarray, rows: np.ndarray, expert_id: int) -> Tuple[np.ndarray, np.ndarray]:
        mode = self.config.schedule.phase2_data
        parts_x, parts_e = [], []
        if mode != Phase2Data.REPLAY:
            parts_x.append(inputs[rows])
            parts_e.append(np.full(rows.size, expert_id))
        if mode != Phase2Data.CURRENT and not self.buffer.is_empty:
            _, items = sample_replay(self.buffer, rows.size)
            rx, _, rt = self.buffer.stack(items)
            parts_x.append(rx)
            parts_e.append(np.array([self.model.expert_for_task(int(t)) for t in rt]))
        if not parts_x:
            return np.zeros((0, inputs.shape[1])), np.zeros(0, dtype=np.int64)
        return np.concatenate(parts_x), np.concatenate(parts_e).astype(np.int64)

    def phase2(self, task_id: int, expert_id: int, inputs: np.ndarray) -> int:
        """Consolidation epochs with non-DG parameters frozen.

        Returns:
            Number of optimisation steps taken

        Raises:
            ContractError: If a frozen parameter changed
        """
        config = self.config
        weights, schedule = config.weights, config.schedule
        if schedule.phase2_data == Phase2Data.REPLAY and self.buffer.is_empty:
            logger.info(f"Phase II skipped for task {task_id}: no replay samples yet")
            return 0
        active = np.zeros(self.model.n_experts, dtype=bool)
        for seen in self.model.task_classes:
            active[self.model.expert_for_task(seen)] = True
        self.model.freeze_non_dg()
        before = self.model.parameter_hash(dg_only=False)
        optimizer = self._optimizer()
        steps = 0
        for epoch in range(schedule.epochs_phase2):
            order = self.rng.permutation(inputs.shape[0])
            for rows in _batches(order, schedule.batch_size):
                xb, own = self._phase2_batch(inputs, rows, expert_id)
                if own.size == 0:
                    continue
                optimizer.zero_grad()
                features = self.model.backbone_features(xb)
                codes = [code.values for code in self.model.routing_codes(features)]
                contrastive = loss_contrastive_phase2(codes, self.model.prototypes, own, weights.margin_contrastive,
                                                      active, weights.phase2_cross_form)
                total = compose_full(weights, phase2=compose_phase2(weights, contrastive))
                total.backward()
                optimizer.step()
                steps += 1
                self._emit(2, task_id, epoch, {"contrastive": contrastive.item()}, total.item())
        after = self.model.parameter_hash(dg_only=False)
        self.model.unfreeze_all()
        if before != after:
            raise ContractError(f"non-DG parameters changed during consolidation of task {task_id}")
        return steps

    # ------------------------------------------------------------------
    # Task loop
    # ------------------------------------------------------------------
    def train_task(self, task: TaskData) -> TaskSummary:
        """Both phases and the boundary bookkeeping for the next task.

        Raises:
            ProtocolError: If the task arrives out of order
        """
        task_id = task.task_id
        expert_id = self.model.assign_task(task_id, task.classes)
        inputs, labels = task.train_inputs, task.train_labels
        logger.info(f"🚀 Task {task_id}: {labels.size} samples, classes {task.classes}, expert {expert_id}")
        steps1, last_loss, final_losses = self.phase1(task_id, expert_id, inputs, labels)
        steps2 = self.phase2(task_id, expert_id, inputs) if self.uses_phase2 else 0
        if self.uses_ewc:
            tail = slice(max(0, labels.size - self.config.schedule.fisher_samples), labels.size)
            self.fisher_set.append(estimate_fisher(self.model, inputs[tail], labels[tail], expert_id, task_id))
        self.snapshot = self.model.snapshot_backbone()
        populate_buffer(self.buffer, inputs, labels, task_id, final_losses)
        task.seal()
        logger.info(f"✅ Task {task_id} done: {steps1} + {steps2} steps, final loss {last_loss:.4f}")
        return TaskSummary(task_id=task_id, expert_id=expert_id, phase1_steps=steps1, phase2_steps=steps2,
                           final_phase1_loss=last_loss, stored_samples=self.buffer.task_count(task_id))

    def evaluate(self, stream: TaskStream, after_task: int) -> EvalResult:
        return evaluate_model(self.model, stream, after_task)

    def run(self, stream: TaskStream, output_dir: Optional[Path] = None) -> MetricsReport:
        """Train every task in order, evaluating and checkpointing at each boundary.

        Raises:
            ConfigError: If the stream does not match the configured model
        """
        config = self.config
        if stream.input_dim != config.model.encoder.input_dim:
            raise ConfigError(f"stream inputs have {stream.input_dim} features, model expects "
                              f"{config.model.encoder.input_dim}")
        if len(stream) != config.data.n_tasks:
            raise ConfigError(f"stream has {len(stream)} tasks, config expects {config.data.n_tasks}")
        n_tasks = len(stream)
        matrix: List[List[Optional[float]]] = []
        class_il: List[float] = []
        metrics = JsonLinesWriter(output_dir / "metrics.jsonl") if output_dir is not None else None
        try:
            for task in stream.tasks:
                self.train_task(task)
                result = self.evaluate(stream, task.task_id)
                matrix.append([result.task_il.get(t) for t in range(n_tasks)])
                class_il.append(result.class_il_overall)
                if metrics is not None:
                    for record in result.records:
                        metrics.write(record)
                    save_checkpoint(str(output_dir / "checkpoints" / f"task_{task.task_id}.ckpt"), self.model, config)
                logger.info(f"Task {task.task_id} boundary: Task-IL {np.mean(list(result.task_il.values())):.3f}, "
                            f"Class-IL {result.class_il_overall:.3f}")
        finally:
            if metrics is not None:
                metrics.close()
        forgetting = forgetting_per_task(matrix)
        final = [v for v in matrix[-1] if v is not None]
        report = MetricsReport(
            name=config.name,
            seed=config.seed,
            n_tasks=n_tasks,
            n_experts=config.model.n_experts,
            buffer_size=config.replay.buffer_size,
            accuracy_matrix=matrix,
            class_il_by_boundary=class_il,
            task_il_accuracy=float(np.mean(final)) if final else 0.0,
            class_il_accuracy=class_il[-1] if class_il else 0.0,
            routing_accuracy=routing_accuracy(stream, self.model),
            forgetting=forgetting,
            mean_forgetting=float(np.mean(forgetting)) if forgetting else 0.0,
            flops=count_flops(config.model),
        )
        if output_dir is not None:
            write_report(report, output_dir)
        return report


def run_stream(config: RunConfig, output_dir: Optional[str] = None, data_dir: str = ".",
               stream: Optional[TaskStream] = None) -> MetricsReport:
    """Train and evaluate a whole stream.

    Args:
        config: Validated run configuration
        output_dir: Where logs, checkpoints and the report go (nothing written if None)
        data_dir: Base directory for relative dataset paths
        stream: Pre-built stream; built from ``config.data`` when omitted

    Returns:
        MetricsReport of the run
    """
    stream = stream if stream is not None else build_stream(config.data, config.seed, data_dir)
    target = Path(output_dir) if output_dir is not None else None
    logger.info(f"🚀 Run {config.name}: {len(stream)} tasks, {config.model.n_experts} experts, "
                f"buffer {config.replay.buffer_size}/task")
    if target is None:
        report = ContinualTrainer(config).run(stream)
    else:
        with JsonLinesWriter(target / "train_log.jsonl") as train_log:
            report = ContinualTrainer(config, step_sink=train_log.write).run(stream, target)
    logger.info(f"✅ Run {config.name}: Task-IL {report.task_il_accuracy:.3f}, Class-IL {report.class_il_accuracy:.3f}, "
                f"routing {report.routing_accuracy:.3f}")
    return report


def sweep_buffer_sizes(config: RunConfig, buffer_sizes: List[int], output_dir: Optional[str] = None,
                       data_dir: str = ".") -> List[MetricsReport]:
    """One full run per replay buffer size on the same stream.

    Every run reuses the seed, so only the buffer capacity differs.
    """
    reports: List[MetricsReport] = []
    for size in buffer_sizes:
        variant = config.with_buffer_size(size)
        stream = build_stream(variant.data, variant.seed, data_dir)
        target = str(Path(output_dir) / f"buffer_{size}") if output_dir is not None else None
        reports.append(run_stream(variant, target, data_dir, stream))
    return reports

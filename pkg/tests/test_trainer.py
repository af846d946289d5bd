"""
Tests for the continual trainer
===============================

Small end-to-end runs on the tiny two-task stream.
"""

import numpy as np
import pytest

from hicl.data import make_synthetic_stream
from hicl.exceptions import ConfigError, ContractError, ProtocolError
from hicl.models import Phase2Data
from hicl.trainer import ContinualTrainer, evaluate_model, run_stream, sweep_buffer_sizes

# 24 samples per task in batches of 8 for 2 epochs
TINY_PHASE1_STEPS = 6


def stream_for(config):
    data = config.data
    return make_synthetic_stream(data.n_tasks, data.classes_per_task, data.dim, data.separation, config.seed,
                                 data.noise_std, data.samples_per_class, data.test_samples_per_class)


def with_data(config, **updates):
    return config.model_copy(update={"data": config.data.model_copy(update=updates)})


# =============================================================================
# Single task
# =============================================================================

class TestTrainTask:

    def test_summary(self, tiny_config, tiny_stream):
        trainer = ContinualTrainer(tiny_config)
        summary = trainer.train_task(tiny_stream[0])
        assert summary.expert_id == 0
        assert summary.phase1_steps == TINY_PHASE1_STEPS
        assert summary.phase2_steps == 3
        assert summary.stored_samples == tiny_config.replay.buffer_size
        assert np.isfinite(summary.final_phase1_loss)

    def test_prototype_updated_once_per_step(self, tiny_config, tiny_stream):
        trainer = ContinualTrainer(tiny_config)
        trainer.train_task(tiny_stream[0])
        assert trainer.model.prototypes[0].update_count == TINY_PHASE1_STEPS
        assert trainer.model.prototypes[1].is_cold

    def test_out_of_order(self, tiny_config, tiny_stream):
        with pytest.raises(ProtocolError):
            ContinualTrainer(tiny_config).train_task(tiny_stream[1])

    def test_task_is_sealed(self, tiny_config, tiny_stream):
        ContinualTrainer(tiny_config).train_task(tiny_stream[0])
        with pytest.raises(ProtocolError):
            tiny_stream[0].train_inputs
        assert tiny_stream[0].n_test == 12

    def test_step_records(self, tiny_config, tiny_stream):
        records = []
        ContinualTrainer(tiny_config, step_sink=records.append).train_task(tiny_stream[0])
        assert [r.phase for r in records] == [1] * TINY_PHASE1_STEPS + [2] * 3
        assert [r.step for r in records] == list(range(1, len(records) + 1))
        assert set(records[0].terms) == {"cls", "intra", "sparsity"}
        assert set(records[-1].terms) == {"contrastive"}

    def test_replay_only_consolidation_waits_for_samples(self, tiny_config, tiny_stream):
        schedule = tiny_config.schedule.model_copy(update={"phase2_data": Phase2Data.REPLAY})
        trainer = ContinualTrainer(tiny_config.model_copy(update={"schedule": schedule}))
        assert trainer.train_task(tiny_stream[0]).phase2_steps == 0
        assert trainer.train_task(tiny_stream[1]).phase2_steps == 3


class TestConsolidation:

    def _after_phase1(self, tiny_config, tiny_stream):
        trainer = ContinualTrainer(tiny_config)
        task = tiny_stream[0]
        trainer.model.assign_task(0, task.classes)
        trainer.phase1(0, 0, task.train_inputs, task.train_labels)
        return trainer, task.train_inputs

    def test_only_dg_parameters_move(self, tiny_config, tiny_stream):
        trainer, inputs = self._after_phase1(tiny_config, tiny_stream)
        frozen = trainer.model.parameter_hash(dg_only=False)
        dg = trainer.model.parameter_hash(dg_only=True)
        prototype = trainer.model.prototypes[0].vector.copy()
        assert trainer.phase2(0, 0, inputs) == 3
        assert trainer.model.parameter_hash(dg_only=False) == frozen
        assert trainer.model.parameter_hash(dg_only=True) != dg
        np.testing.assert_array_equal(trainer.model.prototypes[0].vector, prototype)
        assert all(t.requires_grad for _, t in trainer.model.named_parameters())

    def test_freeze_violation_is_reported(self, tiny_config, tiny_stream, monkeypatch):
        trainer, inputs = self._after_phase1(tiny_config, tiny_stream)
        monkeypatch.setattr(trainer.model, "freeze_non_dg", lambda: None)
        with pytest.raises(ContractError):
            trainer.phase2(0, 0, inputs)


class TestBoundary:

    def test_fisher_and_snapshot(self, tiny_config, tiny_stream):
        trainer = ContinualTrainer(tiny_config)
        trainer.train_task(tiny_stream[0])
        assert [info.task_id for info in trainer.fisher_set] == [0]
        assert trainer.snapshot is not None
        assert len(trainer.buffer) == tiny_config.replay.buffer_size

    def test_anchors_survive_later_tasks(self, tiny_config, tiny_stream):
        trainer = ContinualTrainer(tiny_config)
        trainer.train_task(tiny_stream[0])
        anchors = {name: value.copy() for name, value in trainer.fisher_set[0].anchors.items()}
        trainer.train_task(tiny_stream[1])
        for name, value in anchors.items():
            np.testing.assert_array_equal(trainer.fisher_set[0].anchors[name], value)
        assert [info.task_id for info in trainer.fisher_set] == [0, 1]

    def test_second_task_uses_every_term(self, tiny_config, tiny_stream):
        records = []
        trainer = ContinualTrainer(tiny_config, step_sink=records.append)
        trainer.train_task(tiny_stream[0])
        trainer.train_task(tiny_stream[1])
        second = [r for r in records if r.task == 1 and r.phase == 1]
        assert set(second[0].terms) == {"cls", "intra", "replay", "distill", "ewc", "sparsity"}


# =============================================================================
# Whole runs
# =============================================================================

class TestRun:

    def test_report(self, tiny_config, tiny_stream):
        report = ContinualTrainer(tiny_config).run(tiny_stream)
        assert report.n_tasks == 2
        assert report.accuracy_matrix[0][1] is None
        assert all(0.0 <= v <= 1.0 for row in report.accuracy_matrix for v in row if v is not None)
        assert report.task_il_accuracy == pytest.approx(np.mean(report.accuracy_matrix[-1]))
        assert len(report.forgetting) == 1
        assert len(report.class_il_by_boundary) == 2
        assert 0.0 <= report.routing_accuracy <= 1.0
        assert report.flops.n_experts == 2

    def test_evaluate_trained(self, trained_trainer, tiny_stream):
        result = evaluate_model(trained_trainer.model, tiny_stream, 1)
        assert set(result.task_il) == {0, 1}
        assert len(result.records) == 2
        assert result.class_il_overall == pytest.approx(np.mean(list(result.class_il.values())))

    def test_single_task_scenarios_agree(self, tiny_config):
        config = with_data(tiny_config, n_tasks=1)
        report = ContinualTrainer(config).run(stream_for(config))
        assert report.task_il_accuracy == report.class_il_accuracy
        assert report.forgetting == []
        assert report.routing_accuracy == 1.0

    def test_stream_shape_checked(self, tiny_config):
        config = with_data(tiny_config, n_tasks=3)
        with pytest.raises(ConfigError):
            ContinualTrainer(tiny_config).run(stream_for(config))

    def test_ablated_baseline_runs(self, tiny_config, tiny_stream):
        trainer = ContinualTrainer(tiny_config.ablated())
        report = trainer.run(tiny_stream)
        assert report.n_experts == 1
        assert trainer.fisher_set == []
        assert trainer.buffer.is_empty

    def test_files_are_reproducible(self, tiny_config, tmp_path):
        first, second = tmp_path / "a", tmp_path / "b"
        run_stream(tiny_config, str(first))
        run_stream(tiny_config, str(second))
        names = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
        assert [str(n) for n in names] == sorted([
            "checkpoints/task_0.ckpt", "checkpoints/task_1.ckpt", "metrics.jsonl", "report.csv", "report.json",
            "train_log.jsonl",
        ])
        for name in names:
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_buffer_sweep(self, tiny_config, tmp_path):
        reports = sweep_buffer_sizes(tiny_config, [0, 4], str(tmp_path))
        assert [r.buffer_size for r in reports] == [0, 4]
        assert (tmp_path / "buffer_0" / "report.json").exists()
        assert (tmp_path / "buffer_4" / "report.json").exists()

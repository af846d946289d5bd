"""HiCL continual-learning engine.

This package provides:
- Dense float64 tensors with reverse-mode autodiff and a finite-difference oracle
- Hippocampal experts (grid cells, DG top-k separation, CA3, CA1) on a shared backbone
- Prototype cosine gating (soft, hard, top-2, hybrid) with conditional execution
- Two-phase training with replay, distillation, similarity-weighted EWC and consolidation
- Synthetic, IDX and CSV task streams, FLOPs accounting and routing diagnostics
"""

from .analysis import jaccard_analysis, prototype_similarity_matrix, routing_matrix
from .checkpoint import load_checkpoint, save_checkpoint
from .data import TaskData, TaskStream, build_stream, load_csv, load_idx, make_synthetic_stream, split_dataset, write_idx
from .exceptions import (CheckpointError, ConfigError, ContractError, DataError, DimensionError, FormatError,
                         HiclError, NonFiniteError, ParameterError, ProtocolError, RoutingError)
from .flops import FlopsReport, count_flops
from .model import HiclModel
from .models import (CrossForm, DataConfig, EncoderConfig, GateMode, GatingConfig, LossWeights, ModelConfig,
                     Phase2Data, Provenance, ReplayConfig, RunConfig, TrainSchedule, load_run_config)
from .reporting import MetricsReport
from .trainer import ContinualTrainer, run_stream

__version__ = "1.0.0"

__all__ = [
    "jaccard_analysis",
    "prototype_similarity_matrix",
    "routing_matrix",
    "load_checkpoint",
    "save_checkpoint",
    "TaskData",
    "TaskStream",
    "build_stream",
    "load_csv",
    "load_idx",
    "make_synthetic_stream",
    "split_dataset",
    "write_idx",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "FormatError",
    "HiclError",
    "NonFiniteError",
    "ParameterError",
    "ProtocolError",
    "RoutingError",
    "FlopsReport",
    "count_flops",
    "HiclModel",
    "CrossForm",
    "DataConfig",
    "EncoderConfig",
    "GateMode",
    "GatingConfig",
    "LossWeights",
    "ModelConfig",
    "Phase2Data",
    "Provenance",
    "ReplayConfig",
    "RunConfig",
    "TrainSchedule",
    "load_run_config",
    "MetricsReport",
    "ContinualTrainer",
    "run_stream",
]

"""Pydantic models for HiCL run configuration.

A run is described by one JSON document (:class:`RunConfig`) that nests the
architecture, the loss weights, the training schedule, the replay buffer
and the data source. Every model validates its own ranges; cross-field
checks live in ``model_validator`` hooks.
"""

import math
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import (AliasChoices, BaseModel, ConfigDict, Field, ValidationError, field_validator,
                      model_validator)

from .exceptions import ConfigError, DataError


class GateMode(str, Enum):
    """Gating mode enum"""
    SOFT = "soft"      # temperature softmax over all similarities
    HARD = "hard"      # argmax one-hot
    TOP2 = "top2"      # two best, renormalised
    HYBRID = "hybrid"  # softmax over the top-k similarities


class Provenance(str, Enum):
    """Where a task stream came from"""
    SYNTHETIC = "synthetic"
    IDX = "idx-dataset"
    CSV = "csv-dataset"


class Phase2Data(str, Enum):
    """Which samples feed the consolidation phase"""
    BOTH = "both"
    CURRENT = "current"
    REPLAY = "replay"


class CrossForm(str, Enum):
    """Off-expert term of the consolidation loss"""
    AS_WRITTEN = "as_written"      # cos(p_sep^(j), u_j)
    CURRENT_CODE = "current_code"  # cos(p_sep^(t), u_j)


def sparsity_k(rho: float, dg_dim: int) -> int:
    """Number of kept DG units, floor(rho * dg_dim) with a float guard"""
    return int(math.floor(rho * dg_dim + 1e-9))


class EncoderConfig(BaseModel):
    """Architecture of the shared backbone and of one expert"""
    model_config = ConfigDict(extra="forbid")

    input_dim: int = Field(64, gt=0, description="Flattened input length")
    backbone_widths: List[int] = Field(default_factory=lambda: [128], description="Dense backbone hidden sizes")
    grid_units: int = Field(4, ge=1, description="Number of sinusoidal grid units (M)")
    grid_dim: int = Field(32, gt=0, description="Output size of each grid unit")
    dg_dim: int = Field(1024, ge=2, description="Dentate-gyrus projection size")
    sparsity_rho: float = Field(0.05, gt=0, lt=1, description="Fraction of DG units kept by top-k")
    ca3_widths: Tuple[int, int] = Field((512, 256), description="CA3 refinement MLP widths")
    ca1_widths: Tuple[int, int, int] = Field((512, 256, 128), description="CA1 head hidden widths")
    n_classes: int = Field(2, gt=0, description="Logits per expert head (classes per task)")
    layer_norm_eps: float = Field(1e-5, gt=0)

    @field_validator("backbone_widths", "ca3_widths", "ca1_widths")
    @classmethod
    def validate_widths(cls, v):
        """All layer widths must be positive"""
        if any(width <= 0 for width in v):
            raise ValueError(f"widths must be positive, got {list(v)}")
        return v

    @model_validator(mode="after")
    def validate_sparsity(self):
        """k = floor(rho * dg_dim) must keep at least one and drop at least one unit"""
        k = sparsity_k(self.sparsity_rho, self.dg_dim)
        if k < 1:
            raise ValueError(f"floor(sparsity_rho * dg_dim) must be >= 1, got {k}")
        if k >= self.dg_dim:
            raise ValueError(f"top-k must be smaller than dg_dim ({k} >= {self.dg_dim})")
        return self

    @property
    def k(self) -> int:
        return sparsity_k(self.sparsity_rho, self.dg_dim)

    @property
    def feature_dim(self) -> int:
        return self.backbone_widths[-1] if self.backbone_widths else self.input_dim

    @property
    def grid_out(self) -> int:
        return self.grid_units * self.grid_dim

    @property
    def integrated_dim(self) -> int:
        return self.dg_dim + self.ca3_widths[-1]


class GatingConfig(BaseModel):
    """Routing parameters"""
    model_config = ConfigDict(extra="forbid")

    mode: GateMode = Field(GateMode.HARD, description="Gating mode used at inference")
    temperature: float = Field(0.1, gt=0, description="Softmax temperature (tau)")
    hybrid_k: int = Field(2, ge=1, description="Similarities kept by hybrid gating")
    ema_rate: float = Field(0.01, ge=0, le=1, description="Prototype EMA rate (mu)")


class ModelConfig(BaseModel):
    """Full mixture-of-experts architecture"""
    model_config = ConfigDict(extra="forbid")

    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    n_experts: int = Field(5, ge=1, description="Number of experts (N)")
    gating: GatingConfig = Field(default_factory=GatingConfig)


class LossWeights(BaseModel):
    """Coefficients and switches of every training objective"""
    model_config = ConfigDict(extra="forbid")

    alpha_intra: float = Field(0.1, ge=0)
    alpha_rep: float = Field(1.0, ge=0)
    alpha_dist: float = Field(0.1, ge=0)
    alpha_ewc: Optional[float] = Field(None, ge=0, description="Defaults to lambda_ewc")
    alpha_s: float = Field(0.01, ge=0)
    alpha_contrastive: float = Field(1.0, ge=0)
    lambda1: float = Field(1.0, ge=0)
    lambda2: float = Field(1.0, ge=0)
    lambda3: float = Field(1.0, ge=0, description="Outer EWC weight, used only with strict_paper_objective")
    lambda4: float = Field(1.0, ge=0, description="Outer replay weight, used only with strict_paper_objective")
    lambda_push: float = Field(1.0, ge=0, description="Push weight inside the intra loss")
    lambda_ewc: float = Field(0.1, ge=0, description="Base EWC strength")
    margin_intra: float = Field(1.0, ge=0, le=2)
    margin_contrastive: float = Field(0.2, ge=0, le=2)
    ewc_floor: float = Field(0.05, ge=0, description="Added to the clamped prototype cosine in EWC weights")
    sparsity_temperature: float = Field(0.01, gt=0, description="Sigmoid surrogate temperature")
    strict_paper_objective: bool = Field(
        False, validation_alias=AliasChoices("strict_paper_objective", "strict_objective"),
        description="Count EWC and replay again through lambda3/lambda4")
    phase2_cross_form: CrossForm = Field(CrossForm.AS_WRITTEN)

    @model_validator(mode="after")
    def default_alpha_ewc(self):
        """alpha_ewc falls back to the base EWC strength"""
        if self.alpha_ewc is None:
            self.alpha_ewc = self.lambda_ewc
        return self

    @property
    def effective_lambda3(self) -> float:
        return self.lambda3 if self.strict_paper_objective else 0.0

    @property
    def effective_lambda4(self) -> float:
        return self.lambda4 if self.strict_paper_objective else 0.0


class TrainSchedule(BaseModel):
    """Epochs, batch sizes and optimiser settings"""
    model_config = ConfigDict(extra="forbid")

    epochs_phase1: int = Field(10, gt=0)
    epochs_phase2: int = Field(2, gt=0)
    batch_size: int = Field(32, gt=0)
    replay_batch_size: int = Field(32, gt=0)
    learning_rate: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    fisher_samples: int = Field(200, gt=0, description="Trailing samples used for the diagonal Fisher")
    phase2_data: Phase2Data = Field(Phase2Data.BOTH)


class ReplayConfig(BaseModel):
    """Prioritised replay buffer"""
    model_config = ConfigDict(extra="forbid")

    buffer_size: int = Field(200, ge=0, description="Stored samples per task (B)")
    priority_exponent: float = Field(0.6, ge=0, description="alpha_PER")
    priority_epsilon: float = Field(1e-3, gt=0)


class DataConfig(BaseModel):
    """Task stream source"""
    model_config = ConfigDict(extra="forbid")

    source: Provenance = Field(Provenance.SYNTHETIC)
    n_tasks: int = Field(5, ge=1)
    classes_per_task: int = Field(2, ge=1)
    dim: int = Field(64, gt=0, description="Synthetic input dimension")
    separation: float = Field(10.0, ge=0, description="Radius of the synthetic class-mean sphere")
    noise_std: float = Field(1.0, gt=0)
    samples_per_class: int = Field(200, gt=0)
    test_samples_per_class: int = Field(100, gt=0)
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_csv: Optional[str] = None
    test_csv: Optional[str] = None

    @model_validator(mode="after")
    def validate_paths(self):
        """File-backed sources need their paths"""
        if self.source == Provenance.IDX:
            missing = [n for n in ("train_images", "train_labels", "test_images", "test_labels") if not getattr(self, n)]
            if missing:
                raise ValueError(f"idx-dataset source requires {missing}")
        if self.source == Provenance.CSV and not (self.train_csv and self.test_csv):
            raise ValueError("csv-dataset source requires train_csv and test_csv")
        return self


class RunConfig(BaseModel):
    """Everything needed to reproduce one continual-learning run"""
    model_config = ConfigDict(extra="forbid")

    name: str = Field("hicl", min_length=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    model: ModelConfig = Field(default_factory=ModelConfig)
    weights: LossWeights = Field(default_factory=LossWeights)
    schedule: TrainSchedule = Field(default_factory=TrainSchedule)
    replay: ReplayConfig = Field(default_factory=ReplayConfig)
    data: DataConfig = Field(default_factory=DataConfig)

    @model_validator(mode="after")
    def validate_consistency(self):
        """Model shape must match the data it will see"""
        encoder = self.model.encoder
        if encoder.n_classes != self.data.classes_per_task:
            raise ValueError(
                f"encoder.n_classes ({encoder.n_classes}) must equal data.classes_per_task "
                f"({self.data.classes_per_task})"
            )
        if self.data.source == Provenance.SYNTHETIC and encoder.input_dim != self.data.dim:
            raise ValueError(f"encoder.input_dim ({encoder.input_dim}) must equal data.dim ({self.data.dim})")
        return self

    def ablated(self) -> "RunConfig":
        """Naive fine-tuning baseline: one shared expert, no anti-forgetting terms"""
        weights = self.weights.model_copy(update={
            "alpha_rep": 0.0, "alpha_dist": 0.0, "alpha_ewc": 0.0, "alpha_contrastive": 0.0,
            "lambda3": 0.0, "lambda4": 0.0,
        })
        model = self.model.model_copy(update={"n_experts": 1})
        replay = self.replay.model_copy(update={"buffer_size": 0})
        return self.model_copy(update={
            "name": f"{self.name}-ablated", "weights": weights, "model": model, "replay": replay,
        })

    def with_buffer_size(self, buffer_size: int) -> "RunConfig":
        replay = self.replay.model_copy(update={"buffer_size": buffer_size})
        return self.model_copy(update={"name": f"{self.name}-b{buffer_size}", "replay": replay})


def load_run_config(path: str) -> RunConfig:
    """Read and validate a run configuration file.

    Args:
        path: JSON file location

    Returns:
        Validated RunConfig

    Raises:
        DataError: If the file cannot be read
        ConfigError: If the document does not validate
    """
    file = Path(path)
    try:
        text = file.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from None


def run_config_schema() -> dict:
    """Published JSON schema of the run configuration"""
    return RunConfig.model_json_schema()

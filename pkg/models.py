"""Pydantic models for the command-line surface.

Each subcommand's arguments are validated into a request model before any
work starts; a validation failure is a usage error.
"""

from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator


class AnalysisKind(str, Enum):
    """Analysis type enum"""
    JACCARD = "jaccard"
    PROTOTYPES = "prototypes"
    ROUTING = "routing"


class TrainRequest(BaseModel):
    """Arguments of ``train``"""
    model_config = ConfigDict(extra="forbid")

    config: str = Field(..., min_length=1, description="Run configuration JSON file")
    output_dir: str = Field(..., min_length=1, description="Directory for logs, checkpoints and the report")
    ablate: bool = Field(False, description="Run the naive fine-tuning baseline instead")


class EvalRequest(BaseModel):
    """Arguments of ``eval``"""
    model_config = ConfigDict(extra="forbid")

    checkpoint: str = Field(..., min_length=1, description="Checkpoint archive")


class AnalyzeRequest(BaseModel):
    """Arguments of ``analyze``"""
    model_config = ConfigDict(extra="forbid")

    kind: AnalysisKind
    checkpoint: str = Field(..., min_length=1)
    output: Optional[str] = Field(None, description="CSV destination; stdout when omitted")
    pairs: int = Field(200, gt=0, description="Sampled pairs per Jaccard cell")
    normalized: bool = Field(False, description="Row-normalise the routing matrix")


class SweepRequest(BaseModel):
    """Arguments of ``sweep``"""
    model_config = ConfigDict(extra="forbid")

    config: str = Field(..., min_length=1)
    buffer_sizes: List[int] = Field(..., min_length=1, description="Comma-separated buffer sizes, e.g. 20,50,100")
    output_dir: Optional[str] = None
    output: Optional[str] = Field(None, description="CSV destination; stdout when omitted")
    ablate: bool = False

    @field_validator("buffer_sizes", mode="before")
    @classmethod
    def parse_buffer_sizes(cls, v):
        """Accept "20,50,100" as well as a list"""
        if isinstance(v, str):
            items = [item.strip() for item in v.split(",") if item.strip()]
            try:
                v = [int(item) for item in items]
            except ValueError:
                raise ValueError(f"buffer sizes must be integers, got {v!r}") from None
        return v

    @field_validator("buffer_sizes")
    @classmethod
    def validate_buffer_sizes(cls, v):
        """Sizes must be non-negative"""
        if any(size < 0 for size in v):
            raise ValueError(f"buffer sizes must be >= 0, got {v}")
        return v


class FlopsRequest(BaseModel):
    """Arguments of ``flops``"""
    model_config = ConfigDict(extra="forbid")

    config: str = Field(..., min_length=1)


class SweepRow(BaseModel):
    """One line of the memory-sweep CSV"""
    buffer_size: int
    task_il: float
    class_il: float
    routing_accuracy: float
    mean_forgetting: float


class EvalResponse(BaseModel):
    """Output of ``eval``"""
    tasks_seen: int
    task_il: List[float]
    class_il: List[float]
    task_il_mean: float
    class_il_overall: float

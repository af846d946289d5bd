"""Analytic FLOPs accounting for one single-sample forward pass.

Convention: one multiply-accumulate counts 2 FLOPs, a comparison or a
pointwise activation counts 1. Top-k is charged ``ceil(d * log2(d))``.
"""

import math
from typing import Dict, List, Sequence

from pydantic import BaseModel, ConfigDict, Field

from .models import ModelConfig

COUNTING_CONVENTION = (
    "dense 2*in*out (+out with bias); relu/sin d; layer_norm 8*d; "
    "top-k ceil(d*log2 d); cosine 6*d; 1 MAC = 2 FLOPs"
)


def dense_flops(in_dim: int, out_dim: int, bias: bool = True) -> int:
    return 2 * in_dim * out_dim + (out_dim if bias else 0)


def layer_norm_flops(dim: int) -> int:
    return 8 * dim


def topk_flops(dim: int) -> int:
    return int(math.ceil(dim * math.log2(dim))) if dim > 1 else 0


def cosine_flops(dim: int) -> int:
    return 6 * dim


def _relu_stack(in_dim: int, widths: Sequence[int]) -> int:
    total, previous = 0, in_dim
    for width in widths:
        total += dense_flops(previous, width) + width
        previous = width
    return total


class FlopsReport(BaseModel):
    """Per-component counts and conditional vs dense totals"""
    model_config = ConfigDict(extra="forbid")

    n_experts: int
    backbone_flops: int = Field(..., description="Shared dense backbone")
    grid_flops: int = Field(..., description="One expert's grid layer (part of dg_flops)")
    dg_flops: int = Field(..., description="One expert's grid and DG stages, run by every expert")
    ca3_flops: int
    ca1_flops: int
    head_flops: int
    routing_flops: int = Field(..., description="N prototype cosines plus the gate")
    conditional_total: int
    dense_total: int
    convention: str = COUNTING_CONVENTION

    @property
    def gated_expert_flops(self) -> int:
        """CA3 + CA1 + head, the part conditional computation skips"""
        return self.ca3_flops + self.ca1_flops + self.head_flops

    @property
    def saving_ratio(self) -> float:
        return self.conditional_total / self.dense_total

    def as_row(self) -> Dict[str, float]:
        return {
            "backbone_mflops": self.backbone_flops / 1e6,
            "expert_mflops": (self.dg_flops + self.gated_expert_flops) / 1e6,
            "conditional_mflops": self.conditional_total / 1e6,
            "dense_mflops": self.dense_total / 1e6,
        }


def count_flops(config: ModelConfig) -> FlopsReport:
    """Count FLOPs of one forward pass under ``config``.

    ``conditional_total = backbone + N*dg + (ca3 + ca1 + head) + routing``;
    dense execution completes every expert.
    """
    encoder = config.encoder
    n = config.n_experts
    backbone = _relu_stack(encoder.input_dim, encoder.backbone_widths)
    grid = encoder.grid_units * (dense_flops(encoder.feature_dim, encoder.grid_dim) + encoder.grid_dim)
    dg_dim = encoder.dg_dim
    dg = grid + dense_flops(encoder.grid_out, dg_dim) + dg_dim + layer_norm_flops(dg_dim) + topk_flops(dg_dim)
    first, second = encoder.ca3_widths
    ca3 = _relu_stack(dg_dim, [first, second]) + layer_norm_flops(second)
    ca1 = _relu_stack(encoder.integrated_dim, encoder.ca1_widths)
    head = dense_flops(encoder.ca1_widths[-1], encoder.n_classes)
    routing = n * cosine_flops(dg_dim) + n
    gated = ca3 + ca1 + head
    return FlopsReport(
        n_experts=n,
        backbone_flops=backbone,
        grid_flops=grid,
        dg_flops=dg,
        ca3_flops=ca3,
        ca1_flops=ca1,
        head_flops=head,
        routing_flops=routing,
        conditional_total=backbone + n * dg + gated + routing,
        dense_total=backbone + n * (dg + gated) + routing,
    )


def flops_table(report: FlopsReport) -> List[List[str]]:
    """Rows for a plain-text summary"""
    return [
        ["backbone", str(report.backbone_flops)],
        ["dg (per expert)", str(report.dg_flops)],
        ["ca3 (per expert)", str(report.ca3_flops)],
        ["ca1 (per expert)", str(report.ca1_flops)],
        ["head (per expert)", str(report.head_flops)],
        ["routing", str(report.routing_flops)],
        ["conditional total", str(report.conditional_total)],
        ["dense total", str(report.dense_total)],
    ]

"""
Tests for the analytic FLOPs counter
====================================
"""

import math
from pathlib import Path

import pytest

from hicl.flops import cosine_flops, count_flops, dense_flops, flops_table, layer_norm_flops, topk_flops
from hicl.models import EncoderConfig, ModelConfig, load_run_config

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class TestPrimitives:

    def test_dense_without_bias(self):
        assert dense_flops(10, 10, bias=False) == 200

    def test_dense_with_bias(self):
        assert dense_flops(10, 10) == 210

    def test_layer_norm(self):
        assert layer_norm_flops(16) == 128

    def test_topk(self):
        assert topk_flops(8) == 24
        assert topk_flops(1024) == 10240
        assert topk_flops(1) == 0
        assert topk_flops(10) == math.ceil(10 * math.log2(10))


class TestCountFlops:

    def test_tiny_backbone_by_hand(self, tiny_model_config):
        # 6 -> 8 dense with bias, then 8 ReLUs
        assert count_flops(tiny_model_config).backbone_flops == 2 * 6 * 8 + 8 + 8

    def test_dense_minus_conditional(self, tiny_model_config):
        report = count_flops(tiny_model_config)
        gap = report.dense_total - report.conditional_total
        assert gap == (tiny_model_config.n_experts - 1) * report.gated_expert_flops

    def test_single_expert_has_no_saving(self, tiny_encoder):
        report = count_flops(ModelConfig(encoder=tiny_encoder, n_experts=1))
        assert report.conditional_total == report.dense_total
        assert report.saving_ratio == 1.0

    def test_saving_grows_with_experts(self, tiny_encoder):
        ratios = [count_flops(ModelConfig(encoder=tiny_encoder, n_experts=n)).saving_ratio for n in (2, 4, 8)]
        assert ratios == sorted(ratios, reverse=True)
        assert all(r < 1.0 for r in ratios)

    def test_doubling_dg_width_grows_every_expert(self):
        small = count_flops(ModelConfig(encoder=EncoderConfig(dg_dim=512), n_experts=3))
        large = count_flops(ModelConfig(encoder=EncoderConfig(dg_dim=1024), n_experts=3))
        assert large.dg_flops > small.dg_flops
        assert large.ca3_flops > small.ca3_flops
        assert large.routing_flops == 2 * small.routing_flops - 3
        assert large.conditional_total > small.conditional_total

    def test_routing_counts_cosines(self, tiny_model_config):
        report = count_flops(tiny_model_config)
        assert report.routing_flops == 2 * 6 * 20 + 2

    def test_table_and_row(self, tiny_model_config):
        report = count_flops(tiny_model_config)
        table = dict(flops_table(report))
        assert table["dense total"] == str(report.dense_total)
        assert report.as_row()["dense_mflops"] == pytest.approx(report.dense_total / 1e6)


class TestModelVariants:

    @pytest.fixture(scope="class")
    def variants(self):
        small = load_run_config(str(CONFIG_DIR / "hicl_small.json")).model
        large = load_run_config(str(CONFIG_DIR / "hicl_large.json")).model
        return small, large

    def test_sparsity_counts(self, variants):
        small, large = variants
        assert small.encoder.k == 25
        assert large.encoder.k == 51

    def test_small_backbone_by_hand(self, variants):
        small, _ = variants
        expected = (2 * 784 * 128 + 128 + 128) + (2 * 128 * 64 + 64 + 64)
        assert count_flops(small).backbone_flops == expected

    @pytest.mark.parametrize("which", [0, 1])
    def test_conditional_identities(self, variants, which):
        config = variants[which]
        report = count_flops(config)
        n = config.n_experts
        assert report.dense_total - report.conditional_total == (n - 1) * report.gated_expert_flops
        assert report.routing_flops == n * cosine_flops(config.encoder.dg_dim) + n
        assert report.saving_ratio < 1.0

    def test_large_costs_more_everywhere(self, variants):
        small, large = (count_flops(config) for config in variants)
        assert large.routing_flops == 2 * small.routing_flops - 5
        for attr in ("backbone_flops", "dg_flops", "ca3_flops", "ca1_flops", "conditional_total", "dense_total"):
            assert getattr(large, attr) > getattr(small, attr)

"""
Tests for post-training diagnostics
===================================
"""

import numpy as np
import pytest

from hicl.analysis import (JaccardReport, PrototypeMatrix, RoutingMatrix, jaccard_analysis,
                           prototype_similarity_matrix, routing_matrix)
from hicl.router import Prototype
from hicl.utils import jaccard


class TestJaccard:

    def test_set_overlap(self):
        assert jaccard(frozenset({1, 2, 3}), frozenset({2, 3, 4})) == pytest.approx(0.5)
        assert jaccard(frozenset({1}), frozenset({1})) == 1.0
        assert jaccard(frozenset(), frozenset()) == 1.0

    def test_trained_model(self, trained_trainer, tiny_stream):
        report = jaccard_analysis(trained_trainer.model, tiny_stream, seed=1, pairs=50)
        assert report.matrix.shape == (2, 2)
        assert np.all((report.matrix >= 0) & (report.matrix <= 1))
        assert report.gap == pytest.approx(report.intra - report.inter)

    def test_seeded(self, trained_trainer, tiny_stream):
        first = jaccard_analysis(trained_trainer.model, tiny_stream, seed=4, pairs=30)
        second = jaccard_analysis(trained_trainer.model, tiny_stream, seed=4, pairs=30)
        np.testing.assert_array_equal(first.matrix, second.matrix)

    def test_csv(self):
        report = JaccardReport(intra=0.5, inter=0.25, matrix=np.array([[0.5, 0.25], [0.25, 0.5]]))
        assert report.to_csv().splitlines()[0] == "task,task0,task1"
        assert report.summary_csv().splitlines() == ["intra,inter,gap", "0.5,0.25,0.25"]


class TestPrototypeMatrix:

    def test_hand_matrix(self, tiny_model):
        tiny_model.prototypes[0] = Prototype(expert_id=0, vector=np.array([1.0, 0.0] + [0.0] * 18), update_count=1)
        tiny_model.prototypes[1] = Prototype(expert_id=1, vector=np.array([1.0, 1.0] + [0.0] * 18), update_count=1)
        result = prototype_similarity_matrix(tiny_model)
        np.testing.assert_allclose(result.matrix, [[1.0, 1 / np.sqrt(2)], [1 / np.sqrt(2), 1.0]])
        assert result.max_off_diagonal == pytest.approx(1 / np.sqrt(2))
        assert not result.cold.any()

    def test_cold_rows_are_zero(self, tiny_model):
        tiny_model.prototypes[0] = Prototype(expert_id=0, vector=np.ones(20), update_count=1)
        result = prototype_similarity_matrix(tiny_model)
        assert result.cold.tolist() == [False, True]
        np.testing.assert_array_equal(result.matrix, [[1.0, 0.0], [0.0, 0.0]])

    def test_trained_model_is_symmetric(self, trained_trainer):
        matrix = prototype_similarity_matrix(trained_trainer.model).matrix
        np.testing.assert_allclose(matrix, matrix.T)
        np.testing.assert_array_equal(np.diag(matrix), [1.0, 1.0])

    def test_single_expert(self):
        assert PrototypeMatrix(matrix=np.ones((1, 1)), cold=np.zeros(1, dtype=bool)).max_off_diagonal == 0.0


class TestRoutingMatrix:

    def test_counts_cover_test_split(self, trained_trainer, tiny_stream):
        result = routing_matrix(trained_trainer.model, tiny_stream)
        assert result.counts.shape == (2, 2)
        assert result.counts.sum(axis=1).tolist() == [12, 12]
        np.testing.assert_allclose(result.normalized.sum(axis=1), 1.0)

    def test_diagonal_mass(self):
        result = RoutingMatrix(counts=np.array([[3, 1], [0, 0]]))
        np.testing.assert_allclose(result.diagonal_mass([0, 1]), [0.75, 0.0])
        assert result.to_csv().splitlines()[1] == "0,3.0,1.0"

"""
Tests for the tensor core
=========================

Covers the forward values of every registered op, their backward rules
against the central finite-difference oracle, tape ordering, grad mode
and the Adam optimiser.
"""

import math

import numpy as np
import pytest

from hicl.exceptions import ContractError, DataError, DimensionError, NonFiniteError, ParameterError
from hicl.optim import Adam, AdamState, adam_step
from hicl.tensor import (Tape, Tensor, absolute, add, concat, cosine_rows, cross_entropy, elementwise, gradcheck,
                         is_grad_enabled, layer_norm, matmul, mul, no_grad, numerical_gradient, pairwise_sq_dist,
                         parameter, place_rows, relu, reshape, safe_sqrt, scale, sigmoid, sin, softmax, square, sub,
                         take_rows, tensor_mean, tensor_sum, topk_mask)

OP_TOLERANCE = 1e-4
SEEDS = list(range(20))


def weighted(out, weights):
    """Reduce any output to a scalar with fixed random weights"""
    return tensor_sum(mul(out, weights))


# =============================================================================
# Tensor basics
# =============================================================================

class TestTensor:
    """Construction, finiteness and introspection."""

    def test_grad_buffer_follows_requires_grad(self):
        w = Tensor([[1.0, 2.0]], requires_grad=True)
        c = Tensor([1.0])
        assert w.grad.shape == w.shape
        assert c.grad is None

    def test_nan_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, float("nan")])

    def test_inf_produced_by_op_rejected(self):
        with pytest.raises(NonFiniteError):
            mul(Tensor([1e200]), Tensor([1e200]))

    def test_item_needs_single_value(self):
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()

    def test_set_requires_grad_on_non_leaf(self):
        w = parameter([1.0, 2.0], "w")
        with pytest.raises(ContractError):
            square(w).set_requires_grad(False)


# =============================================================================
# Forward values
# =============================================================================

class TestMatmul:

    def test_identity(self):
        out = matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
        np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])

    def test_scalar(self):
        np.testing.assert_array_equal(matmul(Tensor([[2]]), Tensor([[3]])).data, [[6]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        a = parameter(rng.normal(size=(3, 4)), "a")
        b = parameter(rng.normal(size=(4, 2)), "b")
        weights = rng.normal(size=(3, 2))
        assert gradcheck(lambda: weighted(matmul(a, b), weights), [a, b]) <= 1e-5

    def test_rowwise_rows_do_not_depend_on_batch(self, rng):
        a = Tensor(rng.normal(size=(7, 5)))
        b = Tensor(rng.normal(size=(5, 3)))
        with no_grad():
            full = matmul(a, b).data
            single = matmul(Tensor(a.data[4:5]), b).data
        np.testing.assert_array_equal(full[4], single[0])


class TestElementwise:

    def test_relu(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_sin(self):
        np.testing.assert_allclose(sin(Tensor([0.0, math.pi / 2])).data, [0.0, 1.0], atol=1e-15)

    def test_sin_gradient_at_point(self):
        x = parameter([0.3], "x")
        assert gradcheck(lambda: tensor_sum(sin(x)), [x]) <= 1e-6

    def test_dispatch_by_name(self):
        out = elementwise("scale", Tensor([1.0, -2.0]), 3.0)
        np.testing.assert_array_equal(out.data, [3.0, -6.0])

    def test_unknown_op(self):
        with pytest.raises(ParameterError):
            elementwise("tanh", Tensor([1.0]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            add(Tensor(np.ones(3)), Tensor(np.ones(2)))

    def test_scalar_broadcast(self):
        np.testing.assert_array_equal(sub(Tensor([1.0, 2.0]), 1.0).data, [0.0, 1.0])


class TestLayerNorm:

    def test_constant_input_gives_zero(self):
        out = layer_norm(Tensor([5.0, 5.0, 5.0, 5.0]), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, np.zeros(4))

    def test_already_normalised(self):
        np.testing.assert_allclose(layer_norm(Tensor([1.0, -1.0]), eps=1e-12).data, [1.0, -1.0], atol=1e-9)

    def test_random_vector_moments(self, rng):
        out = layer_norm(Tensor(rng.normal(size=16)), eps=1e-12).data
        assert abs(out.mean()) <= 1e-9
        assert abs(out.var() - 1.0) <= 1e-6

    def test_needs_two_features(self):
        with pytest.raises(DimensionError):
            layer_norm(Tensor([3.0]))


class TestSoftmax:

    @pytest.mark.parametrize("tau", [0.01, 0.1, 1.0, 10.0])
    def test_symmetric(self, tau):
        np.testing.assert_allclose(softmax(Tensor([0.4, 0.4, 0.4]), tau).data, [1 / 3] * 3)

    def test_low_temperature_limit(self):
        np.testing.assert_allclose(softmax(Tensor([1.0, 0.0]), 1e-3).data, [1.0, 0.0], atol=1e-12)

    def test_hand_value(self):
        expected = np.exp([9.0, 1.0, 2.0]) / np.exp([9.0, 1.0, 2.0]).sum()
        np.testing.assert_allclose(softmax(Tensor([0.9, 0.1, 0.2]), 0.1).data, expected, rtol=1e-12)

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_temperature_must_be_positive(self, tau):
        with pytest.raises(ParameterError):
            softmax(Tensor([1.0, 2.0]), tau)


class TestCrossEntropy:

    def test_uniform_logits(self):
        loss = cross_entropy(Tensor(np.zeros((3, 4))), np.array([0, 1, 3]))
        assert loss.item() == pytest.approx(math.log(4))

    def test_confident_correct(self):
        assert cross_entropy(Tensor([[100.0, 0.0]]), np.array([0])).item() == pytest.approx(0.0, abs=1e-12)

    def test_two_sample_hand_case(self):
        loss = cross_entropy(Tensor([[1.0, 2.0], [0.0, 0.0]]), np.array([1, 0]))
        expected = (math.log(1 + math.exp(-1)) + math.log(2)) / 2
        assert loss.item() == pytest.approx(expected, rel=1e-12)

    def test_reductions_agree(self, rng):
        logits = Tensor(rng.normal(size=(5, 3)))
        labels = np.array([0, 2, 1, 1, 0])
        per_sample = cross_entropy(logits, labels, "none").data
        assert cross_entropy(logits, labels, "sum").item() == pytest.approx(per_sample.sum())
        assert cross_entropy(logits, labels, "mean").item() == pytest.approx(per_sample.mean())

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            cross_entropy(Tensor(np.zeros((1, 2))), np.array([2]))


class TestTopK:

    def test_keeps_largest(self):
        out, kept = topk_mask(Tensor([9.0, 1.0, 2.0, 3.0, 8.0, 0.0, 0.0, 0.0]), 2)
        np.testing.assert_array_equal(kept, [0, 4])
        np.testing.assert_array_equal(out.data, [9, 0, 0, 0, 8, 0, 0, 0])

    def test_ties_go_to_lowest_index(self):
        _, kept = topk_mask(Tensor(np.zeros(6)), 3)
        np.testing.assert_array_equal(kept, [0, 1, 2])

    def test_k_range(self):
        with pytest.raises(ParameterError):
            topk_mask(Tensor(np.ones(4)), 5)

    def test_gradient_only_through_kept(self):
        x = parameter([3.0, 1.0, 2.0], "x")
        out, _ = topk_mask(x, 2)
        tensor_sum(out).backward()
        np.testing.assert_array_equal(x.grad, [1.0, 0.0, 1.0])


class TestCosineRows:

    def test_hand_value(self):
        out = cosine_rows(Tensor([[1.0, 1.0, 0.0]]), Tensor([1.0, 0.0, 0.0]))
        assert out.item() == pytest.approx(1 / math.sqrt(2))

    def test_zero_vector_scores_zero(self):
        x = parameter([[1.0, 2.0]], "x")
        out = cosine_rows(x, Tensor([0.0, 0.0]))
        tensor_sum(out).backward()
        assert out.item() == 0.0
        np.testing.assert_array_equal(x.grad, [[0.0, 0.0]])


# =============================================================================
# Gradient oracle over every op
# =============================================================================

def _cases(rng):
    """name -> (loss builder, targets) on fresh random inputs"""
    x = parameter(rng.normal(size=(4, 5)), "x")
    y = parameter(rng.normal(size=(4, 5)), "y")
    row = parameter(rng.normal(size=5), "row")
    positive = parameter(rng.uniform(0.5, 2.0, size=(4, 5)), "positive")
    gain = parameter(rng.normal(size=5), "gain")
    bias = parameter(rng.normal(size=5), "bias")
    w45 = rng.normal(size=(4, 5))
    w44 = rng.normal(size=(4, 4))
    w4 = rng.normal(size=4)
    labels = np.array([0, 4, 2, 2])
    rows = np.array([3, 0, 3])
    return {
        "add": (lambda: weighted(add(x, row), w45), [x, row]),
        "sub": (lambda: weighted(sub(x, y), w45), [x, y]),
        "mul": (lambda: weighted(mul(x, y), w45), [x, y]),
        "scale": (lambda: weighted(scale(x, -2.5), w45), [x]),
        "relu": (lambda: weighted(relu(x), w45), [x]),
        "sin": (lambda: weighted(sin(x), w45), [x]),
        "sigmoid": (lambda: weighted(sigmoid(x), w45), [x]),
        "abs": (lambda: weighted(absolute(x), w45), [x]),
        "square": (lambda: weighted(square(x), w45), [x]),
        "sqrt": (lambda: weighted(safe_sqrt(positive), w45), [positive]),
        "sum_axis": (lambda: weighted(tensor_sum(x, axis=1), w4), [x]),
        "mean": (lambda: tensor_mean(square(x)), [x]),
        "reshape": (lambda: weighted(reshape(x, (5, 4)), w45.reshape(5, 4)), [x]),
        "concat": (lambda: weighted(concat([x, y], axis=1), np.concatenate([w45, w45], axis=1)), [x, y]),
        "take_rows": (lambda: weighted(take_rows(x, rows), w45[:3]), [x]),
        "place_rows": (lambda: weighted(place_rows(x, np.array([5, 1, 0, 2]), 6),
                                        np.concatenate([w45, w45[:2]])), [x]),
        "layer_norm": (lambda: weighted(layer_norm(x, gain, bias), w45), [x, gain, bias]),
        "softmax": (lambda: weighted(softmax(x, 0.7), w45), [x]),
        "cross_entropy_mean": (lambda: cross_entropy(x, labels), [x]),
        "cross_entropy_none": (lambda: weighted(cross_entropy(x, labels, "none"), w4), [x]),
        "topk": (lambda: weighted(topk_mask(x, 2)[0], w45), [x]),
        "cosine_rows": (lambda: weighted(cosine_rows(x, y), w4), [x, y]),
        "cosine_shared": (lambda: weighted(cosine_rows(x, row), w4), [x, row]),
        "pairwise_sq_dist": (lambda: weighted(pairwise_sq_dist(x), w44), [x]),
    }


OP_NAMES = sorted(_cases(np.random.default_rng(0)))


class TestGradients:
    """Backward rules against central differences, step 1e-5."""

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("name", OP_NAMES)
    def test_op(self, name, seed):
        fn, targets = _cases(np.random.default_rng(seed))[name]
        assert gradcheck(fn, targets) <= OP_TOLERANCE

    def test_quadratic(self):
        w = parameter([1.0, 2.0], "w")
        tensor_sum(mul(w, w)).backward()
        np.testing.assert_array_equal(w.grad, [2.0, 4.0])

    def test_independent_parameter_gets_zero(self):
        w = parameter([1.0, 2.0], "w")
        v = parameter([3.0], "v")
        tensor_sum(square(v)).backward()
        np.testing.assert_array_equal(w.grad, [0.0, 0.0])

    def test_non_scalar_loss(self):
        w = parameter([1.0, 2.0], "w")
        with pytest.raises(ContractError):
            square(w).backward()

    def test_shared_node_is_summed_once(self):
        x = parameter([1.5, -2.0], "x")
        shared = square(x)
        tensor_sum(shared + shared).backward()
        np.testing.assert_allclose(x.grad, 4.0 * x.data)

    def test_gradients_accumulate(self):
        w = parameter([1.0, 2.0], "w")
        loss = tensor_sum(square(w))
        loss.backward()
        loss.backward()
        np.testing.assert_array_equal(w.grad, [4.0, 8.0])

    def test_linearity(self, rng):
        w = parameter(rng.normal(size=(3, 3)), "w")
        first = lambda: tensor_sum(sin(w))
        second = lambda: tensor_mean(square(matmul(w, w)))
        first().backward()
        second().backward()
        separate = w.grad.copy()
        w.zero_grad()
        (first() + second()).backward()
        np.testing.assert_allclose(w.grad, separate, rtol=1e-12, atol=1e-15)

    def test_numerical_gradient_restores_values(self, rng):
        w = parameter(rng.normal(size=3), "w")
        before = w.data.copy()
        numerical_gradient(lambda: tensor_sum(square(w)), w)
        np.testing.assert_array_equal(w.data, before)


class TestTape:

    def test_inputs_precede_users(self, rng):
        x = parameter(rng.normal(size=(2, 3)), "x")
        hidden = relu(matmul(x, Tensor(rng.normal(size=(3, 3)))))
        loss = tensor_sum(square(hidden) + hidden)
        tape = Tape.from_root(loss)
        position = {id(entry.output): index for index, entry in enumerate(tape)}
        for index, entry in enumerate(tape):
            for parent in entry.inputs:
                if id(parent) in position:
                    assert position[id(parent)] < index
        assert tape.leaves == [x]

    def test_no_grad_records_nothing(self):
        w = parameter([1.0, 2.0], "w")
        with no_grad():
            assert not is_grad_enabled()
            out = square(w)
        assert is_grad_enabled()
        assert not out.requires_grad
        assert out.is_leaf

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(3)
            w = parameter(rng.normal(size=(4, 4)), "w")
            loss = tensor_mean(sin(matmul(w, w)))
            loss.backward()
            return loss.item(), w.grad.copy()

        (first, grad_a), (second, grad_b) = run(), run()
        assert first == second
        np.testing.assert_array_equal(grad_a, grad_b)


# =============================================================================
# Adam
# =============================================================================

class TestAdam:

    def test_zero_gradient_fresh_state(self):
        params = {"w": np.array([1.0, -2.0])}
        updated, state = adam_step(params, {"w": np.zeros(2)}, AdamState())
        np.testing.assert_array_equal(updated["w"], params["w"])
        np.testing.assert_array_equal(state.first["w"], np.zeros(2))
        assert state.step == 1

    def test_moments_decay_without_gradient(self):
        state = AdamState(step=3, first={"w": np.array([1.0])}, second={"w": np.array([2.0])})
        _, new_state = adam_step({"w": np.array([0.0])}, {"w": np.zeros(1)}, state)
        assert new_state.first["w"][0] == pytest.approx(0.9)
        assert new_state.second["w"][0] == pytest.approx(2.0 * 0.999)

    def test_first_step_is_unit_step(self):
        updated, _ = adam_step({"w": np.array([1.0])}, {"w": np.array([1.0])}, AdamState(), lr=0.1)
        assert updated["w"][0] == pytest.approx(0.9, rel=1e-7)

    def test_inputs_untouched(self):
        params = {"w": np.array([1.0])}
        state = AdamState()
        adam_step(params, {"w": np.array([1.0])}, state)
        assert params["w"][0] == 1.0
        assert state.step == 0 and not state.first

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())

    def test_converges_on_quadratic(self):
        w = parameter([0.0], "w")
        optimizer = Adam([("w", w)], lr=0.1)
        for _ in range(100):
            optimizer.zero_grad()
            tensor_sum(square(w - 3.0)).backward()
            optimizer.step()
        assert abs(w.data[0] - 3.0) <= 0.5

    def test_frozen_parameters_are_skipped(self):
        w = parameter([1.0], "w")
        frozen = parameter([5.0], "frozen")
        optimizer = Adam([("w", w), ("frozen", frozen)], lr=0.1)
        tensor_sum(square(w) + square(frozen)).backward()
        frozen.set_requires_grad(False)
        optimizer.step()
        assert frozen.data[0] == 5.0
        assert w.data[0] < 1.0

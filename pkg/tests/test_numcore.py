import math
import unittest

import numpy as np
import pytest
from scipy.stats import norm

from utils.numcore import (
    ContractError,
    DimensionError,
    GradCheckError,
    NumericalError,
    backward,
    conv1d,
    cross_entropy,
    gelu,
    grad_check,
    layer_norm,
    log,
    matmul,
    softmax_rows,
    tensor,
)


class TestMatmul(unittest.TestCase):
    def test_identity(self):
        out = matmul(tensor(np.eye(2)), tensor([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_annihilating_product(self):
        out = matmul(tensor([[1.0, 0.0], [0.0, 0.0]]), tensor([[0.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        expected = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    expected[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(matmul(tensor(a), tensor(b)).data, expected, rtol=0, atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with self.assertRaises(DimensionError) as ctx:
            matmul(tensor(np.zeros((2, 3))), tensor(np.zeros((2, 3))))
        self.assertIn("(2, 3)", str(ctx.exception))


class TestSoftmax(unittest.TestCase):
    def test_uniform(self):
        np.testing.assert_allclose(softmax_rows(tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], atol=1e-15)

    def test_shift_invariance(self):
        x = np.array([[0.3, -1.2, 2.5]])
        np.testing.assert_allclose(softmax_rows(tensor(x)).data, softmax_rows(tensor(x + 100.0)).data, atol=1e-12)

    def test_direct_evaluation(self):
        e = np.exp([1.0, 2.0, 3.0])
        np.testing.assert_allclose(softmax_rows(tensor([[1.0, 2.0, 3.0]])).data[0], e / e.sum(), rtol=1e-14)

    def test_large_magnitudes_stay_normalised(self):
        x = np.random.default_rng(0).normal(size=(5, 7)) * 1e4
        sums = softmax_rows(tensor(x)).data.sum(axis=1)
        self.assertTrue(np.all(np.abs(sums - 1.0) < 1e-12))

    def test_empty_raises(self):
        with self.assertRaises(DimensionError):
            softmax_rows(tensor(np.zeros((2, 0))))


class TestGelu(unittest.TestCase):
    def test_zero(self):
        self.assertEqual(gelu(tensor([0.0])).data[0], 0.0)

    def test_asymptotics(self):
        out = gelu(tensor([20.0, -20.0])).data
        self.assertAlmostEqual(out[0], 20.0, places=9)
        self.assertAlmostEqual(out[1], 0.0, places=9)

    def test_exact_form_at_one(self):
        self.assertAlmostEqual(gelu(tensor([1.0])).data[0], 1.0 * norm.cdf(1.0), places=14)

    def test_tanh_form_is_close(self):
        x = np.linspace(-3, 3, 13)
        np.testing.assert_allclose(gelu(tensor(x), approximate=True).data, gelu(tensor(x)).data, atol=2e-3)


class TestLayerNorm(unittest.TestCase):
    def test_constant_row_maps_to_zero(self):
        out = layer_norm(tensor([[2.0, 2.0, 2.0]]), tensor(np.ones(3)), tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, np.zeros((1, 3)))

    def test_zero_gain_gives_bias(self):
        bias = np.array([0.5, -1.0, 2.0])
        out = layer_norm(tensor([[1.0, 5.0, -3.0]]), tensor(np.zeros(3)), tensor(bias))
        np.testing.assert_array_equal(out.data[0], bias)

    def test_hand_computation(self):
        x = np.array([1.0, 2.0, 3.0])
        expected = (x - 2.0) / math.sqrt(2.0 / 3.0 + 1e-5)
        out = layer_norm(tensor([x]), tensor(np.ones(3)), tensor(np.zeros(3)), eps=1e-5)
        np.testing.assert_allclose(out.data[0], expected, rtol=1e-12)

    def test_row_statistics(self):
        x = np.random.default_rng(1).normal(size=(6, 16)) * 3.0
        out = layer_norm(tensor(x), tensor(np.ones(16)), tensor(np.zeros(16))).data
        self.assertTrue(np.all(np.abs(out.mean(axis=1)) < 1e-9))
        var = x.var(axis=1)
        np.testing.assert_allclose(out.var(axis=1), var / (var + 1e-5), rtol=1e-9)

    def test_non_positive_eps_rejected(self):
        with self.assertRaises(ContractError):
            layer_norm(tensor([[1.0, 2.0]]), tensor(np.ones(2)), tensor(np.zeros(2)), eps=0.0)


class TestCrossEntropy(unittest.TestCase):
    def test_uniform_logits(self):
        self.assertAlmostEqual(cross_entropy(tensor([0.0, 0.0, 0.0]), 1).item(), math.log(3), places=14)

    def test_near_one_hot(self):
        self.assertAlmostEqual(cross_entropy(tensor([30.0, -30.0, -30.0]), 0).item(), 0.0, places=12)

    def test_direct_evaluation(self):
        expected = math.log(math.exp(1) + math.exp(2) + math.exp(3)) - 2.0
        self.assertAlmostEqual(cross_entropy(tensor([1.0, 2.0, 3.0]), 1).item(), expected, places=14)

    def test_label_out_of_range(self):
        with self.assertRaises(IndexError):
            cross_entropy(tensor([1.0, 2.0, 3.0]), 3)


class TestBackward(unittest.TestCase):
    def test_sum_gives_ones(self):
        x = tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_zero_times_anything(self):
        x = tensor([0.5, 1.5], requires_grad=True)
        backward((gelu(x) * 0.0).sum())
        np.testing.assert_array_equal(x.grad, np.zeros(2))

    def test_non_scalar_loss_rejected(self):
        x = tensor([1.0, 2.0], requires_grad=True)
        with self.assertRaises(ContractError):
            backward(x * 2.0)

    def test_shared_node_accumulates(self):
        x = tensor([2.0], requires_grad=True)
        y = x * 3.0
        backward((y * y + y).sum())
        np.testing.assert_allclose(x.grad, [2 * 9 * 2.0 + 3.0])

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        a_data, b_data = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))
        grads = []
        for _ in range(2):
            a, b = tensor(a_data, requires_grad=True), tensor(b_data, requires_grad=True)
            backward(softmax_rows(a @ b).sum() + layer_norm(a, tensor(np.ones(3)), tensor(np.zeros(3))).mean())
            grads.append((a.grad.copy(), b.grad.copy()))
        np.testing.assert_array_equal(grads[0][0], grads[1][0])
        np.testing.assert_array_equal(grads[0][1], grads[1][1])

    def test_nan_is_a_numerical_error(self):
        with self.assertRaises(NumericalError):
            log(tensor([-1.0]))

    def test_values_are_read_only(self):
        x = tensor([1.0, 2.0])
        with self.assertRaises(ValueError):
            x.data[0] = 5.0


class TestGradCheck(unittest.TestCase):
    def test_linear_is_exact(self):
        w = np.array([1.5, -2.0, 0.25])
        error = grad_check(lambda x: (x * w).sum(), [tensor([0.1, 0.2, 0.3])])
        self.assertLess(error, 1e-9)

    def test_constant_has_zero_error(self):
        self.assertEqual(grad_check(lambda x: (x * 0.0).sum() + 4.0, [tensor([1.0, 2.0])]), 0.0)

    def test_non_finite_point_raises(self):
        with self.assertRaises(GradCheckError):
            grad_check(lambda x: log(x).sum(), [tensor([5e-5])], h=1e-4)

    def test_rejects_non_positive_step(self):
        with self.assertRaises(ContractError):
            grad_check(lambda x: x.sum(), [tensor([1.0])], h=0.0)


@pytest.mark.parametrize("seed", range(10))
def test_differentiable_ops_pass_grad_check(seed):
    rng = np.random.default_rng(seed)
    w_conv = rng.normal(size=(4, 3))
    w_ln = rng.normal(size=(3, 4))
    w_sm = rng.normal(size=(2, 5))
    label = int(rng.integers(3))
    cases = [
        (lambda a, b: (a @ b).sum(), [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]),
        (lambda m: (softmax_rows(m) * w_sm).sum(), [rng.normal(size=(2, 5))]),
        (lambda x: gelu(x).sum(), [rng.normal(size=7)]),
        (lambda x: gelu(x, approximate=True).sum(), [rng.normal(size=7)]),
        (lambda x, g, b: (layer_norm(x, g, b) * w_ln).sum(), [rng.normal(size=(3, 4)), rng.normal(size=4), rng.normal(size=4)]),
        (lambda z: cross_entropy(z, label), [rng.normal(size=3)]),
        (lambda x, k, b: (conv1d(x, k, b, 2) * w_conv).sum(), [rng.normal(size=(10, 2)), rng.normal(size=(3, 2, 3)), rng.normal(size=3)]),
    ]
    for fn, inputs in cases:
        assert grad_check(fn, [tensor(x) for x in inputs], h=1e-5) < 1e-4


def test_conv1d_frame_count():
    out = conv1d(tensor(np.ones((10, 1))), tensor(np.ones((2, 1, 1))), tensor([0.0]), 2)
    assert out.shape == (5, 1)
    np.testing.assert_array_equal(out.data[:, 0], np.full(5, 2.0))

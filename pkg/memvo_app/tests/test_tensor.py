import math
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from utils.optimizer import AdamState, adam_step
from utils.tensor import parameter, constant, backward, conv2d, elementwise_unary, add, sub, mul, scale, \
    wrap_angles, concat_channels, slice_channels, global_avg_pool, linear, softmax_vec, sum_all, \
    weighted_sum_scalars, weighted_sum, channel_scale, cosine_similarity, channel_cosine_similarity, l2_norm, \
    no_grad, is_grad_enabled, stack, Graph
from utils.utilities import ShapeError, ContractError


FD_STEP = 1e-5
MAX_RELATIVE_ERROR = 1e-4


def gradient_errors(loss_fcn, params, max_entries=None, rng=None):
    """
    Compares backward() gradients against central finite differences.

    :param loss_fcn: a no-arg function returning a single-element Tensor that depends on params
    :param params: list of parameter Tensors
    :param max_entries: if passed, only this many randomly chosen entries (drawn from rng) of each parameter are
        checked
    :return: list of relative errors, one per parameter: ||analytic - numeric|| / (||analytic|| + ||numeric||)
    """
    for param in params:
        param.zero_grad()
    backward(loss_fcn())
    errors = []
    for param in params:
        flat = param.data.reshape(-1)  # a view
        indices = np.arange(flat.size)
        if (max_entries is not None) and (flat.size > max_entries):
            indices = rng.choice(flat.size, size=max_entries, replace=False)
        analytic = np.zeros(len(indices)) if param.grad is None else param.grad.reshape(-1)[indices]
        numeric = np.zeros(len(indices))
        for entry_idx, flat_idx in enumerate(indices):
            orig_value = flat[flat_idx]
            flat[flat_idx] = orig_value + FD_STEP
            loss_plus = loss_fcn().item()
            flat[flat_idx] = orig_value - FD_STEP
            loss_minus = loss_fcn().item()
            flat[flat_idx] = orig_value
            numeric[entry_idx] = (loss_plus - loss_minus) / (2 * FD_STEP)
        denominator = np.linalg.norm(analytic) + np.linalg.norm(numeric)
        errors.append(0.0 if denominator < 1e-12 else float(np.linalg.norm(analytic - numeric) / denominator))
    return errors


def naive_conv2d(x, kernel, bias, stride, padding):
    c_in, height, width = x.shape
    c_out, _, k, _ = kernel.shape
    padded = np.zeros((c_in, height + 2 * padding, width + 2 * padding))
    padded[:, padding:padding + height, padding:padding + width] = x
    out_h = (height + 2 * padding - k) // stride + 1
    out_w = (width + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, out_h, out_w))
    for o in range(c_out):
        for i in range(out_h):
            for j in range(out_w):
                total = bias[o]
                for c in range(c_in):
                    for u in range(k):
                        for v in range(k):
                            total += kernel[o, c, u, v] * padded[c, i * stride + u, j * stride + v]
                out[o, i, j] = total
    return out


class TensorOpsTestCase(unittest.TestCase):
    """
    """


    def setUp(self):
        self.rng = np.random.default_rng(17)


    def test_conv2d_examples(self):
        x = self.rng.normal(size=(3, 5, 5))
        identity = conv2d(constant(x), constant(np.eye(3)[:, :, None, None]), constant(np.zeros(3)))
        assert_array_equal(x, identity.data)

        bias_only = conv2d(constant(x), constant(np.zeros((2, 3, 3, 3))), constant([1.5, -2.0]))
        assert_array_equal(np.full((3, 3), 1.5), bias_only.data[0])
        assert_array_equal(np.full((3, 3), -2.0), bias_only.data[1])


    def test_conv2d_matches_naive_oracle(self):
        for stride, padding in [(1, 0), (1, 1), (2, 1), (2, 2)]:
            x = self.rng.normal(size=(3, 5, 5))
            kernel = self.rng.normal(size=(4, 3, 3, 3))
            bias = self.rng.normal(size=4)
            act_out = conv2d(constant(x), constant(kernel), constant(bias), stride=stride, padding=padding)
            assert_allclose(naive_conv2d(x, kernel, bias, stride, padding), act_out.data, rtol=0, atol=1e-10)


    def test_conv2d_shape_errors(self):
        with self.assertRaises(ShapeError):
            conv2d(constant(np.zeros((2, 4, 4))), constant(np.zeros((1, 3, 3, 3))), constant(np.zeros(1)))
        with self.assertRaises(ContractError):  # even kernel
            conv2d(constant(np.zeros((2, 4, 4))), constant(np.zeros((1, 2, 2, 2))), constant(np.zeros(1)))


    def test_elementwise_unary(self):
        self.assertEqual(0.5, elementwise_unary(constant(0.0), 'sigmoid').item())
        self.assertEqual(0.0, elementwise_unary(constant(0.0), 'tanh').item())
        grid = np.linspace(-5, 5, 41)
        exp_sigmoid = [1.0 / (1.0 + math.exp(-x)) for x in grid]
        assert_allclose(exp_sigmoid, elementwise_unary(constant(grid), 'sigmoid').data, rtol=0, atol=1e-15)
        assert_array_equal([0.0, 0.0, 2.0], elementwise_unary(constant([-1.0, 0.0, 2.0]), 'relu').data)
        assert_allclose([-0.1, 2.0], elementwise_unary(constant([-1.0, 2.0]), 'leaky_relu').data)
        with self.assertRaises(ContractError):
            elementwise_unary(constant(0.0), 'gelu')


    def test_binary(self):
        a, b = self.rng.normal(size=(2, 3, 3)), self.rng.normal(size=(2, 3, 3))
        assert_array_equal(a, add(constant(a), constant(np.zeros_like(a))).data)
        assert_array_equal(a, mul(constant(a), constant(np.ones_like(a))).data)
        assert_allclose(a, add(sub(constant(a), constant(b)), constant(b)).data, rtol=0, atol=1e-12)
        with self.assertRaises(ShapeError):
            add(constant(np.zeros(3)), constant(np.zeros(4)))


    def test_concat_and_slice_channels(self):
        part_a, part_b = self.rng.normal(size=(2, 3, 4)), self.rng.normal(size=(3, 3, 4))
        assert_array_equal(part_a, concat_channels([constant(part_a)]).data)
        concat = concat_channels([constant(part_a), constant(part_b)])
        self.assertEqual([5, 3, 4], concat.shape)
        assert_array_equal(part_b[1], concat.data[3])
        assert_array_equal(part_a, slice_channels(concat, 0, 2).data)
        assert_array_equal(part_b, slice_channels(concat, 2, 5).data)
        with self.assertRaises(ShapeError):
            concat_channels([constant(np.zeros((1, 3, 4))), constant(np.zeros((1, 3, 5)))])
        with self.assertRaises(ShapeError):
            slice_channels(concat, 3, 6)


    def test_global_avg_pool(self):
        assert_array_equal([2.5], global_avg_pool(constant(np.full((1, 3, 3), 2.5))).data)
        self.assertEqual(4.0, global_avg_pool(constant([[[1.0, 3.0], [5.0, 7.0]]])).item())
        a, b = self.rng.normal(size=(2, 3, 3)), self.rng.normal(size=(2, 3, 3))
        assert_allclose(global_avg_pool(constant(a)).data + global_avg_pool(constant(b)).data,
                        global_avg_pool(add(constant(a), constant(b))).data, rtol=0, atol=1e-12)


    def test_linear(self):
        x = self.rng.normal(size=6)
        assert_array_equal(x, linear(constant(x), constant(np.eye(6)), constant(np.zeros(6))).data)
        assert_array_equal([1.0, 2.0], linear(constant(x), constant(np.zeros((2, 6))), constant([1.0, 2.0])).data)
        weight, bias = self.rng.normal(size=(4, 6)), self.rng.normal(size=4)
        exp_out = [sum(weight[row, col] * x[col] for col in range(6)) + bias[row] for row in range(4)]
        assert_allclose(exp_out, linear(constant(x), constant(weight), constant(bias)).data, rtol=0, atol=1e-12)
        with self.assertRaises(ShapeError):
            linear(constant(x), constant(np.zeros((2, 5))), constant(np.zeros(2)))


    def test_softmax_vec(self):
        assert_allclose([0.25] * 4, softmax_vec(constant([3.0] * 4)).data, rtol=0, atol=1e-15)
        assert_allclose([math.e / (math.e + 1), 1 / (math.e + 1)], softmax_vec(constant([1.0, 0.0])).data,
                        rtol=0, atol=1e-15)
        self.assertAlmostEqual(0.73106, softmax_vec(constant([1.0, 0.0])).data[0], places=5)
        logits = self.rng.normal(size=7)
        assert_allclose(softmax_vec(constant(logits)).data, softmax_vec(constant(logits + 123.4)).data,
                        rtol=0, atol=1e-12)
        large = softmax_vec(constant([1000.0, 0.0, -1000.0])).data  # no overflow
        self.assertTrue(np.all(np.isfinite(large)))
        self.assertAlmostEqual(1.0, float(large.sum()), delta=1e-9)


    def test_cosine_similarity(self):
        a = self.rng.normal(size=(2, 3, 3))
        self.assertAlmostEqual(1.0, cosine_similarity(constant(a), constant(a)).item(), delta=1e-12)
        self.assertAlmostEqual(-1.0, cosine_similarity(constant(a), constant(-a)).item(), delta=1e-12)
        self.assertEqual(0.0, cosine_similarity(constant([1.0, 0.0]), constant([0.0, 2.0])).item())
        self.assertEqual(0.0, cosine_similarity(constant([0.0, 0.0]), constant([0.0, 2.0])).item())

        act_channel = channel_cosine_similarity(constant(a), constant(np.concatenate([a[:1], -a[1:]])))
        assert_allclose([1.0, -1.0], act_channel.data, rtol=0, atol=1e-12)


    def test_wrap_angles(self):
        wrapped = wrap_angles(constant([0.0, math.pi, -math.pi, 3 * math.pi / 2, -3 * math.pi / 2, 7.0])).data
        assert_allclose([0.0, math.pi, math.pi, -math.pi / 2, math.pi / 2, 7.0 - 2 * math.pi], wrapped,
                        rtol=0, atol=1e-12)


    def test_stack_and_weighted_sums(self):
        scalars = [constant(1.0), constant(2.0), constant(4.0)]
        assert_array_equal([1.0, 2.0, 4.0], stack(scalars).data)
        self.assertEqual(1.0 * 0.5 + 2.0 * 0.25 + 4.0 * 0.125,
                         weighted_sum_scalars(scalars, [0.5, 0.25, 0.125]).item())
        tensors = [constant(np.full((2, 2), value)) for value in [1.0, 3.0]]
        assert_allclose(np.full((2, 2), 2.5), weighted_sum(constant([0.25, 0.75]), tensors).data)
        assert_allclose([[[2.0]], [[-3.0]]], channel_scale(constant([[[1.0]], [[1.5]]]), constant([2.0, -2.0])).data)


class BackwardTestCase(unittest.TestCase):
    """
    """


    def setUp(self):
        self.rng = np.random.default_rng(23)


    def test_simple_gradients(self):
        param = parameter(self.rng.normal(size=(2, 3)))
        backward(sum_all(param))
        assert_array_equal(np.ones((2, 3)), param.grad)

        param.zero_grad()
        backward(sum_all(mul(param, param)))
        assert_allclose(2 * param.data, param.grad, rtol=0, atol=1e-15)


    def test_backward_requires_scalar(self):
        with self.assertRaises(ContractError):
            backward(parameter(np.zeros(3)))


    def test_backward_frees_graph(self):
        param = parameter([1.0, 2.0])
        loss = sum_all(mul(param, param))
        backward(loss)
        self.assertEqual((), loss.parents)
        self.assertIsNone(loss.backward_fcn)


    def test_graph_is_topological(self):
        param = parameter(self.rng.normal(size=3))
        hidden = mul(param, param)
        loss = sum_all(add(hidden, scale(hidden, 2.0)))
        nodes = Graph.from_output(loss).nodes
        positions = {id(node): idx for idx, node in enumerate(nodes)}
        for node in nodes:
            for parent in node.parents:
                if parent.requires_grad:
                    self.assertLess(positions[id(parent)], positions[id(node)])
        self.assertEqual([param], Graph.from_output(loss).parameters())


    def test_no_grad(self):
        param = parameter([1.0, 2.0])
        with no_grad():
            self.assertFalse(is_grad_enabled())
            out = mul(param, param)
        self.assertTrue(is_grad_enabled())
        self.assertFalse(out.requires_grad)
        self.assertTrue(mul(param, param).requires_grad)

        detached = mul(param, param).detach()
        self.assertFalse(detached.requires_grad)
        self.assertEqual([1.0, 4.0], detached.data.tolist())


    def test_op_gradients(self):
        fmap_a = parameter(self.rng.normal(size=(2, 4, 4)))
        fmap_b = parameter(self.rng.normal(size=(2, 4, 4)))
        kernel = parameter(self.rng.normal(size=(3, 2, 3, 3)) * 0.5)
        bias = parameter(self.rng.normal(size=3))
        vector = parameter(self.rng.normal(size=5))
        weight = parameter(self.rng.normal(size=(3, 5)))
        lin_bias = parameter(self.rng.normal(size=3))
        alphas = parameter(self.rng.normal(size=2))
        angles = parameter(self.rng.uniform(-3.0, 3.0, size=4))
        cases = {
            'conv2d': (lambda: sum_all(mul(conv2d(fmap_a, kernel, bias, stride=2, padding=1),
                                           conv2d(fmap_a, kernel, bias, stride=2, padding=1))),
                       [fmap_a, kernel, bias]),
            'unary': (lambda: sum_all(add(add(elementwise_unary(fmap_a, 'sigmoid'), elementwise_unary(fmap_a, 'tanh')),
                                          add(elementwise_unary(fmap_a, 'relu'),
                                              mul(elementwise_unary(fmap_a, 'leaky_relu'), fmap_b)))),
                      [fmap_a, fmap_b]),
            'concat_slice': (lambda: sum_all(mul(slice_channels(concat_channels([fmap_a, fmap_b]), 1, 3),
                                                 concat_channels([slice_channels(fmap_b, 0, 1),
                                                                  slice_channels(fmap_a, 0, 1)]))),
                             [fmap_a, fmap_b]),
            'pool_linear_softmax': (lambda: sum_all(mul(softmax_vec(linear(vector, weight, lin_bias)),
                                                        linear(vector, weight, lin_bias))),
                                    [vector, weight, lin_bias]),
            'cosine': (lambda: add(cosine_similarity(fmap_a, fmap_b),
                                   sum_all(channel_cosine_similarity(fmap_a, fmap_b))), [fmap_a, fmap_b]),
            'weighted': (lambda: l2_norm(add(weighted_sum(softmax_vec(alphas), [fmap_a, fmap_b]),
                                             channel_scale(fmap_b, global_avg_pool(fmap_a)))),
                         [alphas, fmap_a, fmap_b]),
            'wrap_stack': (lambda: l2_norm(wrap_angles(mul(angles, stack([l2_norm(vector), l2_norm(vector),
                                                                           cosine_similarity(fmap_a, fmap_b),
                                                                           constant(1.0)])))),
                           [angles, vector, fmap_a, fmap_b]),
        }
        for name, (loss_fcn, params) in cases.items():
            for error in gradient_errors(loss_fcn, params):
                self.assertLess(error, MAX_RELATIVE_ERROR, name)


class AdamTestCase(unittest.TestCase):
    """
    """


    def test_zero_grad_no_decay_is_a_no_op(self):
        param = parameter([1.0, -2.0])
        state = AdamState.for_parameters([param], lr=0.1, weight_decay=0.0)
        adam_step([param], [np.zeros(2)], state)
        assert_array_equal([1.0, -2.0], param.data)
        self.assertEqual(1, state.step)


    def test_descent_direction(self):
        param = parameter([1.0])
        state = AdamState.for_parameters([param], lr=1e-4)
        adam_step([param], [np.ones(1)], state)
        self.assertLess(param.data[0], 1.0)


    def test_quadratic_converges(self):
        param = parameter([0.0])
        state = AdamState.for_parameters([param], lr=0.1, weight_decay=0.0)
        for _ in range(200):
            param.zero_grad()
            diff = sub(param, constant([3.0]))
            backward(sum_all(mul(diff, diff)))
            adam_step([param], [param.grad], state)
        self.assertLess(abs(param.data[0] - 3.0), 1e-3)


    def test_shape_mismatch(self):
        param = parameter([1.0, 2.0])
        state = AdamState.for_parameters([param])
        with self.assertRaises(ShapeError):
            adam_step([param], [np.zeros(3)], state)
        with self.assertRaises(ContractError):
            adam_step([param], [], state)

import logging
import math
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils.utilities import ShapeError, ContractError


logger = logging.getLogger(__name__)


#
# A minimal dense tensor engine with reverse-mode differentiation. Everything is float64. Each op computes its result
# with numpy and, when any input requires a gradient, records a closure that maps the output gradient to one gradient
# per input. backward() walks the recorded graph in reverse topological order and frees it afterwards.
#

# vectors whose L2 norm is below this are treated as zero by cosine_similarity() and l2_norm()
ZERO_NORM_EPS = 1e-12

UNARY_MODES = ('sigmoid', 'tanh', 'relu', 'leaky_relu')
BINARY_MODES = ('add', 'sub', 'mul')
LEAKY_RELU_SLOPE = 0.1

_is_grad_enabled = True


@contextmanager
def no_grad():
    """
    Context manager that disables graph recording, e.g., for inference. Results created inside it never require grad.
    """
    global _is_grad_enabled
    prev_is_grad_enabled = _is_grad_enabled
    _is_grad_enabled = False
    try:
        yield
    finally:
        _is_grad_enabled = prev_is_grad_enabled


def is_grad_enabled():
    return _is_grad_enabled


#
# ---- Tensor ----
#

class Tensor:
    """
    A dense array of float64 scalars that can participate in a differentiable computation. Leaf tensors with
    requires_grad=True are parameters: backward() accumulates into their `grad`. Non-leaf tensors remember the op that
    created them (`parents` and `backward_fcn`) until the graph is freed.
    """


    def __init__(self, data, requires_grad=False, parents=(), backward_fcn=None, op_name='leaf'):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None  # np.ndarray of self.data.shape once backward() reaches us
        self.parents = tuple(parents)
        self.backward_fcn = backward_fcn
        self.op_name = op_name


    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op_name!r}, requires_grad={self.requires_grad})"


    @property
    def shape(self):
        return list(self.data.shape)


    @property
    def size(self):
        return int(self.data.size)


    def is_leaf(self):
        return self.backward_fcn is None


    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() requires a single-element tensor. shape={self.shape}")

        return float(self.data.reshape(-1)[0])


    def numpy(self):
        return self.data.copy()


    def detach(self):
        return Tensor(self.data)


    def zero_grad(self):
        self.grad = None


def parameter(data):
    """
    :return: a leaf Tensor that requires grad
    """
    return Tensor(data, requires_grad=True)


def constant(data):
    return Tensor(data)


def zeros(shape):
    return Tensor(np.zeros(shape))


def _result(data, parents, backward_fcn, op_name):
    # records the op only if grad tracking is on and some input needs a gradient
    requires_grad = _is_grad_enabled and any(parent.requires_grad for parent in parents)
    if not requires_grad:
        return Tensor(data, op_name=op_name)

    return Tensor(data, requires_grad=True, parents=parents, backward_fcn=backward_fcn, op_name=op_name)


#
# ---- Graph and backward() ----
#

class Graph:
    """
    The recorded operations reachable from an output tensor, in execution (topological) order: every node's parents
    precede it.
    """


    def __init__(self, nodes):
        self.nodes = nodes


    def __repr__(self):
        return f"Graph(num_nodes={len(self.nodes)})"


    @classmethod
    def from_output(cls, output):
        # iterative post-order DFS. recursion would overflow on long sequences
        nodes = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, is_expanded = stack.pop()
            if is_expanded:
                nodes.append(node)
                continue

            if id(node) in visited:
                continue

            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node.parents):
                if parent.requires_grad and (id(parent) not in visited):
                    stack.append((parent, False))
        return cls(nodes)


    def parameters(self):
        """
        :return: the leaf nodes that require grad, i.e., the parameters reachable from the output
        """
        return [node for node in self.nodes if node.is_leaf() and node.requires_grad]


    def free(self):
        for node in self.nodes:
            if not node.is_leaf():
                node.parents = ()
                node.backward_fcn = None


def backward(loss):
    """
    Populates `grad` of every parameter reachable from `loss` with d(loss)/d(parameter), accumulating into any existing
    grad. Frees the recorded graph afterwards.

    :param loss: a single-element Tensor
    :raises ContractError: if loss is not a scalar
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() requires a scalar loss. shape={loss.shape}")

    if not loss.requires_grad:
        logger.debug("backward(): loss does not depend on any parameter")
        return

    graph = Graph.from_output(loss)
    node_id_to_grad = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        grad = node_id_to_grad.pop(id(node), None)
        if grad is None:
            continue

        if node.is_leaf():
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue

        parent_grads = node.backward_fcn(grad)
        for parent, parent_grad in zip(node.parents, parent_grads):
            if (parent_grad is None) or (not parent.requires_grad):
                continue

            if id(parent) in node_id_to_grad:
                node_id_to_grad[id(parent)] = node_id_to_grad[id(parent)] + parent_grad
            else:
                node_id_to_grad[id(parent)] = parent_grad
    graph.free()


#
# ---- convolution ----
#

def conv2d(input, kernel, bias, stride=1, padding=0):
    """
    2D cross-correlation of a [C_in, H, W] input with a [C_out, C_in, k, k] kernel, plus a per-output-channel bias.
    Output spatial size is floor((H + 2*padding - k) / stride) + 1 (same for W).
    """
    x, w, b = input.data, kernel.data, bias.data
    if (x.ndim != 3) or (w.ndim != 4):
        raise ShapeError(f"conv2d(): expected a 3D input and 4D kernel. input={input.shape}, kernel={kernel.shape}")

    c_in, height, width = x.shape
    c_out, kernel_c_in, k, k_width = w.shape
    if kernel_c_in != c_in:
        raise ShapeError(f"conv2d(): input channels do not match kernel. input={input.shape}, kernel={kernel.shape}")
    elif (k != k_width) or (k % 2 == 0):
        raise ContractError(f"conv2d(): kernel must be square with an odd size. kernel={kernel.shape}")
    elif b.shape != (c_out,):
        raise ShapeError(f"conv2d(): bias must have {c_out} elements. bias={bias.shape}")
    elif (stride < 1) or (padding < 0):
        raise ContractError(f"conv2d(): invalid stride or padding. stride={stride}, padding={padding}")

    out_height = (height + 2 * padding - k) // stride + 1
    out_width = (width + 2 * padding - k) // stride + 1
    if (out_height < 1) or (out_width < 1):
        raise ShapeError(f"conv2d(): input too small for kernel. input={input.shape}, kernel={kernel.shape}, "
                         f"padding={padding}")

    x_pad = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(x_pad, (k, k), axis=(1, 2))[:, ::stride, ::stride]  # [c_in, oh, ow, k, k]
    out = np.tensordot(w, windows, axes=([1, 2, 3], [0, 3, 4])) + b[:, None, None]


    def backward_fcn(grad):
        grad_kernel = np.tensordot(grad, windows, axes=([1, 2], [1, 2]))
        grad_bias = grad.sum(axis=(1, 2))
        grad_windows = np.tensordot(w, grad, axes=([0], [0])).transpose(0, 3, 4, 1, 2)
        grad_pad = np.zeros_like(x_pad)
        for di in range(k):
            for dj in range(k):
                grad_pad[:, di:di + stride * out_height:stride, dj:dj + stride * out_width:stride] += \
                    grad_windows[:, :, :, di, dj]
        grad_input = grad_pad[:, padding:padding + height, padding:padding + width]
        return grad_input, grad_kernel, grad_bias


    return _result(out, (input, kernel, bias), backward_fcn, 'conv2d')


#
# ---- elementwise ops ----
#

def _stable_sigmoid(x):
    # avoids overflow in exp() for large |x|
    out = np.empty_like(x)
    is_pos = x >= 0
    out[is_pos] = 1.0 / (1.0 + np.exp(-x[is_pos]))
    exp_x = np.exp(x[~is_pos])
    out[~is_pos] = exp_x / (1.0 + exp_x)
    return out


def elementwise_unary(input, mode):
    """
    :param mode: one of UNARY_MODES. 'leaky_relu' uses LEAKY_RELU_SLOPE
    """
    x = input.data
    if mode == 'sigmoid':
        out = _stable_sigmoid(x)
        derivative = out * (1.0 - out)
    elif mode == 'tanh':
        out = np.tanh(x)
        derivative = 1.0 - out * out
    elif mode == 'relu':
        out = np.where(x > 0, x, 0.0)
        derivative = (x > 0).astype(np.float64)
    elif mode == 'leaky_relu':
        out = np.where(x > 0, x, LEAKY_RELU_SLOPE * x)
        derivative = np.where(x > 0, 1.0, LEAKY_RELU_SLOPE)
    else:
        raise ContractError(f"invalid unary mode: {mode!r}. valid modes: {UNARY_MODES}")

    return _result(out, (input,), lambda grad: (grad * derivative,), mode)


def sigmoid(input):
    return elementwise_unary(input, 'sigmoid')


def tanh(input):
    return elementwise_unary(input, 'tanh')


def relu(input):
    return elementwise_unary(input, 'relu')


def leaky_relu(input):
    return elementwise_unary(input, 'leaky_relu')


def binary(a, b, mode):
    """
    Elementwise add, sub, or mul of two identically-shaped tensors.
    """
    if a.data.shape != b.data.shape:
        raise ShapeError(f"binary(): shape mismatch. a={a.shape}, b={b.shape}, mode={mode!r}")

    if mode == 'add':
        return _result(a.data + b.data, (a, b), lambda grad: (grad, grad), 'add')
    elif mode == 'sub':
        return _result(a.data - b.data, (a, b), lambda grad: (grad, -grad), 'sub')
    elif mode == 'mul':
        a_data, b_data = a.data, b.data
        return _result(a_data * b_data, (a, b), lambda grad: (grad * b_data, grad * a_data), 'mul')
    else:
        raise ContractError(f"invalid binary mode: {mode!r}. valid modes: {BINARY_MODES}")


def add(a, b):
    return binary(a, b, 'add')


def sub(a, b):
    return binary(a, b, 'sub')


def mul(a, b):
    return binary(a, b, 'mul')


def scale(input, factor):
    """
    Multiplies by a python float constant.
    """
    factor = float(factor)
    return _result(input.data * factor, (input,), lambda grad: (grad * factor,), 'scale')


def wrap_angles(input):
    """
    Wraps each element to (-pi, pi]. The wrap only adds multiples of 2*pi, so the gradient passes through unchanged.
    """
    x = input.data
    out = x - 2.0 * math.pi * np.ceil((x - math.pi) / (2.0 * math.pi))
    return _result(out, (input,), lambda grad: (grad,), 'wrap_angles')


#
# ---- channel and vector bookkeeping ----
#

def concat_channels(parts):
    """
    Concatenates [C_i, H, W] tensors along the channel axis, in argument order.
    """
    if not parts:
        raise ContractError("concat_channels(): no parts")

    spatial = parts[0].data.shape[1:]
    for part in parts:
        if (part.data.ndim != 3) or (part.data.shape[1:] != spatial):
            raise ShapeError(f"concat_channels(): spatial mismatch. shapes={[p.shape for p in parts]}")

    boundaries = np.cumsum([0] + [part.data.shape[0] for part in parts])
    out = np.concatenate([part.data for part in parts], axis=0)


    def backward_fcn(grad):
        return tuple(grad[start:stop] for start, stop in zip(boundaries[:-1], boundaries[1:]))


    return _result(out, tuple(parts), backward_fcn, 'concat_channels')


def slice_channels(input, start, stop):
    """
    :return: channels [start, stop) of a [C, H, W] tensor. also works on vectors, slicing the first axis
    """
    if not (0 <= start < stop <= input.data.shape[0]):
        raise ShapeError(f"slice_channels(): invalid range [{start}, {stop}) for shape={input.shape}")

    in_shape = input.data.shape


    def backward_fcn(grad):
        grad_input = np.zeros(in_shape)
        grad_input[start:stop] = grad
        return grad_input,


    return _result(input.data[start:stop], (input,), backward_fcn, 'slice_channels')


def stack(scalars):
    """
    :return: a vector whose i-th element is scalars[i] (each a single-element tensor)
    """
    for scalar in scalars:
        if scalar.data.size != 1:
            raise ShapeError(f"stack(): expected single-element tensors. got shape={scalar.shape}")

    out = np.array([scalar.data.reshape(-1)[0] for scalar in scalars])
    shapes = [scalar.data.shape for scalar in scalars]
    return _result(out, tuple(scalars), lambda grad: tuple(grad[i].reshape(shape) for i, shape in enumerate(shapes)),
                   'stack')


def global_avg_pool(input):
    """
    [C, H, W] -> [C]: per-channel mean over spatial positions.
    """
    if input.data.ndim != 3:
        raise ShapeError(f"global_avg_pool(): expected [C, H, W]. shape={input.shape}")

    _, height, width = input.data.shape
    num_positions = height * width
    out = input.data.mean(axis=(1, 2))


    def backward_fcn(grad):
        return np.broadcast_to(grad[:, None, None] / num_positions, (len(grad), height, width)).copy(),


    return _result(out, (input,), backward_fcn, 'global_avg_pool')


def linear(input, weight, bias):
    """
    out = weight @ input + bias, for input [n], weight [m, n], bias [m].
    """
    x, w, b = input.data, weight.data, bias.data
    if (x.ndim != 1) or (w.ndim != 2) or (w.shape[1] != x.shape[0]) or (b.shape != (w.shape[0],)):
        raise ShapeError(f"linear(): dimension mismatch. input={input.shape}, weight={weight.shape}, "
                         f"bias={bias.shape}")

    return _result(w @ x + b, (input, weight, bias), lambda grad: (w.T @ grad, np.outer(grad, x), grad), 'linear')


def softmax_vec(logits):
    """
    Numerically stable softmax of a vector (max-subtraction).
    """
    if (logits.data.ndim != 1) or (logits.data.size < 1):
        raise ShapeError(f"softmax_vec(): expected a non-empty vector. shape={logits.shape}")

    exps = np.exp(logits.data - logits.data.max())
    out = exps / exps.sum()
    return _result(out, (logits,), lambda grad: (out * (grad - np.dot(grad, out)),), 'softmax_vec')


def sum_all(input):
    in_shape = input.data.shape
    return _result(np.array(input.data.sum()), (input,), lambda grad: (np.full(in_shape, float(grad)),), 'sum_all')


def weighted_sum_scalars(scalars, weights):
    """
    :return: sum_i weights[i] * scalars[i], where weights are python floats
    """
    if len(scalars) != len(weights):
        raise ShapeError(f"weighted_sum_scalars(): {len(scalars)} scalars but {len(weights)} weights")

    weights = [float(weight) for weight in weights]
    out = sum(weight * scalar.item() for weight, scalar in zip(weights, scalars))
    shapes = [scalar.data.shape for scalar in scalars]
    return _result(np.array(out), tuple(scalars),
                   lambda grad: tuple(np.full(shape, weight * float(grad)) for shape, weight in zip(shapes, weights)),
                   'weighted_sum_scalars')


def weighted_sum(weights, tensors):
    """
    :param weights: a vector Tensor [n]
    :param tensors: n identically-shaped Tensors
    :return: sum_i weights[i] * tensors[i]
    """
    if (weights.data.ndim != 1) or (weights.data.size != len(tensors)):
        raise ShapeError(f"weighted_sum(): {len(tensors)} tensors but weights shape={weights.shape}")

    t_shape = tensors[0].data.shape
    if any(tensor.data.shape != t_shape for tensor in tensors):
        raise ShapeError(f"weighted_sum(): shape mismatch. shapes={[tensor.shape for tensor in tensors]}")

    w = weights.data
    stacked = np.stack([tensor.data for tensor in tensors])
    out = np.tensordot(w, stacked, axes=1)


    def backward_fcn(grad):
        grad_weights = np.tensordot(stacked, grad, axes=grad.ndim)
        return (grad_weights,) + tuple(w_i * grad for w_i in w)


    return _result(out, (weights,) + tuple(tensors), backward_fcn, 'weighted_sum')


def channel_scale(input, weights):
    """
    Multiplies channel j of a [C, H, W] tensor by weights[j].
    """
    x, w = input.data, weights.data
    if (x.ndim != 3) or (w.shape != (x.shape[0],)):
        raise ShapeError(f"channel_scale(): mismatch. input={input.shape}, weights={weights.shape}")

    return _result(w[:, None, None] * x, (input, weights),
                   lambda grad: (w[:, None, None] * grad, (grad * x).sum(axis=(1, 2))), 'channel_scale')


#
# ---- similarity and norms ----
#

def cosine_similarity(a, b):
    """
    Cosine similarity of two tensors treated as flattened vectors. Returns 0 (with zero gradient) when either norm is
    below ZERO_NORM_EPS.

    :return: a single-element Tensor
    """
    if a.data.shape != b.data.shape:
        raise ShapeError(f"cosine_similarity(): shape mismatch. a={a.shape}, b={b.shape}")

    a_data, b_data = a.data, b.data
    norm_a, norm_b = np.linalg.norm(a_data), np.linalg.norm(b_data)
    if (norm_a < ZERO_NORM_EPS) or (norm_b < ZERO_NORM_EPS):
        return _result(np.array(0.0), (a, b), lambda grad: (None, None), 'cosine_similarity')

    value = float(np.sum(a_data * b_data)) / (norm_a * norm_b)


    def backward_fcn(grad):
        grad = float(grad)
        grad_a = grad * (b_data / (norm_a * norm_b) - value * a_data / (norm_a * norm_a))
        grad_b = grad * (a_data / (norm_a * norm_b) - value * b_data / (norm_b * norm_b))
        return grad_a, grad_b


    return _result(np.array(value), (a, b), backward_fcn, 'cosine_similarity')


def channel_cosine_similarity(a, b):
    """
    Per-channel cosine similarity of two [C, H, W] tensors: out[j] = cosine_similarity(a[j], b[j]), with the same
    zero-norm convention.

    :return: a vector Tensor [C]
    """
    if (a.data.ndim != 3) or (a.data.shape != b.data.shape):
        raise ShapeError(f"channel_cosine_similarity(): shape mismatch. a={a.shape}, b={b.shape}")

    a_data, b_data = a.data, b.data
    norms_a = np.sqrt((a_data * a_data).sum(axis=(1, 2)))
    norms_b = np.sqrt((b_data * b_data).sum(axis=(1, 2)))
    is_valid = (norms_a >= ZERO_NORM_EPS) & (norms_b >= ZERO_NORM_EPS)
    safe_a = np.where(is_valid, norms_a, 1.0)
    safe_b = np.where(is_valid, norms_b, 1.0)
    values = np.where(is_valid, (a_data * b_data).sum(axis=(1, 2)) / (safe_a * safe_b), 0.0)


    def backward_fcn(grad):
        g = np.where(is_valid, grad, 0.0)[:, None, None]
        na, nb, v = safe_a[:, None, None], safe_b[:, None, None], values[:, None, None]
        grad_a = g * (b_data / (na * nb) - v * a_data / (na * na))
        grad_b = g * (a_data / (na * nb) - v * b_data / (nb * nb))
        return grad_a, grad_b


    return _result(values, (a, b), backward_fcn, 'channel_cosine_similarity')


def l2_norm(input):
    """
    :return: the L2 norm of input as a single-element Tensor. the gradient at the zero vector is taken to be zero
    """
    x = input.data
    norm = float(np.linalg.norm(x))


    def backward_fcn(grad):
        if norm < ZERO_NORM_EPS:
            return np.zeros_like(x),

        return float(grad) * x / norm,


    return _result(np.array(norm), (input,), backward_fcn, 'l2_norm')

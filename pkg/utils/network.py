import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from memvo_app.models.memory_buffer import MemoryBuffer
from memvo_app.models.pose import Pose
from memvo_app.models.vo_model import ConvLstmState, CONV_KERNEL_SIZE, ATTENTION_MODES
from utils.geometry import pose_to_matrix, pose_from_matrix, integrate_relative
from utils.memory import memory_update, spatial_channel_attention, observation_attention
from utils.tensor import conv2d, leaky_relu, sigmoid, tanh, add, mul, concat_channels, slice_channels, \
    global_avg_pool, linear, constant
from utils.utilities import ContractError, ConfigError, ShapeError


logger = logging.getLogger(__name__)


#
# ---- encoder ----
#

def encoder_forward(model, image_pair):
    """
    Maps a stacked image pair [input_channels, H_img, W_img] to a feature map [C, H, W] through the configured stack
    of 3x3 convolutions, each followed by a leaky ReLU.

    :raises ShapeError: if the input size is not the configured input shape, e.g., not divisible by the cumulative
        stride
    """
    config = model.config
    if not config.uses_encoder():
        raise ContractError("encoder_forward(): the model has no encoder layers")

    _, in_height, in_width = image_pair.shape
    stride = config.cumulative_stride()
    if (in_height % stride != 0) or (in_width % stride != 0):
        raise ShapeError(f"encoder_forward(): input size {in_height}x{in_width} is not divisible by the cumulative "
                         f"stride {stride}")
    elif tuple(image_pair.shape) != config.input_shape():
        raise ShapeError(f"encoder_forward(): input shape {image_pair.shape} != configured {config.input_shape()}")

    features = image_pair
    for layer_idx, (_, layer_stride) in enumerate(config.encoder_layers):
        features = leaky_relu(conv2d(features, model.param(f'encoder.{layer_idx}.kernel'),
                                     model.param(f'encoder.{layer_idx}.bias'),
                                     stride=layer_stride, padding=CONV_KERNEL_SIZE // 2))
    return features


#
# ---- ConvLSTM and SE(3) layer ----
#

def convlstm_step(kernel, bias, input, state):
    """
    One ConvLSTM step. The four gates come from a single 3x3 convolution over concat(input, H_prev), stacked along
    channels in the order input (i), forget (f), output (o), candidate (g):

        c = f * c_prev + i * g
        h = o * tanh(c)

    :param kernel: [4 * C_h, C_in + C_h, 3, 3]
    :param bias: [4 * C_h]
    :param state: the previous ConvLstmState
    :return: 2-tuple: (output O == h, the new ConvLstmState)
    """
    num_hidden = state.hidden.shape[0]
    if kernel.shape[0] != 4 * num_hidden:
        raise ShapeError(f"convlstm_step(): kernel has {kernel.shape[0]} output channels, expected "
                         f"{4 * num_hidden} for {num_hidden} hidden channels")

    gates = conv2d(concat_channels([input, state.hidden]), kernel, bias, stride=1, padding=CONV_KERNEL_SIZE // 2)
    in_gate = sigmoid(slice_channels(gates, 0, num_hidden))
    forget_gate = sigmoid(slice_channels(gates, num_hidden, 2 * num_hidden))
    out_gate = sigmoid(slice_channels(gates, 2 * num_hidden, 3 * num_hidden))
    candidate = tanh(slice_channels(gates, 3 * num_hidden, 4 * num_hidden))
    cell = add(mul(forget_gate, state.cell), mul(in_gate, candidate))
    hidden = mul(out_gate, tanh(cell))
    return hidden, ConvLstmState(hidden, cell, hidden)


def se3_layer(weight, bias, output):
    """
    Global average pooling followed by an affine map to 6 values: [tx, ty, tz, roll, pitch, yaw].

    :return: the 6-element se3 Tensor. use pose_from_se3() to get a Pose
    """
    return linear(global_avg_pool(output), weight, bias)


def pose_from_se3(se3_tensor):
    return Pose.from_se3_vector(se3_tensor.data)


#
# ---- tracking and refining steps ----
#

def _initial_state(model):
    config = model.config
    return ConvLstmState.zeros(config.hidden_channels, config.feature_height, config.feature_width)


def tracking_step(model, features, state):
    """
    :return: 3-tuple: (relative se3 Tensor for this frame pair, the tracking output O_t, the new ConvLstmState)
    """
    output, new_state = convlstm_step(model.param('tracking.gates.kernel'), model.param('tracking.gates.bias'),
                                      features, state)
    return se3_layer(model.param('tracking.se3.weight'), model.param('tracking.se3.bias'), output), output, new_state


def fuse(model, memory_read, observation):
    """
    Two 3x3 convolutions (leaky ReLU after each) over concat(M', X').

    :return: X^A [fusion_channels, H, W]
    """
    padding = CONV_KERNEL_SIZE // 2
    fused = leaky_relu(conv2d(concat_channels([memory_read, observation]), model.param('fusion.0.kernel'),
                              model.param('fusion.0.bias'), padding=padding))
    return leaky_relu(conv2d(fused, model.param('fusion.1.kernel'), model.param('fusion.1.bias'), padding=padding))


def refine_step(model, features, state, buffer, attention_mode=None):
    """
    One refining step. The previous refining output guides both the memory read (M') and the observation (X'); their
    fusion feeds the refining ConvLSTM, whose output regresses the absolute pose of the frame.

    :param state: the previous refining ConvLstmState. its `output` is the guidance, zeros at the first step
    :param attention_mode: defaults to model.config.attention_mode. 'none' is not valid here
    :return: 4-tuple: (absolute se3 Tensor, refining output O^A_t, the new ConvLstmState, alpha Tensor)
    """
    attention_mode = attention_mode or model.config.attention_mode
    if attention_mode == 'none':
        raise ContractError("refine_step(): attention_mode 'none' has no refining branch")
    elif buffer.is_empty():
        raise ContractError("refine_step(): empty memory buffer")

    guidance = state.output
    memory_read, alpha, _ = spatial_channel_attention(guidance, buffer, attention_mode)
    observation = observation_attention(guidance, features, attention_mode)
    output, new_state = convlstm_step(model.param('refining.gates.kernel'), model.param('refining.gates.bias'),
                                      fuse(model, memory_read, observation), state)
    absolute = se3_layer(model.param('refining.se3.weight'), model.param('refining.se3.bias'), output)
    return absolute, output, new_state, alpha


#
# ---- sequence forward pass ----
#

@dataclass
class SequenceOutput:
    """
    The result of forward_sequence(). relative[t] is the tracking estimate for frame pair (t, t+1) and absolute[t] the
    estimated pose of frame t+1 w.r.t. frame 0, both as se3 Tensors. In attention mode 'none' the absolute Tensors are
    constants holding the integrated relative poses.
    """
    relative: list
    absolute: list
    attention_mode: str
    stored_steps: List[int] = field(default_factory=list)
    alpha_history: List[List[float]] = field(default_factory=list)


    def relative_poses(self):
        return [pose_from_se3(se3_tensor) for se3_tensor in self.relative]


    def absolute_poses(self):
        return [pose_from_se3(se3_tensor) for se3_tensor in self.absolute]


    def diagnostics_dict(self):
        return {'attention_mode': self.attention_mode,
                'stored_steps': list(self.stored_steps),
                'alpha_history': [list(alphas) for alphas in self.alpha_history]}


def resolve_attention_mode(model, attention_mode):
    """
    :return: attention_mode, or the model's own mode if None
    :raises ConfigError: if the model's parameters cannot run attention_mode
    """
    config = model.config
    if attention_mode is None:
        return config.attention_mode
    elif attention_mode not in ATTENTION_MODES:
        raise ConfigError(f"invalid attention_mode: {attention_mode!r}. valid modes: {ATTENTION_MODES}")
    elif (attention_mode != 'none') and (config.attention_mode == 'none'):
        raise ConfigError(f"a tracking-only model has no refining parameters for attention_mode {attention_mode!r}")
    elif (attention_mode == 'full') and (config.hidden_channels != config.feature_channels):
        raise ConfigError(f"attention_mode 'full' requires hidden_channels == feature_channels. "
                          f"hidden_channels={config.hidden_channels}, feature_channels={config.feature_channels}")

    return attention_mode


def forward_sequence(model, features, attention_mode=None):
    """
    Runs the whole network over one sequence. Tracking runs first over every frame pair; after each step its hidden
    state is offered to the memory, anchored at the integrated tracking pose. Refining then runs over every frame pair,
    reading the finished memory.

    :param features: list of network inputs, one per frame pair: feature maps [C, H, W], or image pairs when the model
        has an encoder
    :param attention_mode: overrides model.config.attention_mode (see resolve_attention_mode())
    :return: a SequenceOutput
    """
    if not features:
        raise ContractError("forward_sequence(): empty sequence")

    config = model.config
    attention_mode = resolve_attention_mode(model, attention_mode)
    if config.uses_encoder():
        features = [encoder_forward(model, image_pair) for image_pair in features]
    for feature_map in features:
        if tuple(feature_map.shape) != config.feature_shape():
            raise ShapeError(f"forward_sequence(): feature shape {feature_map.shape} != configured "
                             f"{config.feature_shape()}")

    # tracking and memory
    relative = []
    buffer = MemoryBuffer(config.capacity())
    state = _initial_state(model)
    anchor_matrix = np.eye(4)
    for step, feature_map in enumerate(features):
        relative_se3, _, state = tracking_step(model, feature_map, state)
        relative.append(relative_se3)
        anchor_matrix = anchor_matrix @ pose_to_matrix(pose_from_se3(relative_se3))
        if attention_mode != 'none':
            buffer, _ = memory_update(buffer, state.hidden, pose_from_matrix(anchor_matrix), step, config.theta_rot,
                                      config.theta_trans)
    if attention_mode == 'none':
        integrated = integrate_relative([pose_from_se3(relative_se3) for relative_se3 in relative])
        absolute = [constant(pose.se3_vector()) for pose in integrated.poses[1:]]
        return SequenceOutput(relative, absolute, attention_mode)

    # refining
    absolute = []
    alpha_history = []
    state = _initial_state(model)
    for feature_map in features:
        absolute_se3, _, state, alpha = refine_step(model, feature_map, state, buffer, attention_mode)
        absolute.append(absolute_se3)
        alpha_history.append(alpha.data.tolist())
    logger.debug(f"forward_sequence(): {len(features)} steps, stored steps={buffer.stored_steps()}")
    return SequenceOutput(relative, absolute, attention_mode, buffer.stored_steps(), alpha_history)

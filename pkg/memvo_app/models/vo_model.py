import dataclasses
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from utils.tensor import Tensor, parameter, zeros
from utils.utilities import ConfigError, basic_str, coerce_numeric_fields


logger = logging.getLogger(__name__)

# valid attention (ablation) modes:
# - 'full': temporal attention over memory slots plus per-channel attention on slots and observations
# - 'temporal_only': temporal attention; channel weights forced uniform
# - 'no_attention': memory read by plain averaging; observations passed through
# - 'none': tracking only. no memory reads and no refining; absolute poses are the integrated relative poses
ATTENTION_MODES = ('full', 'temporal_only', 'no_attention', 'none')

CONV_KERNEL_SIZE = 3  # all ConvLSTM gate, fusion, and encoder convolutions
SE3_OUTPUT_SIZE = 6  # [tx, ty, tz, roll, pitch, yaw]


#
# ---- VoModelConfig ----
#

@dataclass
class VoModelConfig:
    feature_channels: int = 8
    feature_height: int = 8
    feature_width: int = 8
    input_channels: int = 6  # channels of a stacked image pair. used only when encoder_layers is non-empty
    encoder_layers: List[List[int]] = field(default_factory=list)  # [[out_channels, stride], ...]
    hidden_channels: int = 8
    fusion_channels: int = 8
    theta_rot: float = 0.005  # radians
    theta_trans: float = 0.6  # meters
    buffer_capacity: Optional[int] = None  # None -> sequence_length
    attention_mode: str = 'full'
    sequence_length: int = 11


    def __post_init__(self):
        coerce_numeric_fields(self)
        self.encoder_layers = [list(layer) for layer in self.encoder_layers]
        self.validate()


    def validate(self):
        """
        :raises ConfigError: if any field is out of range
        """
        for name in ['feature_channels', 'feature_height', 'feature_width', 'input_channels', 'hidden_channels',
                     'fusion_channels']:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1. got {getattr(self, name)!r}")

        if (self.theta_rot < 0) or (self.theta_trans < 0):
            raise ConfigError(f"thresholds must be >= 0. theta_rot={self.theta_rot}, theta_trans={self.theta_trans}")
        elif self.sequence_length < 2:
            raise ConfigError(f"sequence_length must be >= 2. got {self.sequence_length}")
        elif (self.buffer_capacity is not None) and (self.buffer_capacity < 1):
            raise ConfigError(f"buffer_capacity must be >= 1. got {self.buffer_capacity}")
        elif self.attention_mode not in ATTENTION_MODES:
            raise ConfigError(f"invalid attention_mode: {self.attention_mode!r}. valid modes: {ATTENTION_MODES}")
        elif (self.attention_mode == 'full') and (self.hidden_channels != self.feature_channels):
            # channel attention on observations pairs guidance channel j with feature channel j
            raise ConfigError(f"attention_mode 'full' requires hidden_channels == feature_channels. "
                              f"hidden_channels={self.hidden_channels}, feature_channels={self.feature_channels}")

        for layer in self.encoder_layers:
            if (len(layer) != 2) or (layer[0] < 1) or (layer[1] < 1):
                raise ConfigError(f"encoder layers must be [out_channels >= 1, stride >= 1]. got {layer!r}")

        if self.encoder_layers and (self.encoder_layers[-1][0] != self.feature_channels):
            raise ConfigError(f"last encoder layer must output feature_channels={self.feature_channels}. "
                              f"got {self.encoder_layers[-1][0]}")


    def capacity(self):
        return self.buffer_capacity if self.buffer_capacity is not None else self.sequence_length


    def uses_encoder(self):
        return len(self.encoder_layers) != 0


    def cumulative_stride(self):
        return math.prod(stride for _, stride in self.encoder_layers)


    def feature_shape(self):
        return self.feature_channels, self.feature_height, self.feature_width


    def input_shape(self):
        """
        :return: the shape of one network input: an image pair if the encoder is used, o/w a feature map
        """
        if not self.uses_encoder():
            return self.feature_shape()

        stride = self.cumulative_stride()
        return self.input_channels, self.feature_height * stride, self.feature_width * stride


    def to_dict(self):
        return dataclasses.asdict(self)


    @classmethod
    def from_dict(cls, config_dict):
        unknown_keys = sorted(set(config_dict) - {f.name for f in dataclasses.fields(cls)})
        if unknown_keys:
            raise ConfigError(f"unknown model config keys: {unknown_keys}")

        return cls(**config_dict)


def parameter_shapes(config):
    """
    :return: OrderedDict mapping parameter path -> (shape, fan_in). fan_in is None for biases. the order is the
        canonical parameter order used for initialization and optimization
    """
    k = CONV_KERNEL_SIZE
    c, c_h, c_f = config.feature_channels, config.hidden_channels, config.fusion_channels
    shapes = OrderedDict()
    in_channels = config.input_channels
    for layer_idx, (out_channels, _) in enumerate(config.encoder_layers):
        shapes[f'encoder.{layer_idx}.kernel'] = ((out_channels, in_channels, k, k), in_channels * k * k)
        shapes[f'encoder.{layer_idx}.bias'] = ((out_channels,), None)
        in_channels = out_channels

    shapes['tracking.gates.kernel'] = ((4 * c_h, c + c_h, k, k), (c + c_h) * k * k)
    shapes['tracking.gates.bias'] = ((4 * c_h,), None)
    shapes['tracking.se3.weight'] = ((SE3_OUTPUT_SIZE, c_h), c_h)
    shapes['tracking.se3.bias'] = ((SE3_OUTPUT_SIZE,), None)
    if config.attention_mode != 'none':
        shapes['fusion.0.kernel'] = ((c_f, c_h + c, k, k), (c_h + c) * k * k)
        shapes['fusion.0.bias'] = ((c_f,), None)
        shapes['fusion.1.kernel'] = ((c_f, c_f, k, k), c_f * k * k)
        shapes['fusion.1.bias'] = ((c_f,), None)
        shapes['refining.gates.kernel'] = ((4 * c_h, c_f + c_h, k, k), (c_f + c_h) * k * k)
        shapes['refining.gates.bias'] = ((4 * c_h,), None)
        shapes['refining.se3.weight'] = ((SE3_OUTPUT_SIZE, c_h), c_h)
        shapes['refining.se3.bias'] = ((SE3_OUTPUT_SIZE,), None)
    return shapes


#
# ---- VoModel class ----
#

class VoModel:
    """
    All learnable parameters of the network, each registered under a unique path (see parameter_shapes()).
    """


    def __init__(self, config, named_params):
        expected_paths = list(parameter_shapes(config))
        if list(named_params) != expected_paths:
            raise ConfigError(f"parameter paths do not match config. expected={expected_paths}, "
                              f"got={list(named_params)}")

        self.config = config
        self._named_params = OrderedDict(named_params)


    def __repr__(self):
        return str((self.config.attention_mode, len(self._named_params), self.num_scalars()))


    def __str__(self):
        return basic_str(self)


    @classmethod
    def initialize(cls, config, seed):
        """
        Kaiming (fan-in) normal initialization for kernels and weights, zeros for biases. Deterministic per seed.
        """
        rng = np.random.default_rng(seed)
        named_params = OrderedDict()
        for path, (shape, fan_in) in parameter_shapes(config).items():
            if fan_in is None:
                named_params[path] = parameter(np.zeros(shape))
            else:
                named_params[path] = parameter(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape))
        return cls(config, named_params)


    @classmethod
    def zeros_like_config(cls, config):
        return cls(config, OrderedDict((path, parameter(np.zeros(shape)))
                                       for path, (shape, _) in parameter_shapes(config).items()))


    def named_parameters(self):
        return self._named_params


    def parameters(self):
        return list(self._named_params.values())


    def param(self, path):
        return self._named_params[path]


    def num_scalars(self):
        return sum(tensor.size for tensor in self._named_params.values())


    def zero_grad(self):
        for tensor in self._named_params.values():
            tensor.zero_grad()


#
# ---- ConvLstmState ----
#

@dataclass
class ConvLstmState:
    """
    Recurrent state of a ConvLSTM: hidden H, cell c, and last output O (== H), each [C_h, H, W]. Used for both the
    tracking and refining branches.
    """
    hidden: Tensor
    cell: Tensor
    output: Tensor


    @classmethod
    def zeros(cls, channels, height, width):
        return cls(zeros((channels, height, width)), zeros((channels, height, width)),
                   zeros((channels, height, width)))

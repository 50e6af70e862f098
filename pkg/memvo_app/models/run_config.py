import copy
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

from memvo_app.models.sequence import SyntheticSpec
from memvo_app.models.vo_model import VoModelConfig, ATTENTION_MODES
from utils.utilities import ConfigError, coerce_numeric_fields


logger = logging.getLogger(__name__)

SNIPPET_POLICIES = ('random', 'stride')


#
# ---- LossWeights ----
#

@dataclass
class LossWeights:
    k: float = 100.0  # rotation-balance factor


    def __post_init__(self):
        coerce_numeric_fields(self)
        if not self.k > 0:
            raise ConfigError(f"loss k must be > 0. got {self.k!r}")


#
# ---- OptimizerConfig ----
#

@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 4e-4
    halving_interval: int = 60_000  # the learning rate is halved every this many iterations


    def __post_init__(self):
        coerce_numeric_fields(self)
        if (self.lr <= 0) or (self.eps <= 0) or (self.halving_interval < 1):
            raise ConfigError(f"lr, eps, and halving_interval must be positive. got {self!r}")
        elif not ((0 <= self.beta1 < 1) and (0 <= self.beta2 < 1)):
            raise ConfigError(f"betas must be in [0, 1). got {self.beta1}, {self.beta2}")
        elif self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0. got {self.weight_decay}")


    def lr_at(self, iteration):
        return self.lr * 0.5 ** (iteration // self.halving_interval)


#
# ---- RunConfig ----
#

@dataclass
class RunConfig:
    """
    Everything a train/infer/sweep run needs. `ablation` and `sequence_length` are authoritative and are copied into
    `model` so that the two never disagree. Exactly one dataset source is used: `manifest_path` if set, o/w
    `synthetic`.
    """
    model: VoModelConfig = field(default_factory=VoModelConfig)
    loss_k: float = 100.0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 4
    iterations: int = 150_000
    seed: int = 0
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    manifest_path: Optional[str] = None
    manifest_split: str = 'train'
    num_validation: int = 20  # held-out sequences, taken from the end of the dataset
    ablation: str = 'full'
    sequence_length: int = 11
    checkpoint_interval: int = 10_000
    snippet_policy: str = 'random'
    snippet_stride: int = 10
    snippet_max_overlap: float = 0.5
    output_dir: str = 'runs/default'


    def __post_init__(self):
        coerce_numeric_fields(self)
        if isinstance(self.model, dict):
            self.model = VoModelConfig.from_dict({**self.model, 'attention_mode': self.ablation,
                                                  'sequence_length': self.sequence_length})
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if isinstance(self.synthetic, dict):
            self.synthetic = SyntheticSpec.from_dict(self.synthetic)

        # sync the authoritative fields
        self.model = dataclasses.replace(self.model, attention_mode=self.ablation,
                                         sequence_length=self.sequence_length)
        self.synthetic = dataclasses.replace(self.synthetic, sequence_length=self.sequence_length,
                                             feature_shape=list(self.model.input_shape()))
        self.validate()


    def validate(self):
        LossWeights(self.loss_k)  # validates k
        if self.ablation not in ATTENTION_MODES:
            raise ConfigError(f"invalid ablation: {self.ablation!r}. valid modes: {ATTENTION_MODES}")
        elif (self.batch_size < 1) or (self.iterations < 0) or (self.checkpoint_interval < 1):
            raise ConfigError(f"batch_size and checkpoint_interval must be >= 1 and iterations >= 0. got "
                              f"{self.batch_size}, {self.checkpoint_interval}, {self.iterations}")
        elif self.num_validation < 0:
            raise ConfigError(f"num_validation must be >= 0. got {self.num_validation}")
        elif self.snippet_policy not in SNIPPET_POLICIES:
            raise ConfigError(f"invalid snippet_policy: {self.snippet_policy!r}. valid: {SNIPPET_POLICIES}")
        elif (self.snippet_stride < 1) or not (0.0 <= self.snippet_max_overlap < 1.0):
            raise ConfigError(f"snippet_stride must be >= 1 and snippet_max_overlap in [0, 1). got "
                              f"{self.snippet_stride}, {self.snippet_max_overlap}")


    def loss_weights(self):
        return LossWeights(self.loss_k)


    def to_dict(self):
        return dataclasses.asdict(self)


    @classmethod
    def from_dict(cls, config_dict):
        unknown_keys = sorted(set(config_dict) - {f.name for f in dataclasses.fields(cls)})
        if unknown_keys:
            raise ConfigError(f"unknown run config keys: {unknown_keys}")

        return cls(**config_dict)


    @classmethod
    def from_settings(cls, settings):
        """
        :param settings: a settings module (see memvo_repo.settings.load_settings())
        :return: a RunConfig holding the settings' defaults
        """
        num_channels, height, width = settings.FEATURE_SHAPE
        model = {'feature_channels': num_channels, 'feature_height': height, 'feature_width': width,
                 'input_channels': settings.INPUT_CHANNELS, 'encoder_layers': settings.ENCODER_LAYERS,
                 'hidden_channels': settings.HIDDEN_CHANNELS, 'fusion_channels': settings.FUSION_CHANNELS,
                 'theta_rot': settings.THETA_ROT, 'theta_trans': settings.THETA_TRANS,
                 'buffer_capacity': settings.BUFFER_CAPACITY}
        beta1, beta2 = settings.ADAM_BETAS
        optimizer = {'lr': settings.LEARNING_RATE, 'beta1': beta1, 'beta2': beta2, 'eps': settings.ADAM_EPS,
                     'weight_decay': settings.WEIGHT_DECAY, 'halving_interval': settings.LR_HALVING_INTERVAL}
        return cls(model=model, loss_k=settings.LOSS_K, optimizer=optimizer, batch_size=settings.BATCH_SIZE,
                   iterations=settings.NUM_ITERATIONS, seed=settings.SEED,
                   synthetic={**settings.SYNTHETIC, 'frame_period': settings.FRAME_PERIOD},
                   manifest_path=settings.MANIFEST_PATH, num_validation=settings.NUM_VALIDATION,
                   ablation=settings.ABLATION, sequence_length=settings.SEQUENCE_LENGTH,
                   checkpoint_interval=settings.CHECKPOINT_INTERVAL, snippet_policy=settings.SNIPPET_POLICY,
                   snippet_stride=settings.SNIPPET_STRIDE, snippet_max_overlap=settings.SNIPPET_MAX_OVERLAP,
                   output_dir=os.path.join(settings.OUTPUT_ROOT, settings.PROFILE_NAME))


    def with_overrides(self, overrides):
        """
        :param overrides: a (possibly nested) dict of fields to replace. nested dicts ('model', 'optimizer',
            'synthetic') are merged into the corresponding sections rather than replacing them
        :return: a new RunConfig
        """
        merged = copy.deepcopy(self.to_dict())
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key].update(value)
            else:
                merged[key] = value
        return RunConfig.from_dict(merged)

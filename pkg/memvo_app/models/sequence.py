import dataclasses
import logging
from dataclasses import dataclass, field
from typing import List, Optional

from utils.utilities import ConfigError, ContractError, coerce_numeric_fields


logger = logging.getLogger(__name__)


#
# ---- SyntheticSpec ----
#

@dataclass
class SyntheticSpec:
    """
    Parameters of the synthetic sequence generator. Relative motions are low-pass filtered Gaussian noise around a
    constant forward speed; features broadcast each motion component into a block of channels, plus noise.
    """
    seed: int = 7
    num_sequences: int = 200
    sequence_length: int = 11  # frames. each sequence has sequence_length - 1 frame pairs
    smoothness: float = 0.8  # in [0, 1). weight of the previous motion in the exponential low-pass filter
    noise_sigma: float = 0.05  # feature noise
    feature_shape: List[int] = field(default_factory=lambda: [8, 8, 8])  # C, H, W
    forward_speed: float = 1.0  # meters per frame, along +z
    translation_std: float = 0.3  # meters per frame
    rotation_std: float = 0.01  # radians per frame
    rotation_gain: float = 100.0  # feature units per radian. translation is encoded 1:1 in meters
    frame_period: float = 0.1  # seconds between frames, for timestamps


    def __post_init__(self):
        coerce_numeric_fields(self)
        try:
            self.feature_shape = [int(dim) for dim in self.feature_shape]
        except (TypeError, ValueError) as ex:
            raise ConfigError(f"feature_shape must be three positive ints. got {self.feature_shape!r}. ex={ex!r}")

        self.validate()


    def validate(self):
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0. got {self.noise_sigma}")
        elif self.sequence_length < 2:
            raise ConfigError(f"sequence_length must be >= 2. got {self.sequence_length}")
        elif self.num_sequences < 1:
            raise ConfigError(f"num_sequences must be >= 1. got {self.num_sequences}")
        elif not (0.0 <= self.smoothness < 1.0):
            raise ConfigError(f"smoothness must be in [0, 1). got {self.smoothness}")
        elif (len(self.feature_shape) != 3) or any(dim < 1 for dim in self.feature_shape):
            raise ConfigError(f"feature_shape must be three positive ints. got {self.feature_shape!r}")
        elif self.feature_shape[0] < 6:
            raise ConfigError(f"feature_shape needs at least 6 channels (one block per motion component). "
                              f"got {self.feature_shape[0]}")
        elif (self.frame_period <= 0) or (self.rotation_gain <= 0):
            raise ConfigError(f"frame_period and rotation_gain must be > 0. got {self.frame_period}, "
                              f"{self.rotation_gain}")


    def to_dict(self):
        return dataclasses.asdict(self)


    @classmethod
    def from_dict(cls, spec_dict):
        unknown_keys = sorted(set(spec_dict) - {f.name for f in dataclasses.fields(cls)})
        if unknown_keys:
            raise ConfigError(f"unknown synthetic spec keys: {unknown_keys}")

        return cls(**spec_dict)


#
# ---- SequenceSample ----
#

@dataclass
class SequenceSample:
    """
    One training/evaluation sequence. features[t] and gt_relative[t] describe the frame pair (t, t+1). gt_absolute
    includes the origin, so it has one more pose than features. Absolute poses are expressed relative to the first
    frame.
    """
    features: list  # of Tensor
    gt_relative: list  # of Pose
    gt_absolute: list  # of Pose
    id: str
    timestamps: Optional[List[float]] = None  # one per frame, when known


    def __post_init__(self):
        if (len(self.features) != len(self.gt_relative)) or (len(self.gt_absolute) != len(self.features) + 1):
            raise ContractError(f"inconsistent SequenceSample {self.id!r}: {len(self.features)} features, "
                                f"{len(self.gt_relative)} relatives, {len(self.gt_absolute)} absolutes")

        if (self.timestamps is not None) and (len(self.timestamps) != len(self.gt_absolute)):
            raise ContractError(f"SequenceSample {self.id!r}: {len(self.timestamps)} timestamps for "
                                f"{len(self.gt_absolute)} frames")


    def num_frames(self):
        return len(self.gt_absolute)

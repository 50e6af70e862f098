import logging
import math

import numpy as np

from utils.utilities import ContractError, basic_str


logger = logging.getLogger(__name__)


def canonical_angles(angles):
    """
    :return: angles wrapped to (-pi, pi], as a float64 array
    """
    angles = np.asarray(angles, dtype=np.float64)
    return angles - 2.0 * math.pi * np.ceil((angles - math.pi) / (2.0 * math.pi))


#
# ---- Pose class ----
#

class Pose:
    """
    A 6-DoF rigid transform: an Euler-angle rotation (roll, pitch, yaw; radians; R = Rz(yaw) @ Ry(pitch) @ Rx(roll))
    and a translation (meters). Angles are canonicalized to (-pi, pi] on construction. Poses are treated as immutable.

    The "se3 vector" layout used by the network is [tx, ty, tz, roll, pitch, yaw], i.e., translation first.
    """


    def __init__(self, rotation=(0.0, 0.0, 0.0), translation=(0.0, 0.0, 0.0)):
        rotation = np.array(rotation, dtype=np.float64).reshape(-1)
        translation = np.array(translation, dtype=np.float64).reshape(-1)
        if (rotation.shape != (3,)) or (translation.shape != (3,)):
            raise ContractError(f"Pose requires 3 rotation and 3 translation values. rotation={rotation!r}, "
                                f"translation={translation!r}")

        self.rotation = canonical_angles(rotation)
        self.translation = translation
        self.rotation.setflags(write=False)
        self.translation.setflags(write=False)


    def __repr__(self):
        return str((self.rotation.tolist(), self.translation.tolist()))


    def __str__(self):
        return basic_str(self)


    def __eq__(self, other):
        return isinstance(other, Pose) and np.array_equal(self.rotation, other.rotation) \
               and np.array_equal(self.translation, other.translation)


    def __hash__(self):
        return hash((tuple(self.rotation), tuple(self.translation)))


    @classmethod
    def identity(cls):
        return cls()


    @classmethod
    def from_se3_vector(cls, vector):
        vector = np.asarray(vector, dtype=np.float64).reshape(-1)
        if vector.shape != (6,):
            raise ContractError(f"se3 vector must have 6 elements. vector={vector!r}")

        return cls(rotation=vector[3:], translation=vector[:3])


    def se3_vector(self):
        return np.concatenate([self.translation, self.rotation])


#
# ---- Trajectory class ----
#

class Trajectory:
    """
    An ordered list of absolute Poses with optional timestamps (seconds). Timestamps, when present, strictly increase
    and match the pose count.
    """


    def __init__(self, poses, timestamps=None):
        self.poses = list(poses)
        if timestamps is not None:
            timestamps = [float(timestamp) for timestamp in timestamps]
            if len(timestamps) != len(self.poses):
                raise ContractError(f"timestamp count does not match pose count: {len(timestamps)} != "
                                    f"{len(self.poses)}")

            for prev_ts, next_ts in zip(timestamps[:-1], timestamps[1:]):
                if next_ts <= prev_ts:
                    raise ContractError(f"timestamps must strictly increase: {prev_ts} then {next_ts}")

        self.timestamps = timestamps


    def __repr__(self):
        return str((len(self.poses), self.timestamps is not None))


    def __str__(self):
        return basic_str(self)


    def __len__(self):
        return len(self.poses)


    def __getitem__(self, index):
        return self.poses[index]


    def has_timestamps(self):
        return self.timestamps is not None


    def positions(self):
        """
        :return: an [n, 3] array of translations
        """
        return np.array([pose.translation for pose in self.poses]).reshape(-1, 3)

import logging
import math

import numpy as np
from more_itertools import windowed

from memvo_app.models.pose import Pose, Trajectory
from memvo_app.models.run_config import SNIPPET_POLICIES
from memvo_app.models.sequence import SequenceSample
from utils.geometry import integrate_relative, relative_from_absolute, rebase_trajectory
from utils.pose_io import read_trajectory_file, manifest_sequences
from utils.tensor import constant
from utils.utilities import ContractError, ConfigError


logger = logging.getLogger(__name__)

NUM_MOTION_COMPONENTS = 6  # [tx, ty, tz, roll, pitch, yaw]


#
# ---- feature encoding ----
#

def channel_components(num_channels):
    """
    :return: list mapping each feature channel to the motion component it encodes. channels are split into 6 nearly
        equal contiguous blocks, in se3 order
    """
    return [(channel * NUM_MOTION_COMPONENTS) // num_channels for channel in range(num_channels)]


def encode_motion(relative_pose, feature_shape, rotation_gain):
    """
    :return: the noiseless feature array [C, H, W] for one relative motion: every pixel of a channel holds its
        component's value, translations in meters and rotations in radians times rotation_gain
    """
    num_channels, height, width = feature_shape
    values = relative_pose.se3_vector() * np.array([1.0, 1.0, 1.0, rotation_gain, rotation_gain, rotation_gain])
    channel_values = values[channel_components(num_channels)]
    return np.broadcast_to(channel_values[:, None, None], (num_channels, height, width)).copy()


def encode_motion_features(relatives, feature_shape, noise_sigma, rotation_gain, rng):
    """
    :return: list of feature Tensors, one per relative pose: encode_motion() plus N(0, noise_sigma^2) noise per
        element
    """
    features = []
    for relative_pose in relatives:
        feature_array = encode_motion(relative_pose, feature_shape, rotation_gain)
        if noise_sigma > 0:
            feature_array = feature_array + rng.normal(0.0, noise_sigma, size=feature_array.shape)
        features.append(constant(feature_array))
    return features


#
# ---- synthetic sequences ----
#

def _smooth_motions(rng, spec, num_pairs):
    # first-order low-pass filtered noise around a constant forward motion, scaled to keep a stationary std
    mean = np.array([0.0, 0.0, spec.forward_speed, 0.0, 0.0, 0.0])
    std = np.array([spec.translation_std] * 3 + [spec.rotation_std] * 3)
    innovation_scale = math.sqrt(1.0 - spec.smoothness ** 2)
    deviation = std * rng.standard_normal(NUM_MOTION_COMPONENTS)
    motions = []
    for pair_idx in range(num_pairs):
        if pair_idx != 0:
            innovation = innovation_scale * std * rng.standard_normal(NUM_MOTION_COMPONENTS)
            deviation = spec.smoothness * deviation + innovation
        motions.append(mean + deviation)
    return motions


def synth_generate(spec):
    """
    Generates spec.num_sequences synthetic sequences of spec.sequence_length frames. Each sequence's relative motions
    are smooth random draws; its features are encode_motion_features() of those motions. The result depends only on
    spec (a single RNG seeded with spec.seed drives everything).

    :param spec: a SyntheticSpec
    :return: list of SequenceSamples
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    num_pairs = spec.sequence_length - 1
    timestamps = [frame_idx * spec.frame_period for frame_idx in range(spec.sequence_length)]
    samples = []
    for sequence_idx in range(spec.num_sequences):
        relatives = [Pose.from_se3_vector(motion) for motion in _smooth_motions(rng, spec, num_pairs)]
        features = encode_motion_features(relatives, spec.feature_shape, spec.noise_sigma, spec.rotation_gain, rng)
        gt_absolute = integrate_relative(relatives).poses
        samples.append(SequenceSample(features, relatives, gt_absolute, f"synthetic-{spec.seed}-{sequence_idx:04d}",
                                      timestamps))
    logger.debug(f"synth_generate(): {len(samples)} sequences of {spec.sequence_length} frames")
    return samples


#
# ---- snippets ----
#

def sample_snippets(num_frames, length, policy='stride', seed=0, stride=None, max_overlap=0.5, num_snippets=None):
    """
    Cuts a trajectory of num_frames frames into windows of `length` consecutive frame indices.

    :param policy: 'stride': windows start every `stride` frames (default: length), only complete windows are kept.
        'random': windows start at seed-determined positions; a start is accepted only if the window shares at most
        max_overlap * length frames with every window accepted before it
    :param num_snippets: 'random' policy only: the maximum number of windows. default: ceil(num_frames / length)
    :return: list of index windows (tuples of ints)
    :raises ContractError: if num_frames < length
    """
    if length < 2:
        raise ContractError(f"sample_snippets(): length must be >= 2. got {length}")
    elif num_frames < length:
        raise ContractError(f"sample_snippets(): trajectory of {num_frames} frames is shorter than length {length}")
    elif policy not in SNIPPET_POLICIES:
        raise ContractError(f"sample_snippets(): invalid policy: {policy!r}. valid: {SNIPPET_POLICIES}")

    if policy == 'stride':
        stride = stride or length
        return [window for window in windowed(range(num_frames), length, step=stride) if None not in window]

    num_snippets = num_snippets or math.ceil(num_frames / length)
    max_shared = math.floor(max_overlap * length)
    rng = np.random.default_rng(seed)
    accepted_starts = []
    for start in rng.permutation(num_frames - length + 1):
        start = int(start)
        if all(length - abs(start - other) <= max_shared for other in accepted_starts):
            accepted_starts.append(start)
            if len(accepted_starts) == num_snippets:
                break
    return [tuple(range(start, start + length)) for start in accepted_starts]


def _snippet_trajectory(trajectory, window):
    timestamps = [trajectory.timestamps[idx] for idx in window] if trajectory.has_timestamps() else None
    return Trajectory([trajectory.poses[idx] for idx in window], timestamps)


def _load_manifest_sequence(manifest, sequence, synthetic_spec):
    """
    :return: 2-tuple: (Trajectory with timestamps, feature array [frames - 1, C, H, W] or None)
    """
    frame_period = manifest.get('frame_period') or synthetic_spec.frame_period
    trajectory = read_trajectory_file(sequence['pose_file'], manifest['format'])
    if not trajectory.has_timestamps():
        trajectory = Trajectory(trajectory.poses, [idx * frame_period for idx in range(len(trajectory))])

    feature_array = None
    if sequence.get('feature_file'):
        feature_array = np.load(sequence['feature_file'])
        expected_shape = (len(trajectory) - 1,) + tuple(synthetic_spec.feature_shape)
        if feature_array.shape != expected_shape:
            raise ConfigError(f"feature file {sequence['feature_file']!r} has shape {feature_array.shape}, "
                              f"expected {expected_shape}")
    return trajectory, feature_array


def _sample_from_window(trajectory, feature_array, window, synthetic_spec, rng, sample_id):
    snippet = rebase_trajectory(_snippet_trajectory(trajectory, window))
    relatives = relative_from_absolute(snippet)
    if feature_array is not None:
        features = [constant(feature_array[idx]) for idx in window[:-1]]
    else:
        features = encode_motion_features(relatives, synthetic_spec.feature_shape, synthetic_spec.noise_sigma,
                                          synthetic_spec.rotation_gain, rng)
    return SequenceSample(features, relatives, snippet.poses, sample_id, snippet.timestamps)


def _split_sequences(manifest, split):
    sequences = manifest_sequences(manifest, split)
    if not sequences:
        raise ConfigError(f"manifest {manifest['name']!r} has no sequences in split {split!r}")

    return sequences


def samples_from_manifest(manifest, split, sequence_length, synthetic_spec, policy='stride', stride=None,
                          max_overlap=0.5, seed=0):
    """
    Builds SequenceSamples from the real pose files of a manifest split. Each trajectory is cut by sample_snippets();
    each snippet's ground truth is re-based to its first frame. Features come from the sequence's `feature_file`
    (a .npy array [frames - 1, C, H, W], row t describing the pair (t, t+1)) when present, o/w they are synthesized
    from the ground-truth motion with the synthetic_spec encoding.

    :param synthetic_spec: a SyntheticSpec, for feature_shape, noise_sigma, rotation_gain, and frame_period
    :return: list of SequenceSamples
    :raises ConfigError: if the split is empty or a feature file does not fit its trajectory
    """
    samples = []
    for sequence_idx, sequence in enumerate(_split_sequences(manifest, split)):
        trajectory, feature_array = _load_manifest_sequence(manifest, sequence, synthetic_spec)
        rng = np.random.default_rng([seed, sequence_idx])
        windows = sample_snippets(len(trajectory), sequence_length, policy, seed=int(rng.integers(2 ** 31)),
                                  stride=stride, max_overlap=max_overlap)
        for window in windows:
            samples.append(_sample_from_window(trajectory, feature_array, window, synthetic_spec, rng,
                                               f"{sequence['id']}:{window[0]}"))
        logger.info(f"samples_from_manifest(): {sequence['id']!r}: {len(trajectory)} frames -> {len(windows)} "
                    f"snippets")
    return samples


def full_samples_from_manifest(manifest, split, synthetic_spec, seed=0):
    """
    Like samples_from_manifest(), but returns one SequenceSample per sequence covering its whole trajectory, re-based
    to the first frame. Used for inference and evaluation on complete sequences.
    """
    samples = []
    for sequence_idx, sequence in enumerate(_split_sequences(manifest, split)):
        trajectory, feature_array = _load_manifest_sequence(manifest, sequence, synthetic_spec)
        if len(trajectory) < 2:
            raise ConfigError(f"sequence {sequence['id']!r} has fewer than 2 frames")

        rng = np.random.default_rng([seed, sequence_idx])
        samples.append(_sample_from_window(trajectory, feature_array, tuple(range(len(trajectory))), synthetic_spec,
                                           rng, sequence['id']))
    return samples

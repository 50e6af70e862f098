import json
import logging
import math
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from memvo_app.models.pose import Trajectory
from utils.geometry import pose_from_matrix, pose_to_matrix
from utils.utilities import PoseParseError, PoseValidationError, ContractError, ConfigError, format_float


logger = logging.getLogger(__name__)

TRAJECTORY_FORMATS = ('kitti', 'tum')

# rigidity tolerance for rotation blocks read from KITTI pose files, which are written with limited precision
KITTI_RIGID_TOLERANCE = 1e-4

# quaternions whose norm is off by more than this are reported before being renormalized
QUATERNION_NORM_TOLERANCE = 1e-3


#
# ---- KITTI ----
#

def parse_kitti_poses(text):
    """
    Parses a KITTI odometry pose file: one pose per non-empty line, as the 12 row-major values of the top 3x4 block of
    the 4x4 camera-to-world matrix.

    :return: a Trajectory without timestamps
    :raises PoseParseError: on a wrong field count, a non-numeric token, or a non-rigid rotation. nothing is returned
        for a file with any bad line
    """
    poses = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue

        if len(fields) != 12:
            raise PoseParseError(f"expected 12 values, got {len(fields)}", line_number)

        try:
            values = [float(field) for field in fields]
        except ValueError as ve:
            raise PoseParseError(f"non-numeric value. ve={ve!r}", line_number)

        try:
            poses.append(pose_from_matrix(np.array(values).reshape(3, 4), tolerance=KITTI_RIGID_TOLERANCE))
        except PoseValidationError as pve:
            raise PoseParseError(str(pve), line_number)
    return Trajectory(poses)


#
# ---- TUM ----
#

def parse_tum_trajectory(text):
    """
    Parses a TUM RGB-D trajectory file. Lines are "timestamp tx ty tz qx qy qz qw" (scalar-last quaternion); blank
    lines and lines starting with '#' are skipped. Quaternions are renormalized.

    :return: a Trajectory with timestamps
    :raises PoseParseError: on a wrong field count, a non-numeric token, a non-increasing timestamp, or a zero-norm
        quaternion
    """
    poses = []
    timestamps = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if (not line) or line.startswith('#'):
            continue

        fields = line.replace(',', ' ').split()
        if len(fields) != 8:
            raise PoseParseError(f"expected 8 values, got {len(fields)}", line_number)

        try:
            timestamp, tx, ty, tz, qx, qy, qz, qw = [float(field) for field in fields]
        except ValueError as ve:
            raise PoseParseError(f"non-numeric value. ve={ve!r}", line_number)

        if not all(math.isfinite(value) for value in [timestamp, tx, ty, tz, qx, qy, qz, qw]):
            raise PoseParseError("non-finite value", line_number)
        elif timestamps and (timestamp <= timestamps[-1]):
            raise PoseParseError(f"timestamps must strictly increase: {timestamps[-1]} then {timestamp}", line_number)

        quat = np.array([qx, qy, qz, qw])
        quat_norm = float(np.linalg.norm(quat))
        if quat_norm < 1e-12:
            raise PoseParseError("zero-norm quaternion", line_number)
        elif abs(quat_norm - 1.0) > QUATERNION_NORM_TOLERANCE:
            logger.warning(f"parse_tum_trajectory(): line {line_number}: renormalizing quaternion with norm "
                           f"{quat_norm:.6g}")

        matrix = np.eye(4)
        matrix[:3, :3] = Rotation.from_quat(quat / quat_norm).as_matrix()
        matrix[:3, 3] = [tx, ty, tz]
        poses.append(pose_from_matrix(matrix))
        timestamps.append(timestamp)
    return Trajectory(poses, timestamps)


#
# ---- writing ----
#

def write_trajectory(trajectory, trajectory_format):
    """
    :param trajectory_format: 'kitti' or 'tum'. values are written with 17 significant digits
    :return: the file text, one line per pose, newline-terminated
    :raises ContractError: for 'tum' without timestamps, or an unknown format
    """
    if trajectory_format not in TRAJECTORY_FORMATS:
        raise ContractError(f"invalid trajectory format: {trajectory_format!r}. valid formats: {TRAJECTORY_FORMATS}")
    elif (trajectory_format == 'tum') and not trajectory.has_timestamps():
        raise ContractError("write_trajectory(): the tum format requires timestamps")

    lines = []
    for pose_idx, pose in enumerate(trajectory.poses):
        matrix = pose_to_matrix(pose)
        if trajectory_format == 'kitti':
            values = matrix[:3, :].reshape(-1)
        else:
            values = [trajectory.timestamps[pose_idx]] + list(matrix[:3, 3]) \
                     + list(Rotation.from_matrix(matrix[:3, :3]).as_quat())
        lines.append(' '.join(format_float(float(value)) for value in values))
    return ''.join(line + '\n' for line in lines)


def read_trajectory_file(path, trajectory_format=None):
    """
    :param trajectory_format: 'kitti' or 'tum'. None: guess from the first data line (8 fields -> tum, o/w kitti)
    """
    with open(path) as trajectory_fp:
        text = trajectory_fp.read()
    if trajectory_format is None:
        trajectory_format = guess_trajectory_format(text)
    return parse_tum_trajectory(text) if trajectory_format == 'tum' else parse_kitti_poses(text)


def guess_trajectory_format(text):
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith('#'):
            return 'tum' if len(line.replace(',', ' ').split()) == 8 else 'kitti'

    return 'kitti'


def write_trajectory_file(path, trajectory, trajectory_format):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as trajectory_fp:
        trajectory_fp.write(write_trajectory(trajectory, trajectory_format))
    logger.info(f"write_trajectory_file(): wrote {len(trajectory)} poses to {str(path)!r} ({trajectory_format})")


#
# ---- dataset manifests ----
#

def read_manifest(path, data_root=None):
    """
    Reads a dataset manifest JSON file:

        {"name": str, "format": "kitti" | "tum", "frame_period": float (seconds), "root": str | null,
         "sequences": [{"id": str, "split": str, "pose_file": str, "feature_file": str (optional), ...}, ...]}

    Relative pose_file and feature_file paths are resolved against `data_root` if passed, o/w the manifest's "root",
    o/w the manifest's directory.

    :return: the manifest dict with resolved paths
    :raises ConfigError: if the file is missing or malformed
    """
    path = Path(path)
    try:
        with open(path) as manifest_fp:
            manifest = json.load(manifest_fp)
    except (OSError, json.JSONDecodeError) as ex:
        raise ConfigError(f"could not read manifest {str(path)!r}. ex={ex!r}")

    missing_keys = sorted({'name', 'format', 'sequences'} - set(manifest))
    if missing_keys:
        raise ConfigError(f"manifest {str(path)!r} is missing keys: {missing_keys}")
    elif manifest['format'] not in TRAJECTORY_FORMATS:
        raise ConfigError(f"manifest {str(path)!r}: invalid format {manifest['format']!r}")

    if data_root:
        root = Path(data_root)
    elif manifest.get('root'):
        root = Path(manifest['root']) if Path(manifest['root']).is_absolute() else path.parent / manifest['root']
    else:
        root = path.parent
    seen_ids = set()
    for sequence in manifest['sequences']:
        if ('id' not in sequence) or ('pose_file' not in sequence):
            raise ConfigError(f"manifest {str(path)!r}: sequence entries need 'id' and 'pose_file': {sequence!r}")
        elif sequence['id'] in seen_ids:
            raise ConfigError(f"manifest {str(path)!r}: duplicate sequence id {sequence['id']!r}")

        seen_ids.add(sequence['id'])
        sequence.setdefault('split', 'train')
        for path_key in ['pose_file', 'feature_file']:
            if sequence.get(path_key):
                sequence[path_key] = str(root / sequence[path_key])
    manifest.setdefault('frame_period', None)
    return manifest


def manifest_sequences(manifest, split=None):
    """
    :return: the manifest's sequence dicts in file order, optionally only those in `split`
    """
    return [sequence for sequence in manifest['sequences'] if (split is None) or (sequence['split'] == split)]

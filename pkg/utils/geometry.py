import logging
import math
from collections import namedtuple

import numpy as np
from scipy.spatial.transform import Rotation

from memvo_app.models.pose import Pose, Trajectory, canonical_angles
from utils.utilities import PoseValidationError, ContractError, AlignmentError


logger = logging.getLogger(__name__)

# tolerance for R^T R == I and det(R) == 1 when validating rigid matrices
RIGID_TOLERANCE = 1e-6

# pitch within this of +/-pi/2 is treated as gimbal lock during matrix -> Euler extraction
GIMBAL_LOCK_TOLERANCE = 1e-6


#
# ---- matrix conversions ----
#

def euler_to_rotation_matrix(rotation):
    """
    :param rotation: (roll, pitch, yaw) radians
    :return: 3x3 R = Rz(yaw) @ Ry(pitch) @ Rx(roll)
    """
    roll, pitch, yaw = rotation
    return Rotation.from_euler('ZYX', [yaw, pitch, roll]).as_matrix()


def rotation_matrix_to_euler(rot_mat):
    """
    The inverse of euler_to_rotation_matrix(): pitch ends up in [-pi/2, pi/2]. At gimbal lock roll is fixed to 0 and
    the remaining freedom goes to yaw.

    :return: canonical (roll, pitch, yaw) array
    """
    pitch = math.atan2(-rot_mat[2, 0], math.hypot(rot_mat[0, 0], rot_mat[1, 0]))
    if abs(abs(pitch) - math.pi / 2) < GIMBAL_LOCK_TOLERANCE:
        roll = 0.0
        yaw = math.atan2(-rot_mat[0, 1], rot_mat[1, 1])
    else:
        roll = math.atan2(rot_mat[2, 1], rot_mat[2, 2])
        yaw = math.atan2(rot_mat[1, 0], rot_mat[0, 0])
    return canonical_angles([roll, pitch, yaw])


def validate_rotation_matrix(rot_mat, tolerance=RIGID_TOLERANCE):
    """
    :raises PoseValidationError: if rot_mat is not orthonormal with det +1 (within tolerance)
    """
    rot_mat = np.asarray(rot_mat, dtype=np.float64)
    if rot_mat.shape != (3, 3):
        raise PoseValidationError(f"rotation must be 3x3. shape={rot_mat.shape}")
    elif not np.all(np.isfinite(rot_mat)):
        raise PoseValidationError(f"rotation has non-finite values: {rot_mat.tolist()}")

    orthonormal_error = np.max(np.abs(rot_mat.T @ rot_mat - np.eye(3)))
    det = np.linalg.det(rot_mat)
    if (orthonormal_error > tolerance) or (abs(det - 1.0) > tolerance):
        raise PoseValidationError(f"rotation is not rigid: max|R^T R - I|={orthonormal_error:.3g}, det={det:.9g}, "
                                  f"tolerance={tolerance}")


def pose_to_matrix(pose):
    """
    :return: the 4x4 homogeneous matrix for pose
    """
    matrix = np.eye(4)
    matrix[:3, :3] = euler_to_rotation_matrix(pose.rotation)
    matrix[:3, 3] = pose.translation
    return matrix


def pose_from_matrix(matrix, tolerance=RIGID_TOLERANCE):
    """
    :param matrix: a 4x4 homogeneous matrix or its top 3x4 block
    :raises PoseValidationError: if the rotation block is not rigid
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape not in [(3, 4), (4, 4)]:
        raise PoseValidationError(f"pose matrix must be 3x4 or 4x4. shape={matrix.shape}")
    elif (matrix.shape == (4, 4)) and (np.max(np.abs(matrix[3] - [0.0, 0.0, 0.0, 1.0])) > tolerance):
        raise PoseValidationError(f"pose matrix bottom row must be [0, 0, 0, 1]: {matrix[3].tolist()}")

    validate_rotation_matrix(matrix[:3, :3], tolerance)
    if not np.all(np.isfinite(matrix[:3, 3])):
        raise PoseValidationError(f"translation has non-finite values: {matrix[:3, 3].tolist()}")

    return Pose(rotation=rotation_matrix_to_euler(matrix[:3, :3]), translation=matrix[:3, 3])


def _matrix_inverse(matrix):
    # closed-form inverse of a rigid transform
    inverse = np.eye(4)
    inverse[:3, :3] = matrix[:3, :3].T
    inverse[:3, 3] = -matrix[:3, :3].T @ matrix[:3, 3]
    return inverse


#
# ---- group operations ----
#

def compose(pose_a, pose_b):
    """
    :return: the Pose whose matrix is matrix(pose_a) @ matrix(pose_b)
    """
    return pose_from_matrix(pose_to_matrix(pose_a) @ pose_to_matrix(pose_b))


def inverse(pose):
    return pose_from_matrix(_matrix_inverse(pose_to_matrix(pose)))


def integrate_relative(relatives, origin=None, timestamps=None):
    """
    Accumulates relative poses by right-multiplication: trajectory[t] = trajectory[t-1] @ relatives[t-1]. The chain is
    carried in matrix form so that Euler round trips do not accumulate.

    :param relatives: list of Poses (may be empty)
    :param origin: the first pose. defaults to identity
    :return: a Trajectory of len(relatives) + 1 poses
    """
    origin = origin if origin is not None else Pose.identity()
    matrix = pose_to_matrix(origin)
    poses = [origin]
    for relative in relatives:
        matrix = matrix @ pose_to_matrix(relative)
        poses.append(pose_from_matrix(matrix))
    return Trajectory(poses, timestamps)


def relative_from_absolute(trajectory):
    """
    :return: list of len(trajectory) - 1 relative Poses: inverse(abs[t-1]) @ abs[t]
    :raises ContractError: if trajectory is empty
    """
    if len(trajectory) == 0:
        raise ContractError("relative_from_absolute(): empty trajectory")

    matrices = [pose_to_matrix(pose) for pose in trajectory.poses]
    return [pose_from_matrix(_matrix_inverse(prev_mat) @ next_mat)
            for prev_mat, next_mat in zip(matrices[:-1], matrices[1:])]


def rebase_trajectory(trajectory):
    """
    :return: trajectory expressed relative to its first pose, so that the first pose becomes identity
    """
    if len(trajectory) == 0:
        return Trajectory([], trajectory.timestamps)

    return integrate_relative(relative_from_absolute(trajectory), Pose.identity(), trajectory.timestamps)


#
# ---- motion distances ----
#

def rotation_distance(pose_a, pose_b):
    """
    :return: L2 norm of the per-axis shortest signed Euler-angle difference (radians)
    """
    return float(np.linalg.norm(canonical_angles(pose_a.rotation - pose_b.rotation)))


def translation_distance(pose_a, pose_b):
    """
    :return: L2 norm of the translation difference (meters)
    """
    return float(np.linalg.norm(pose_a.translation - pose_b.translation))


def rotation_angle(rot_mat):
    """
    :return: the angle of a rotation matrix in [0, pi]. equals acos((trace - 1) / 2), but is computed as
        atan2(sin, cos) with sin = ||vee(R - R^T)|| / 2, which keeps full precision near 0 and pi
    """
    cos_angle = 0.5 * (rot_mat[0, 0] + rot_mat[1, 1] + rot_mat[2, 2] - 1.0)
    sin_angle = 0.5 * math.sqrt((rot_mat[2, 1] - rot_mat[1, 2]) ** 2 + (rot_mat[0, 2] - rot_mat[2, 0]) ** 2 +
                                (rot_mat[1, 0] - rot_mat[0, 1]) ** 2)
    return math.atan2(sin_angle, cos_angle)


#
# ---- Umeyama alignment ----
#

AlignmentResult = namedtuple('AlignmentResult', ['scale', 'rotation', 'translation', 'aligned'])


def umeyama_align(estimate, reference, with_scale):
    """
    Closed-form least-squares similarity (with_scale=True) or rigid (with_scale=False) transform that maps estimate
    positions onto reference positions, i.e., minimizes sum_i ||ref_i - (s R est_i + t)||^2.

    :param estimate: a Trajectory
    :param reference: a Trajectory of the same length
    :return: an AlignmentResult: scale (1.0 if not with_scale), 3x3 rotation, 3-vector translation, and the aligned
        estimate Trajectory (orientations are rotated too)
    :raises AlignmentError: if fewer than 3 poses, lengths differ, or the point spread is degenerate
    """
    if len(estimate) != len(reference):
        raise AlignmentError(f"umeyama_align(): length mismatch: {len(estimate)} != {len(reference)}")
    elif len(estimate) < 3:
        raise AlignmentError(f"umeyama_align(): need at least 3 poses. got {len(estimate)}")

    est_points, ref_points = estimate.positions(), reference.positions()
    est_mean, ref_mean = est_points.mean(axis=0), ref_points.mean(axis=0)
    est_centered, ref_centered = est_points - est_mean, ref_points - ref_mean
    est_variance = float(np.mean(np.sum(est_centered * est_centered, axis=1)))
    covariance = ref_centered.T @ est_centered / len(est_points)
    if (est_variance < 1e-12) or (np.linalg.matrix_rank(covariance) < 2):
        raise AlignmentError(f"umeyama_align(): degenerate point spread. est_variance={est_variance:.3g}, "
                             f"covariance rank={np.linalg.matrix_rank(covariance)}")

    u_mat, singular_values, vt_mat = np.linalg.svd(covariance)
    sign_mat = np.eye(3)
    if np.linalg.det(u_mat) * np.linalg.det(vt_mat) < 0:
        sign_mat[2, 2] = -1.0
    rotation = u_mat @ sign_mat @ vt_mat
    scale = float(np.trace(np.diag(singular_values) @ sign_mat) / est_variance) if with_scale else 1.0
    translation = ref_mean - scale * rotation @ est_mean

    aligned_poses = []
    for pose in estimate.poses:
        matrix = pose_to_matrix(pose)
        aligned_mat = np.eye(4)
        aligned_mat[:3, :3] = rotation @ matrix[:3, :3]
        aligned_mat[:3, 3] = scale * rotation @ matrix[:3, 3] + translation
        aligned_poses.append(pose_from_matrix(aligned_mat))
    return AlignmentResult(scale, rotation, translation, Trajectory(aligned_poses, estimate.timestamps))

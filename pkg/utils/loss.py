import logging

from memvo_app.models.pose import Pose
from utils.tensor import Tensor, constant, sub, add, scale, slice_channels, wrap_angles, l2_norm, \
    weighted_sum_scalars
from utils.utilities import ContractError


logger = logging.getLogger(__name__)


#
# Losses compare predicted poses (se3 Tensors [tx, ty, tz, roll, pitch, yaw], or Poses) against ground-truth Poses.
# Each per-step error is ||t_hat - t||_2 + k * ||wrap(phi_hat - phi)||_2, where wrap() takes each Euler-angle
# difference to its shortest signed value.
#

def _as_se3_tensor(pose_or_tensor):
    if isinstance(pose_or_tensor, Tensor):
        return pose_or_tensor
    elif isinstance(pose_or_tensor, Pose):
        return constant(pose_or_tensor.se3_vector())
    else:
        raise ContractError(f"expected a Tensor or Pose. got {pose_or_tensor!r}")


def pose_error(pred, gt_pose, k):
    """
    :return: single-element Tensor: translation L2 error + k * wrapped rotation L2 error
    """
    pred = _as_se3_tensor(pred)
    gt_se3 = constant(gt_pose.se3_vector())
    translation_error = l2_norm(sub(slice_channels(pred, 0, 3), slice_channels(gt_se3, 0, 3)))
    rotation_error = l2_norm(wrap_angles(sub(slice_channels(pred, 3, 6), slice_channels(gt_se3, 3, 6))))
    return add(translation_error, scale(rotation_error, k))


def _check_lengths(preds, gts, fcn_name):
    if len(preds) != len(gts):
        raise ContractError(f"{fcn_name}(): length mismatch: {len(preds)} predictions, {len(gts)} ground truths")
    elif not preds:
        raise ContractError(f"{fcn_name}(): empty pose lists")


def local_loss(pred_rel, gt_rel, k):
    """
    Mean per-step error of the relative (frame-to-frame) poses.
    """
    _check_lengths(pred_rel, gt_rel, 'local_loss')
    errors = [pose_error(pred, gt_pose, k) for pred, gt_pose in zip(pred_rel, gt_rel)]
    return weighted_sum_scalars(errors, [1.0 / len(errors)] * len(errors))


def global_loss(pred_abs, gt_abs, k):
    """
    Sum of absolute-pose errors weighted by 1/i, where i counts steps from 1. pred_abs[0] is the first estimated frame
    after the origin, so callers pass gt_absolute[1:] for gt_abs.
    """
    _check_lengths(pred_abs, gt_abs, 'global_loss')
    errors = [pose_error(pred, gt_pose, k) for pred, gt_pose in zip(pred_abs, gt_abs)]
    return weighted_sum_scalars(errors, [1.0 / step for step in range(1, len(errors) + 1)])


def total_loss(local, global_):
    """
    :param local: a single-element Tensor or a float
    :param global_: ""
    """
    local = local if isinstance(local, Tensor) else constant(float(local))
    global_ = global_ if isinstance(global_, Tensor) else constant(float(global_))
    return add(local, global_)

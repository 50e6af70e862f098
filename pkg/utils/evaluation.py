import csv
import logging
import math
from pathlib import Path

import numpy as np

from memvo_app.models.metric_report import MetricReport, SegmentBreakdown
from memvo_app.models.pose import Trajectory
from utils.geometry import pose_to_matrix, rotation_angle, umeyama_align
from utils.utilities import ContractError, AssociationError


logger = logging.getLogger(__name__)

KITTI_SEGMENT_LENGTHS = (100, 200, 300, 400, 500, 600, 700, 800)  # meters
KITTI_SEGMENT_STEP = 10  # frames

ATE_ALIGNMENTS = ('none', 'se3', 'sim3')

METRIC_NAMES = ('kitti', 'ate', 'rpe')

# a frame counts as "delta later" if its timestamp is within this of the target time
RPE_TIME_EPS = 1e-9


def _matrices(trajectory):
    return np.array([pose_to_matrix(pose) for pose in trajectory.poses])


def _check_equal_lengths(estimate, reference, min_length, fcn_name):
    if len(estimate) != len(reference):
        raise ContractError(f"{fcn_name}(): length mismatch: estimate={len(estimate)}, reference={len(reference)}")
    elif len(estimate) < min_length:
        raise ContractError(f"{fcn_name}(): need at least {min_length} poses. got {len(estimate)}")


def _relative_error(est_mats, ref_mats, first, last):
    # the error of the estimated motion first -> last w.r.t. the reference motion: inv(rel_est) @ rel_ref
    rel_est = np.linalg.inv(est_mats[first]) @ est_mats[last]
    rel_ref = np.linalg.inv(ref_mats[first]) @ ref_mats[last]
    return np.linalg.inv(rel_est) @ rel_ref


#
# ---- KITTI segment errors ----
#

def path_distances(trajectory):
    """
    :return: array of cumulative path lengths: distances[i] is the distance traveled from frame 0 to frame i
    """
    positions = trajectory.positions()
    steps = np.linalg.norm(np.diff(positions, axis=0), axis=1) if len(positions) > 1 else np.zeros(0)
    return np.concatenate([[0.0], np.cumsum(steps)])


def kitti_segment_errors(estimate, reference, lengths=KITTI_SEGMENT_LENGTHS, step=KITTI_SEGMENT_STEP):
    """
    The KITTI odometry drift metrics. Segments start every `step` frames. For each start and each length L, the
    segment ends at the first frame whose reference path distance from the start is >= L. The error of a segment is
    E = inv(rel_est) @ rel_ref: its translational error is ||t(E)|| / L and its rotational error is angle(E) / L.

    :return: 3-tuple: (t_rel (percent), r_rel (degrees per 100 m), list of SegmentBreakdown, one per length that has
        at least one segment). t_rel and r_rel are the means over all segments of all lengths, or None if the
        trajectory is shorter than the smallest length
    """
    _check_equal_lengths(estimate, reference, 2, 'kitti_segment_errors')
    est_mats, ref_mats = _matrices(estimate), _matrices(reference)
    distances = path_distances(reference)
    length_to_errors = {length: [] for length in lengths}  # length -> list of (t_err, r_err) per meter
    for first in range(0, len(reference), step):
        for length in lengths:
            last = int(np.searchsorted(distances, distances[first] + length, side='left'))
            if last >= len(reference):
                continue

            error_mat = _relative_error(est_mats, ref_mats, first, last)
            length_to_errors[length].append((np.linalg.norm(error_mat[:3, 3]) / length,
                                             rotation_angle(error_mat[:3, :3]) / length))

    all_errors = [error for length in lengths for error in length_to_errors[length]]
    if not all_errors:
        logger.warning(f"kitti_segment_errors(): trajectory too short for any segment. path length="
                       f"{distances[-1]:.3f} m, smallest segment length={min(lengths)} m")
        return None, None, []

    breakdown = [SegmentBreakdown(length, _percent(errors), _deg_per_100m(errors), len(errors))
                 for length, errors in length_to_errors.items() if errors]
    return _percent(all_errors), _deg_per_100m(all_errors), breakdown


def _percent(errors):
    return float(np.mean([t_err for t_err, _ in errors])) * 100.0


def _deg_per_100m(errors):
    return float(np.mean([r_err for _, r_err in errors])) * 100.0 * 180.0 / math.pi


#
# ---- ATE and RPE ----
#

def align_trajectory(estimate, reference, alignment):
    """
    :param alignment: one of ATE_ALIGNMENTS. 'se3' is a rigid fit, 'sim3' also recovers scale
    :return: the estimate aligned onto the reference
    """
    if alignment not in ATE_ALIGNMENTS:
        raise ContractError(f"invalid alignment: {alignment!r}. valid: {ATE_ALIGNMENTS}")

    if alignment == 'none':
        return estimate

    return umeyama_align(estimate, reference, with_scale=(alignment == 'sim3')).aligned


def ate_rmse(estimate, reference, alignment='none'):
    """
    :return: RMSE (meters) of the position residuals after the optional alignment
    :raises AlignmentError: if alignment fails (e.g., fewer than 3 poses)
    """
    _check_equal_lengths(estimate, reference, 1, 'ate_rmse')
    residuals = align_trajectory(estimate, reference, alignment).positions() - reference.positions()
    return float(np.sqrt(np.mean(np.sum(residuals * residuals, axis=1))))


def rpe_per_second(estimate, reference, timestamps=None, delta=1.0):
    """
    Translational relative pose error per unit time. Each frame i is paired with the first frame j whose timestamp is
    at least delta later; the pair's error is ||t(inv(rel_est) @ rel_ref)|| / delta.

    :param timestamps: defaults to the reference's timestamps
    :return: the RMSE of the pair errors, in meters per second
    :raises ContractError: if there are no timestamps or the trajectory spans less than delta
    """
    _check_equal_lengths(estimate, reference, 2, 'rpe_per_second')
    timestamps = timestamps if timestamps is not None else reference.timestamps
    if timestamps is None:
        raise ContractError("rpe_per_second(): no timestamps")

    timestamps = np.asarray(timestamps, dtype=np.float64)
    est_mats, ref_mats = _matrices(estimate), _matrices(reference)
    errors = []
    for first, timestamp in enumerate(timestamps):
        last = int(np.searchsorted(timestamps, timestamp + delta - RPE_TIME_EPS, side='left'))
        if last >= len(timestamps):
            break

        errors.append(np.linalg.norm(_relative_error(est_mats, ref_mats, first, last)[:3, 3]) / delta)
    if not errors:
        raise ContractError(f"rpe_per_second(): trajectory spans {timestamps[-1] - timestamps[0]:.6g} s, less than "
                            f"delta={delta} s")

    return float(np.sqrt(np.mean(np.square(errors))))


#
# ---- timestamp association ----
#

def associate_timestamps(est_timestamps, ref_timestamps, window=0.02, max_unmatched_fraction=0.1):
    """
    One-to-one nearest-neighbor matching of estimate to reference timestamps. Candidate pairs closer than `window`
    are taken greedily in order of increasing time difference, skipping timestamps already matched.

    :return: list of (est_idx, ref_idx) pairs, sorted by est_idx
    :raises AssociationError: if more than max_unmatched_fraction of the estimate timestamps are unmatched. the error
        lists them
    """
    ref_timestamps = np.asarray(ref_timestamps, dtype=np.float64)
    candidates = []  # (time difference, est_idx, ref_idx)
    for est_idx, est_ts in enumerate(est_timestamps):
        lo = int(np.searchsorted(ref_timestamps, est_ts - window, side='left'))
        hi = int(np.searchsorted(ref_timestamps, est_ts + window, side='right'))
        candidates.extend((abs(est_ts - ref_timestamps[ref_idx]), est_idx, ref_idx) for ref_idx in range(lo, hi))

    matched_est, matched_ref, pairs = set(), set(), []
    for _, est_idx, ref_idx in sorted(candidates):
        if (est_idx not in matched_est) and (ref_idx not in matched_ref):
            matched_est.add(est_idx)
            matched_ref.add(ref_idx)
            pairs.append((est_idx, ref_idx))

    unmatched = [est_ts for est_idx, est_ts in enumerate(est_timestamps) if est_idx not in matched_est]
    if len(est_timestamps) and (len(unmatched) / len(est_timestamps) > max_unmatched_fraction):
        raise AssociationError(f"{len(unmatched)} of {len(est_timestamps)} estimate timestamps have no reference "
                               f"within {window} s: {unmatched}", unmatched)

    if unmatched:
        logger.info(f"associate_timestamps(): {len(unmatched)} unmatched estimate timestamps")
    return sorted(pairs)


def associated_trajectories(estimate, reference, window=0.02, max_unmatched_fraction=0.1):
    """
    :return: 2-tuple: (estimate, reference) Trajectories cut down to the associated pairs. both carry the estimate's
        timestamps
    """
    pairs = associate_timestamps(estimate.timestamps, reference.timestamps, window, max_unmatched_fraction)
    timestamps = [estimate.timestamps[est_idx] for est_idx, _ in pairs]
    return Trajectory([estimate.poses[est_idx] for est_idx, _ in pairs], timestamps), \
           Trajectory([reference.poses[ref_idx] for _, ref_idx in pairs], timestamps)


#
# ---- reports ----
#

def paired_trajectories(estimate, reference, window=0.02, max_unmatched_fraction=0.1):
    """
    :return: 2-tuple: (estimate, reference) of equal length. timestamped trajectories whose timestamps differ are
        associated; others are returned as is
    :raises ContractError: if the lengths differ and there are no timestamps to associate with
    """
    if estimate.has_timestamps() and reference.has_timestamps() and (estimate.timestamps != reference.timestamps):
        return associated_trajectories(estimate, reference, window, max_unmatched_fraction)
    elif len(estimate) != len(reference):
        raise ContractError(f"length mismatch and no timestamps to associate with: estimate={len(estimate)}, "
                            f"reference={len(reference)}")

    return estimate, reference


def evaluate(estimate, reference, metrics=METRIC_NAMES, ate_alignment='sim3', lengths=KITTI_SEGMENT_LENGTHS,
             step=KITTI_SEGMENT_STEP, rpe_delta=1.0, association_window=0.02, max_unmatched_fraction=0.1):
    """
    Computes the requested metrics. Timestamped trajectories whose timestamps differ are first associated. RPE needs
    timestamps spanning at least rpe_delta; otherwise it is reported as None.

    :param metrics: a subset of METRIC_NAMES
    :return: a MetricReport
    """
    unknown_metrics = sorted(set(metrics) - set(METRIC_NAMES))
    if unknown_metrics:
        raise ContractError(f"unknown metrics: {unknown_metrics}. valid: {METRIC_NAMES}")

    estimate, reference = paired_trajectories(estimate, reference, association_window, max_unmatched_fraction)

    report = MetricReport(num_poses=len(estimate))
    if 'kitti' in metrics:
        report.t_rel, report.r_rel, report.breakdown = kitti_segment_errors(estimate, reference, lengths, step)
    if 'ate' in metrics:
        report.ate_rmse = ate_rmse(estimate, reference, ate_alignment)
        report.ate_alignment = ate_alignment
    if 'rpe' in metrics:
        if not reference.has_timestamps():
            logger.warning("evaluate(): no timestamps. skipping rpe")
        elif reference.timestamps[-1] - reference.timestamps[0] < rpe_delta - RPE_TIME_EPS:
            logger.warning(f"evaluate(): trajectory spans less than rpe_delta={rpe_delta} s. skipping rpe")
        else:
            report.rpe_rmse = rpe_per_second(estimate, reference, delta=rpe_delta)
    return report


def curve_rows(estimate, reference, alignment='none'):
    """
    :return: list of rows for a trajectory-curve CSV file, header first: frame, timestamp, estimate x/y/z (after
        alignment), reference x/y/z
    """
    _check_equal_lengths(estimate, reference, 1, 'curve_rows')
    est_positions = align_trajectory(estimate, reference, alignment).positions()
    ref_positions = reference.positions()
    rows = [['frame', 'timestamp', 'est_x', 'est_y', 'est_z', 'ref_x', 'ref_y', 'ref_z']]
    for frame_idx, (est_position, ref_position) in enumerate(zip(est_positions, ref_positions)):
        timestamp = reference.timestamps[frame_idx] if reference.has_timestamps() else ''
        rows.append([frame_idx, timestamp] + est_position.tolist() + ref_position.tolist())
    return rows


def write_curves_csv(path, estimate, reference, alignment='none'):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as csv_fp:
        csv.writer(csv_fp, delimiter=',').writerows(curve_rows(estimate, reference, alignment))
    logger.info(f"write_curves_csv(): wrote {len(estimate)} rows to {str(path)!r}")

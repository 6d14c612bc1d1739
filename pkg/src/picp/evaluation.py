"""Trajectory accumulation and segment-wise odometry error metrics.

Errors follow the standard relative-pose benchmark style: for every start
pose and every requested segment length, the relative motion over the
segment is compared between estimate and ground truth. Both errors are
normalized by the realized ground-truth path length of the segment, so a
uniformly scaled estimate yields exactly its scale error in percent
regardless of pose spacing.
"""

from dataclasses import dataclass

import numpy as np

from .errors import TrajectoryTooShort
from .lie import RigidTransform, log_so3

DEFAULT_SEGMENT_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


@dataclass(frozen=True)
class Trajectory:
    """Ordered world-frame poses with cumulative path length per pose."""

    poses: tuple
    path_lengths: np.ndarray = None

    def __post_init__(self):
        poses = tuple(self.poses)
        if not poses:
            raise ValueError("trajectory requires at least one pose")
        steps = [
            np.linalg.norm(poses[i].translation - poses[i - 1].translation)
            for i in range(1, len(poses))
        ]
        lengths = np.concatenate([[0.0], np.cumsum(steps)])
        lengths.setflags(write=False)
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "path_lengths", lengths)

    def __len__(self):
        return len(self.poses)

    @property
    def length(self):
        return float(self.path_lengths[-1])


@dataclass(frozen=True)
class SegmentError:
    """Error of one (start pose, segment length) comparison."""

    start_index: int
    length_m: float
    t_err_percent: float
    r_err_deg_per_m: float


@dataclass(frozen=True)
class TrajectoryMetrics:
    """Aggregated segment errors.

    translation_error_percent is the mean of the per-segment percentages;
    rotation_error_deg_per_100m is the mean per-meter rotation error scaled
    by 100.
    """

    translation_error_percent: float
    rotation_error_deg_per_100m: float
    per_segment: tuple


def accumulate(relative_poses) -> Trajectory:
    """Chain relative motions into a world trajectory starting at identity."""
    relative_poses = list(relative_poses)
    if not relative_poses:
        raise ValueError("accumulate requires at least one relative pose")
    poses = [RigidTransform.identity()]
    for rel in relative_poses:
        poses.append(poses[-1] @ rel)
    return Trajectory(tuple(poses))


def relative_motions(trajectory: Trajectory):
    """Inverse of accumulate: per-step relative poses."""
    poses = trajectory.poses
    return [poses[i - 1].inverse() @ poses[i] for i in range(1, len(poses))]


def kitti_metrics(estimate: Trajectory, ground_truth: Trajectory,
                  segment_lengths=DEFAULT_SEGMENT_LENGTHS) -> TrajectoryMetrics:
    """Segment-wise relative-pose errors of estimate against ground truth.

    Segment starts advance one pose at a time; the endpoint for length L is
    the first pose whose cumulative ground-truth path length strictly
    exceeds start + L. Translation error is the relative-pose error norm
    over the realized segment length (reported in percent), rotation error
    is the relative rotation angle per meter (reported in deg, aggregated
    per 100 m). Raises TrajectoryTooShort when no segment is realizable.
    """
    if len(estimate) != len(ground_truth):
        raise ValueError("trajectories must have equal length")
    if len(ground_truth) < 2:
        raise TrajectoryTooShort("need at least two poses")
    lengths = sorted(float(length) for length in segment_lengths)
    if not lengths or lengths[0] <= 0.0:
        raise ValueError("segment lengths must be positive")
    dist = ground_truth.path_lengths
    if ground_truth.length < lengths[0]:
        raise TrajectoryTooShort(
            f"ground-truth path of {ground_truth.length:.3f} m is shorter than "
            f"the minimum segment length {lengths[0]:.3f} m"
        )

    segments = []
    n = len(ground_truth)
    for start in range(n):
        for seg_len in lengths:
            end = int(np.searchsorted(dist, dist[start] + seg_len, side="right"))
            if end >= n:
                break
            realized = float(dist[end] - dist[start])
            rel_gt = ground_truth.poses[start].inverse() @ ground_truth.poses[end]
            rel_est = estimate.poses[start].inverse() @ estimate.poses[end]
            error = rel_est.inverse() @ rel_gt
            t_err = float(np.linalg.norm(error.translation)) / realized
            r_err = float(np.linalg.norm(log_so3(error.rotation))) / realized
            segments.append(SegmentError(start, realized, 100.0 * t_err,
                                         float(np.degrees(r_err))))
    if not segments:
        raise TrajectoryTooShort("no segment of the requested lengths fits the trajectory")
    t_mean = float(np.mean([s.t_err_percent for s in segments]))
    r_mean = float(np.mean([s.r_err_deg_per_m for s in segments]))
    return TrajectoryMetrics(t_mean, 100.0 * r_mean, tuple(segments))

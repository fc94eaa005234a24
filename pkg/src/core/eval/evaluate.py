"""
KITTI odometry metrics.

For every start frame and every segment length L in 100, 200, ..., 800 m (arc length of the ground
truth), the segment ends at the first frame whose ground-truth distance from the start reaches L.
The segment error is E = inverse(est_delta) o gt_delta with delta = inverse(P[first]) o P[last];
the translational error is |t(E)| / L and the rotational error angle(R(E)) / L.
t_rel is the mean translational error in percent, r_rel the mean rotational error in degrees per 100 m.
"""

import io
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import List

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation
from tabulate import tabulate

from src.core.exceptions import DataError, PoseFileError
from src.core.odometry.pose_utils import Trajectory
from src.data.file_utils import atomic_write_bytes, atomic_write_text
from src.data.point_cloud import POSE_TOLERANCE, Pose, rotation_deviation

logger = logging.getLogger(__name__)

SEGMENT_LENGTHS = (100, 200, 300, 400, 500, 600, 700, 800)
ORTHONORMALITY_WARNING = 1e-3
PLOT_AXES = {'x': 0, 'y': 1, 'z': 2}


@dataclass
class SegmentError:
    length: float
    t_err: float
    r_err: float
    count: int


@dataclass
class EvalReport:
    """ t_rel in percent, r_rel in degrees per 100 m """

    t_rel: float
    r_rel: float
    segments: List[SegmentError] = field(default_factory=list)
    n_frames: int = 0
    path_length: float = 0.0
    short_path: bool = False

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def table(self):
        summary = tabulate([['t_rel (%)', self.t_rel], ['r_rel (deg/100m)', self.r_rel],
                            ['frames', self.n_frames], ['path length (m)', self.path_length]],
                           tablefmt='simple', floatfmt='.4f')
        if not self.segments:
            return summary + '\n(path shorter than {} m, no segments)'.format(SEGMENT_LENGTHS[0])
        breakdown = tabulate([[s.length, 100.0 * s.t_err, 100.0 * np.degrees(s.r_err), s.count]
                              for s in self.segments],
                             headers=['length (m)', 't_err (%)', 'r_err (deg/100m)', 'segments'],
                             tablefmt='simple', floatfmt='.4f')
        return summary + '\n\n' + breakdown


def trajectory_distances(trajectory):
    """ Cumulative arc length at every frame """
    steps = np.linalg.norm(np.diff(trajectory.positions, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def _rotation_angles(rotations):
    cos_angle = 0.5 * (np.trace(rotations, axis1=-2, axis2=-1) - 1.0)
    return np.arccos(np.clip(cos_angle, -1.0, 1.0))


def segment_errors(est, gt, lengths=SEGMENT_LENGTHS, step_size=1):
    """ DataFrame with one row per (first frame, length): t_err (fraction) and r_err (rad/m) """

    est_matrices, gt_matrices = est.as_matrices(), gt.as_matrices()
    dist = trajectory_distances(gt)
    n = len(gt)
    rows = []
    for length in lengths:
        first = np.arange(0, n, step_size)
        last = first + np.array([np.searchsorted(dist[f:], dist[f] + length, side='left') for f in first])
        ok = last < n
        first, last = first[ok], last[ok]
        if first.shape[0] == 0:
            continue

        gt_delta = np.linalg.inv(gt_matrices[first]) @ gt_matrices[last]
        est_delta = np.linalg.inv(est_matrices[first]) @ est_matrices[last]
        error = np.linalg.inv(est_delta) @ gt_delta
        rows.append(pd.DataFrame({'first': first,
                                  'length': float(length),
                                  't_err': np.linalg.norm(error[:, :3, 3], axis=1) / length,
                                  'r_err': _rotation_angles(error[:, :3, :3]) / length}))
    if not rows:
        return pd.DataFrame(columns=['first', 'length', 't_err', 'r_err'])
    return pd.concat(rows, ignore_index=True)


def kitti_metrics(est, gt, lengths=SEGMENT_LENGTHS, step_size=1):
    if len(est) != len(gt):
        raise DataError("Trajectories differ in length: {} estimated, {} ground truth".format(len(est), len(gt)))
    if len(gt) < 2:
        raise DataError("Metrics need at least 2 frames")

    path_length = float(trajectory_distances(gt)[-1])
    errors = segment_errors(est, gt, lengths, step_size)
    if errors.shape[0] == 0:
        logger.warning("ground-truth path is %.1f m long, shorter than the first segment length", path_length)
        return EvalReport(t_rel=0.0, r_rel=0.0, n_frames=len(gt), path_length=path_length, short_path=True)

    segments = [SegmentError(length=float(length), t_err=float(group['t_err'].mean()),
                             r_err=float(group['r_err'].mean()), count=int(group.shape[0]))
                for length, group in errors.groupby('length', sort=True)]
    return EvalReport(t_rel=float(errors['t_err'].mean() * 100.0),
                      r_rel=float(np.degrees(errors['r_err'].mean()) * 100.0),
                      segments=segments,
                      n_frames=len(gt),
                      path_length=path_length)


def write_report(report, path):
    atomic_write_text(path, report.to_json())


def read_pose_file(path):
    """ KITTI pose lines: 12 floats, the row-major 3x4 [R|T] mapping frame k into frame 0 """

    poses = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                values = np.array([float(v) for v in line.split()], dtype=np.float64)
            except ValueError:
                raise PoseFileError("{}:{}: pose line has non-numeric values".format(path, line_no))
            if values.shape[0] != 12 or not np.all(np.isfinite(values)):
                raise PoseFileError("{}:{}: expected 12 finite values, got {}".format(path, line_no, values.shape[0]))

            matrix = values.reshape(3, 4)
            rotation = matrix[:, :3]
            deviation = rotation_deviation(rotation)
            if deviation > ORTHONORMALITY_WARNING:
                warnings.warn("{}: rotation of frame {} is not orthonormal (deviation {:.3e})".format(
                    path, len(poses), deviation))
            if deviation >= POSE_TOLERANCE or abs(np.linalg.det(rotation) - 1.0) >= POSE_TOLERANCE:
                rotation = Rotation.from_matrix(rotation).as_matrix()
            poses.append(Pose(rotation=rotation, translation=matrix[:, 3]))

    if not poses:
        raise PoseFileError("'{}' contains no poses".format(path))
    return Trajectory(poses=poses)


def write_pose_file(trajectory, path):
    lines = [' '.join('%.17g' % v for v in pose.as_matrix()[:3].ravel()) for pose in trajectory]
    atomic_write_text(path, '\n'.join(lines) + '\n')


def _plot_rc():
    return {'svg.hashsalt': 'lidar-odometry', 'path.simplify': False, 'svg.fonttype': 'none'}


def _save_svg(fig, path):
    buffer = io.BytesIO()
    fig.savefig(buffer, format='svg', metadata={'Date': None})
    plt.close(fig)
    atomic_write_bytes(path, buffer.getvalue())


def trajectory_frame(trajectories, plane='xz'):
    first, second = PLOT_AXES[plane[0]], PLOT_AXES[plane[1]]
    frames = []
    for name, trajectory in trajectories.items():
        positions = trajectory.positions
        frames.append(pd.DataFrame({'trajectory': name,
                                    'frame': np.arange(len(trajectory)),
                                    plane[0]: positions[:, first],
                                    plane[1]: positions[:, second]}))
    return pd.concat(frames, ignore_index=True)


def export_trajectory_plot(trajectories, csv_path, svg_path, plane='xz'):
    """
    CSV of (trajectory, frame, x, z) and an SVG overlay of the named trajectories on the ground plane.
    Each polyline carries the SVG id 'trajectory-<name>'.
    """

    if len(trajectories) == 0:
        raise ValueError("At least one trajectory is needed")
    if len(plane) != 2 or any(axis not in PLOT_AXES for axis in plane):
        raise ValueError("'plane' must name two of the axes x, y, z")

    frame = trajectory_frame(trajectories, plane)
    atomic_write_text(csv_path, frame.to_csv(index=False, float_format='%.17g'))

    with plt.rc_context(_plot_rc()):
        fig, ax = plt.subplots(figsize=(6, 6))
        for name, group in frame.groupby('trajectory', sort=False):
            ax.plot(group[plane[0]].to_numpy(), group[plane[1]].to_numpy(), label=name,
                    marker='o' if group.shape[0] == 1 else None, gid='trajectory-{}'.format(name))
        ax.set_xlabel('{} (m)'.format(plane[0]))
        ax.set_ylabel('{} (m)'.format(plane[1]))
        ax.set_aspect('equal', adjustable='datalim')
        ax.grid(True, alpha=0.3)
        ax.legend(loc='best')
        _save_svg(fig, svg_path)
    return frame


def export_segment_error_plot(report, csv_path, svg_path):
    """ Translational (%) and rotational (deg/100m) error per segment length """

    frame = pd.DataFrame({'length': [s.length for s in report.segments],
                          't_err_percent': [100.0 * s.t_err for s in report.segments],
                          'r_err_deg_per_100m': [100.0 * np.degrees(s.r_err) for s in report.segments],
                          'count': [s.count for s in report.segments]})
    atomic_write_text(csv_path, frame.to_csv(index=False, float_format='%.17g'))

    with plt.rc_context(_plot_rc()):
        fig, (ax_t, ax_r) = plt.subplots(1, 2, figsize=(10, 4))
        ax_t.plot(frame['length'], frame['t_err_percent'], marker='s', gid='segment-t-err')
        ax_t.set_xlabel('path length (m)')
        ax_t.set_ylabel('translation error (%)')
        ax_r.plot(frame['length'], frame['r_err_deg_per_100m'], marker='s', gid='segment-r-err')
        ax_r.set_xlabel('path length (m)')
        ax_r.set_ylabel('rotation error (deg/100m)')
        for ax in (ax_t, ax_r):
            ax.grid(True, alpha=0.3)
        fig.tight_layout()
        _save_svg(fig, svg_path)
    return frame

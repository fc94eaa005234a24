import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.spatial.transform import Rotation

from src.data.point_cloud import Pose, UnitQuaternion


def twist_to_pose(twist):
    """ Exact exponential of the rotation vector (alpha, beta, gamma); translation (b1, b2, b3) is taken as is """
    values = twist.as_array() if hasattr(twist, 'as_array') else np.asarray(twist, dtype=np.float64)
    return Pose(rotation=Rotation.from_rotvec(values[:3]).as_matrix(), translation=values[3:6])


def rotation_angle(rotation):
    """ Angle of a rotation matrix in radians, trace formula with the arccos argument clamped to [-1, 1] """
    cos_angle = 0.5 * (np.trace(rotation) - 1.0)
    return float(np.arccos(np.clip(cos_angle, -1.0, 1.0)))


def yaw_pose(yaw, translation=(0.0, 0.0, 0.0)):
    return Pose(rotation=Rotation.from_euler('z', yaw).as_matrix(), translation=translation)


def _canonical_quaternion(values):
    values = np.asarray(values, dtype=np.float64)
    values = values / np.linalg.norm(values)
    if values[0] < 0:
        values = -values
    return UnitQuaternion(*values)


def quat_from_pose(pose):
    """ Scalar-first unit quaternion of the pose rotation, on the a >= 0 hemisphere """
    x, y, z, w = Rotation.from_matrix(pose.rotation).as_quat()
    return _canonical_quaternion([w, x, y, z])


def quat_to_rotation(quaternion):
    return Rotation.from_quat([quaternion.b, quaternion.c, quaternion.d, quaternion.a]).as_matrix()


def quat_recover(vector):
    """
    Rebuilds a unit quaternion from its vector part (b, c, d): a = +sqrt(1 - |v|^2).
    A vector longer than 1 is scaled back to unit length; the returned flag tells whether that happened.
    """

    vector = np.asarray(vector, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(vector)):
        raise ValueError("Quaternion vector part must be finite !!!")
    norm = float(np.linalg.norm(vector))
    clamped = norm > 1.0
    if clamped:
        warnings.warn("Quaternion vector part has norm {:.6f} > 1, clamped to unit length".format(norm))
        vector = vector / norm
    scalar = np.sqrt(max(0.0, 1.0 - float(vector @ vector)))
    return _canonical_quaternion(np.concatenate([[scalar], vector])), clamped


@dataclass
class Trajectory:
    """ Absolute poses, element k maps frame k into frame 0 """

    poses: List[Pose] = field(default_factory=lambda: [Pose.identity()])
    timestamps: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, idx):
        return self.poses[idx]

    def __iter__(self):
        return iter(self.poses)

    @property
    def positions(self):
        return np.array([pose.translation for pose in self.poses]).reshape(-1, 3)

    def as_matrices(self):
        return np.array([pose.as_matrix() for pose in self.poses]).reshape(-1, 4, 4)

    def relative_poses(self):
        """ Poses between consecutive frames: inverse(P[k-1]) o P[k] """
        return [prev.inverse().compose(pose) for prev, pose in zip(self.poses[:-1], self.poses[1:])]

    def transformed(self, pose):
        """ Every absolute pose left-composed with 'pose' """
        return Trajectory(poses=[pose.compose(p) for p in self.poses], timestamps=self.timestamps)

    def path_length(self):
        positions = self.positions
        return float(np.linalg.norm(np.diff(positions, axis=0), axis=1).sum()) if len(positions) > 1 else 0.0


def accumulate_trajectory(relative):
    """ absolute[0] = identity, absolute[k] = absolute[k-1] o relative[k-1] """

    poses = [Pose.identity()]
    for step in relative:
        poses.append(poses[-1].compose(step))
    return Trajectory(poses=poses)

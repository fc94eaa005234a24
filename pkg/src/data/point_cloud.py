from dataclasses import dataclass
from typing import Optional

import numpy as np


POSE_TOLERANCE = 1e-9
QUATERNION_TOLERANCE = 1e-9


def _frozen_array(values, dtype=np.float64):
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class PointCloud:
    """
    Sensor-frame Cartesian points of one LiDAR scan.

    points: (N, 3) float64 in meters. Order is meaningful: projection index maps refer
    to rows of this array.
    intensity: optional (N,) reflectance in [0, 1], carried but unused by the estimators.
    """

    points: np.ndarray
    intensity: Optional[np.ndarray] = None

    def __post_init__(self):
        points = _frozen_array(self.points).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise ValueError("PointCloud coordinates must be finite !!!")
        object.__setattr__(self, 'points', points)

        if self.intensity is not None:
            intensity = _frozen_array(self.intensity).reshape(-1)
            if intensity.shape[0] != points.shape[0]:
                raise ValueError("'intensity' must have one value per point, got {} for {} points".format(
                    intensity.shape[0], points.shape[0]))
            object.__setattr__(self, 'intensity', intensity)

    def __len__(self):
        return self.points.shape[0]

    @property
    def ranges(self):
        return np.linalg.norm(self.points, axis=1)

    @classmethod
    def empty(cls):
        return cls(points=np.zeros((0, 3)), intensity=np.zeros(0))

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        if not np.array_equal(self.points, other.points):
            return False
        if self.intensity is None or other.intensity is None:
            return self.intensity is None and other.intensity is None
        return np.array_equal(self.intensity, other.intensity)


@dataclass(frozen=True, eq=False)
class Pose:
    """ Rigid transform x -> R x + T """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = _frozen_array(self.rotation).reshape(3, 3)
        translation = _frozen_array(self.translation).reshape(3)
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise ValueError("Pose entries must be finite !!!")
        deviation = rotation_deviation(rotation)
        if deviation >= POSE_TOLERANCE or abs(np.linalg.det(rotation) - 1.0) >= POSE_TOLERANCE:
            raise ValueError("Pose rotation is not a proper rotation (deviation {:.3e})".format(deviation))
        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 'translation', translation)

    @classmethod
    def identity(cls):
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(rotation=matrix[:3, :3], translation=matrix[:3, 3])

    def as_matrix(self):
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def apply(self, points):
        """ Transforms (N, 3) points, or a single 3-vector """
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, other):
        """ self ∘ other: apply 'other' first """
        return Pose(rotation=self.rotation @ other.rotation,
                    translation=self.rotation @ other.translation + self.translation)

    def inverse(self):
        rotation_t = self.rotation.T
        return Pose(rotation=rotation_t, translation=-rotation_t @ self.translation)

    def __matmul__(self, other):
        return self.compose(other)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)


def rotation_deviation(rotation):
    """ Infinity norm of R^T R - I """
    rotation = np.asarray(rotation, dtype=np.float64)
    return float(np.max(np.abs(rotation.T @ rotation - np.eye(3))))


@dataclass(frozen=True)
class UnitQuaternion:
    """ Scalar-first unit quaternion (a, b, c, d), kept on the a >= 0 hemisphere """

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        values = np.array([self.a, self.b, self.c, self.d], dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError("Quaternion components must be finite !!!")
        if abs(float(values @ values) - 1.0) > QUATERNION_TOLERANCE:
            raise ValueError("Quaternion must have unit norm, got {:.12f}".format(float(np.sqrt(values @ values))))
        if self.a < 0:
            raise ValueError("Quaternion must lie on the canonical hemisphere (a >= 0) !!!")

    @property
    def vector(self):
        return np.array([self.b, self.c, self.d])

    def as_array(self):
        return np.array([self.a, self.b, self.c, self.d])


def transform_cloud(cloud, pose):
    """ Applies a rigid pose to every point, preserving order and intensity """
    return PointCloud(points=pose.apply(cloud.points), intensity=cloud.intensity)

import unittest

import numpy as np
from scipy.spatial.transform import Rotation

from src.core.exceptions import RobustEstimationError
from src.core.keypoints.mkp_extractor import MKPSet
from src.core.odometry.estimators import RansacParams, iterative_registration, ransac_estimate
from src.core.odometry.pose_utils import rotation_angle, twist_to_pose, yaw_pose
from src.core.odometry.twist_solver import TwistSystem, accumulate_pairs, estimate_rigid_motion, pair_distances, \
    solve_twist
from src.data.point_cloud import PointCloud, Pose
from src.tests.test_twist_solver import kabsch, pose_errors, small_pose


def outlier_mkps(rng, gt, m=100, outlier_ratio=0.3):
    """ m pairs under 'gt', a fraction of them replaced by uniformly drawn right-hand points """
    left = rng.uniform(-20, 20, (m, 3))
    right = gt.apply(left)
    outliers = rng.random(m) < outlier_ratio
    right[outliers] = rng.uniform(-20, 20, (int(outliers.sum()), 3))
    return MKPSet.from_points(left, right), outliers


class TestRansac(unittest.TestCase):

    def test_all_inliers(self):
        rng = np.random.default_rng(0)
        gt = small_pose(rng)
        left = rng.uniform(-20, 20, (60, 3))
        mkps = MKPSet.from_points(left, gt.apply(left))
        pose, mask = ransac_estimate(mkps, seed=0)
        self.assertTrue(mask.all())
        reference = estimate_rigid_motion(left, gt.apply(left))
        np.testing.assert_allclose(pose.as_matrix(), reference.as_matrix(), atol=1e-9)

    def test_single_refit_is_one_closed_form_solve_on_the_inliers(self):
        rng = np.random.default_rng(12)
        gt = Pose(rotation=Rotation.from_rotvec([0.002, -0.001, 0.004]).as_matrix(), translation=[0.3, -0.1, 0.05])
        left = rng.uniform(-20, 20, (75, 3))
        right = gt.apply(left)
        right[60:] += rng.uniform(2.0, 5.0, (15, 3)) * rng.choice([-1.0, 1.0], (15, 3))

        pose, mask = ransac_estimate(MKPSet.from_points(left, right), RansacParams(refit_iterations=1), seed=4)
        np.testing.assert_array_equal(mask, np.arange(75) < 60)
        reference = twist_to_pose(solve_twist(accumulate_pairs(TwistSystem.empty(), left[:60], right[:60])))
        np.testing.assert_allclose(pose.as_matrix(), reference.as_matrix(), atol=1e-12)

    def test_minimal_sample(self):
        rng = np.random.default_rng(1)
        gt = small_pose(rng)
        left = np.array([[5.0, 1.0, 0.0], [-2.0, 7.0, 1.0], [3.0, -4.0, 2.0]])
        pose, mask = ransac_estimate(MKPSet.from_points(left, gt.apply(left)), RansacParams(min_inliers=3))
        self.assertTrue(mask.all())
        rotation_error, translation_error = pose_errors(pose, kabsch(left, gt.apply(left)))
        self.assertLess(rotation_error, 1e-6)
        self.assertLess(translation_error, 1e-6)

    def test_outliers(self):
        params = RansacParams(iterations=500, inlier_threshold=0.1)
        successes = 0
        for trial in range(100):
            rng = np.random.default_rng(1000 + trial)
            gt = small_pose(rng, max_angle_deg=3.0)
            mkps, outliers = outlier_mkps(rng, gt)
            pose, mask = ransac_estimate(mkps, params, seed=trial)
            rotation_error, translation_error = pose_errors(pose, gt)
            successes += rotation_error <= 0.05 and translation_error <= 5e-3

            # every pair in the mask fits the returned pose
            self.assertTrue(np.all(pair_distances(mkps, pose)[mask] <= params.inlier_threshold))
        self.assertGreaterEqual(successes, 99)

    def test_seeded(self):
        rng = np.random.default_rng(2)
        mkps, _ = outlier_mkps(rng, small_pose(rng), outlier_ratio=0.5)
        pose_a, mask_a = ransac_estimate(mkps, seed=[7, 3])
        pose_b, mask_b = ransac_estimate(mkps, seed=[7, 3])
        self.assertEqual(pose_a, pose_b)
        np.testing.assert_array_equal(mask_a, mask_b)

    def test_no_consensus(self):
        rng = np.random.default_rng(3)
        mkps = MKPSet.from_points(rng.uniform(-20, 20, (30, 3)), rng.uniform(-20, 20, (30, 3)))
        with self.assertRaises(RobustEstimationError):
            ransac_estimate(mkps, RansacParams(iterations=50, min_inliers=10))

    def test_too_few_pairs(self):
        with self.assertRaises(RobustEstimationError):
            ransac_estimate(MKPSet.from_points(np.zeros((2, 3)), np.zeros((2, 3))))


def cube_cloud(n=11, size=10.0):
    """ Points on the faces of a cube centred at the origin, symmetric under 90 degree yaw """
    ticks = np.linspace(-size / 2, size / 2, n)
    u, v = np.meshgrid(ticks, ticks)
    u, v = u.ravel(), v.ravel()
    faces = []
    for axis in range(3):
        for side in (-size / 2, size / 2):
            face = np.zeros((u.shape[0], 3))
            face[:, axis] = side
            face[:, (axis + 1) % 3] = u
            face[:, (axis + 2) % 3] = v
            faces.append(face)
    return np.unique(np.round(np.concatenate(faces), 9), axis=0)


class TestIterativeRegistration(unittest.TestCase):
    points = np.random.default_rng(4).uniform(-10, 10, (2000, 3))

    def test_identical_clouds(self):
        cloud = PointCloud(points=self.points)
        result = iterative_registration(cloud, cloud)
        self.assertTrue(result.converged)
        self.assertEqual(result.iterations, 1)
        np.testing.assert_allclose(result.pose.as_matrix(), np.eye(4), atol=1e-12)

    def test_small_yaw(self):
        gt = yaw_pose(np.radians(1.0))
        result = iterative_registration(PointCloud(points=self.points), PointCloud(points=gt.apply(self.points)))
        self.assertTrue(result.converged)
        rotation_error, _ = pose_errors(result.pose, gt)
        self.assertLess(rotation_error, 0.05)

    def test_quarter_turn(self):
        # a cube looks the same after a 90 degree yaw, nearest neighbours pull ICP to the identity
        points = cube_cloud()
        gt = yaw_pose(np.pi / 2)
        result = iterative_registration(PointCloud(points=points), PointCloud(points=gt.apply(points)))
        error = np.degrees(rotation_angle(result.pose.rotation.T @ gt.rotation))
        self.assertTrue(not result.converged or error > 1.0)

    def test_empty_cloud(self):
        with self.assertRaises(ValueError):
            iterative_registration(PointCloud.empty(), PointCloud(points=self.points))


if __name__ == '__main__':
    unittest.main()

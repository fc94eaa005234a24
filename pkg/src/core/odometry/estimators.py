import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from src.core.exceptions import DegenerateGeometryError, RobustEstimationError
from src.core.odometry.pose_utils import twist_to_pose
from src.core.odometry.twist_solver import TwistSystem, accumulate_pairs, estimate_rigid_motion, pair_distances, \
    solve_twist
from src.data.point_cloud import Pose

logger = logging.getLogger(__name__)

MINIMAL_SAMPLE = 3

DEFAULT_RANSAC_CONFIG = {'iterations': 500,
                         'inlier_threshold': 0.1,
                         'min_inliers': 10,
                         'refit_iterations': 5}

DEFAULT_ICP_CONFIG = {'max_iter': 50,
                      'tol': 1e-8,
                      'max_points': 20000}


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 500
    inlier_threshold: float = 0.1
    min_inliers: int = 10
    refit_iterations: int = 5

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("'iterations' must be >= 1")
        if self.inlier_threshold <= 0:
            raise ValueError("'inlier_threshold' must be > 0")
        if self.min_inliers < MINIMAL_SAMPLE:
            raise ValueError("'min_inliers' must be >= {}".format(MINIMAL_SAMPLE))


def _sample_rng(seed, iteration):
    # every iteration draws from its own stream, results do not depend on evaluation order
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(iteration,)))


def ransac_estimate(mkps, params=None, seed=0):
    """
    Robust pose of the MKPs (frame i -> frame i+1) and the inlier mask under that pose.

    Each iteration solves the twist system on 3 sampled pairs and counts the pairs whose transform
    residual is within 'inlier_threshold'. The best candidate is refit on its inliers.
    """

    params = RansacParams() if params is None else params
    pairs = getattr(mkps, 'pairs', mkps)
    if pairs.shape[0] < MINIMAL_SAMPLE:
        raise RobustEstimationError("RANSAC needs at least {} pairs, got {}".format(MINIMAL_SAMPLE, pairs.shape[0]))
    left, right = pairs[:, :3], pairs[:, 3:]

    best_pose, best_mask, best_count = None, None, -1
    for iteration in range(params.iterations):
        sample = _sample_rng(seed, iteration).choice(pairs.shape[0], MINIMAL_SAMPLE, replace=False)
        try:
            candidate = estimate_rigid_motion(left[sample], right[sample], iterations=2)
        except DegenerateGeometryError:
            continue
        mask = pair_distances(pairs, candidate) <= params.inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_pose, best_mask, best_count = candidate, mask, count

    if best_count < params.min_inliers:
        raise RobustEstimationError("Best model has {} inliers, {} are required".format(
            max(best_count, 0), params.min_inliers))

    try:
        pose = estimate_rigid_motion(left[best_mask], right[best_mask], iterations=params.refit_iterations)
        mask = pair_distances(pairs, pose) <= params.inlier_threshold
    except DegenerateGeometryError:
        pose, mask = best_pose, best_mask
    if mask.sum() < best_count:
        pose, mask = best_pose, best_mask

    logger.debug("RANSAC: %d of %d pairs are inliers", int(mask.sum()), pairs.shape[0])
    return pose, mask


@dataclass(frozen=True)
class RegistrationResult:
    pose: Pose
    converged: bool
    iterations: int
    rmse: float


def iterative_registration(cloud_a, cloud_b, max_iter=50, tol=1e-8, initial=None, max_points=None):
    """
    Point-to-point ICP: pose mapping cloud_a onto cloud_b.
    Correspondences are the nearest neighbours in cloud_b, each iteration applies one closed-form twist
    solve. Stops when the twist update is below 'tol'; otherwise the pose with the lowest RMSE is returned
    with converged=False.
    """

    source = getattr(cloud_a, 'points', cloud_a)
    target = getattr(cloud_b, 'points', cloud_b)
    if source.shape[0] == 0 or target.shape[0] == 0:
        raise ValueError("Both clouds must be non-empty")
    if max_points is not None and source.shape[0] > max_points:
        source = source[np.linspace(0, source.shape[0] - 1, max_points).astype(np.int64)]

    tree = cKDTree(target)
    pose = Pose.identity() if initial is None else initial
    best_pose, best_rmse = pose, np.inf

    for iteration in range(1, max_iter + 1):
        moved = pose.apply(source)
        distances, nearest = tree.query(moved)
        rmse = float(np.sqrt(np.mean(distances ** 2)))
        if rmse < best_rmse:
            best_pose, best_rmse = pose, rmse

        try:
            twist = solve_twist(accumulate_pairs(TwistSystem.empty(), moved, target[nearest]))
        except DegenerateGeometryError as e:
            logger.debug("ICP stopped at iteration %d: %s", iteration, e)
            break
        pose = twist_to_pose(twist).compose(pose)

        if np.linalg.norm(twist.as_array()) < tol:
            distances, _ = tree.query(pose.apply(source))
            return RegistrationResult(pose=pose, converged=True, iterations=iteration,
                                      rmse=float(np.sqrt(np.mean(distances ** 2))))

    logger.debug("ICP did not converge in %d iterations (rmse %.4f)", max_iter, best_rmse)
    return RegistrationResult(pose=best_pose, converged=False, iterations=max_iter, rmse=best_rmse)

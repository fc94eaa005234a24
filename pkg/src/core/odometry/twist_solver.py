"""
Closed-form rigid motion from matched point pairs.

For a pair (x, y) the motion is linearized as y ~ x + w x x + b with w = (alpha, beta, gamma) the small
rotation about the x, y and z axes and b = (b1, b2, b3) the translation. With t = (w, b) the residual
is r = J t + (x - y), J = [-[x]_x, I], and summing the per-pair normal equations gives

    Q = [[|x|^2 I - x x^T,  [x]_x],        q = [ y x x ]
         [-[x]_x,           I    ]]            [ x - y ]

so the least-squares twist is t = -(sum Q)^-1 (sum q).
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from src.core.exceptions import DegenerateGeometryError
from src.core.odometry.pose_utils import twist_to_pose
from src.data.point_cloud import Pose

logger = logging.getLogger(__name__)

CONDITION_BOUND = 1e10
LINEARIZATION_LIMIT = np.pi / 4


@dataclass(frozen=True)
class TwistParams:
    alpha: float
    beta: float
    gamma: float
    b1: float
    b2: float
    b3: float
    linearization_valid: bool = True

    def as_array(self):
        return np.array([self.alpha, self.beta, self.gamma, self.b1, self.b2, self.b3])

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=np.float64).reshape(6)
        if not np.all(np.isfinite(values)):
            raise ValueError("Twist parameters must be finite !!!")
        valid = bool(np.all(np.abs(values[:3]) < LINEARIZATION_LIMIT))
        return cls(*(float(v) for v in values), linearization_valid=valid)


@dataclass(frozen=True, eq=False)
class TwistSystem:
    Q_sum: np.ndarray
    q_sum: np.ndarray
    count: int = 0

    @classmethod
    def empty(cls):
        return cls(Q_sum=np.zeros((6, 6)), q_sum=np.zeros(6), count=0)


def skew(v):
    """ [v]_x, so that skew(v) @ u = v x u """
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def pair_terms(x, y):
    """ Per-pair Q (m, 6, 6) and q (m, 6) """

    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 3)
    x_skew = skew(x)

    Q = np.zeros((x.shape[0], 6, 6))
    Q[:, :3, :3] = np.einsum('mi,mi->m', x, x)[:, None, None] * np.eye(3) - np.einsum('mi,mj->mij', x, x)
    Q[:, :3, 3:] = x_skew
    Q[:, 3:, :3] = -x_skew
    Q[:, 3:, 3:] = np.eye(3)

    q = np.concatenate([np.cross(y, x), x - y], axis=1)
    return Q, q


def accumulate_pair(system, pair):
    x, y = pair
    return accumulate_pairs(system, x, y)


def accumulate_pairs(system, x, y):
    Q, q = pair_terms(x, y)
    return TwistSystem(Q_sum=system.Q_sum + Q.sum(axis=0), q_sum=system.q_sum + q.sum(axis=0),
                       count=system.count + Q.shape[0])


def objective(system, twist):
    """ 1/2 t^T Q t + q^T t, minimized by solve_twist """
    t = twist.as_array() if isinstance(twist, TwistParams) else np.asarray(twist, dtype=np.float64)
    return float(0.5 * t @ system.Q_sum @ t + system.q_sum @ t)


def solve_twist(system, condition_bound=CONDITION_BOUND):
    """ t = -Q^-1 q through a Cholesky solve; singular or ill-conditioned systems are rejected """

    if system.count < 3:
        raise DegenerateGeometryError("At least 3 pairs are needed, got {}".format(system.count))

    condition = np.linalg.cond(system.Q_sum)
    if not np.isfinite(condition) or condition > condition_bound:
        raise DegenerateGeometryError("Twist system is degenerate (condition number {:.3e})".format(condition))
    try:
        factor = cho_factor(system.Q_sum)
    except LinAlgError as e:
        raise DegenerateGeometryError("Twist system is not positive definite: {}".format(e))

    twist = TwistParams.from_array(-cho_solve(factor, system.q_sum))
    if not twist.linearization_valid:
        logger.debug("twist angles %s exceed the small-angle range", twist.as_array()[:3])
    return twist


def estimate_rigid_motion(x, y, iterations=5, tol=1e-12, condition_bound=CONDITION_BOUND):
    """
    Pose with y ~ R x + T, found by re-solving the linear system on the pairs moved by the
    current estimate (Gauss-Newton). One iteration is the plain closed-form solve.
    """

    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 3)
    pose = Pose.identity()
    for _ in range(iterations):
        system = accumulate_pairs(TwistSystem.empty(), pose.apply(x), y)
        twist = solve_twist(system, condition_bound)
        pose = twist_to_pose(twist).compose(pose)
        if np.linalg.norm(twist.as_array()) < tol:
            break
    return pose


def pair_distances(pairs, pose):
    """ |R x_i + T - x_(i+1)| per pair """
    pairs = getattr(pairs, 'pairs', pairs)
    return np.linalg.norm(pose.apply(pairs[:, :3]) - pairs[:, 3:], axis=1)


def label_mkps(mkps, gt, threshold=0.1):
    """ Label 1 for pairs that move with the ground-truth pose within 'threshold' meters, 0 otherwise """
    if threshold <= 0:
        raise ValueError("'threshold' must be > 0")
    return mkps.with_labels((pair_distances(mkps.pairs, gt) <= threshold).astype(np.int64))

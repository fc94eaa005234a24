import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from src.core.exceptions import DataError, DegenerateFramePairError
from src.core.keypoints.sift_detector import KeypointSet, detect_and_describe
from src.core.projection.image_utils import EqualizedImage, depth_completion, histogram_equalize
from src.core.projection.spherical_projection import SphericalImage, back_project_pixels, project
from src.data.file_utils import atomic_write_text
from src.data.point_cloud import PointCloud

logger = logging.getLogger(__name__)

MKP_COLUMNS = ['xi', 'yi', 'zi', 'xj', 'yj', 'zj']

DEFAULT_MATCHING_CONFIG = {'ratio': 0.8,
                           'max_col_displacement': None}


class Match(NamedTuple):
    index_a: int
    index_b: int
    distance: float


@dataclass(frozen=True)
class MatchingParams:
    """ Lowe ratio and an optional cyclic column-displacement gate in pixels (None disables it) """

    ratio: float = 0.8
    max_col_displacement: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.ratio <= 1:
            raise ValueError("'ratio' must be in (0, 1]")
        if self.max_col_displacement is not None and self.max_col_displacement < 0:
            raise ValueError("'max_col_displacement' must be >= 0")


def _second_best(distances, axis):
    if distances.shape[axis] < 2:
        return np.full(distances.shape[1 - axis], np.inf)
    return np.partition(distances, 1, axis=axis).take(1, axis=axis)


def match_descriptors(a, b, params=None, width=None):
    """
    Mutual nearest neighbours under L2 descriptor distance that also pass the ratio test seen from
    both keypoint sets, sorted by distance then by index in 'a'.
    'width' is the image width, needed only by the column-displacement gate.
    """

    params = MatchingParams() if params is None else params
    if len(a) == 0 or len(b) == 0:
        return []

    distances = cdist(a.descriptors, b.descriptors)
    best_b = distances.argmin(axis=1)
    best_a = distances.argmin(axis=0)

    idx_a = np.flatnonzero(best_a[best_b] == np.arange(len(a)))
    idx_b = best_b[idx_a]
    best = distances[idx_a, idx_b]

    keep = (best < params.ratio * _second_best(distances, axis=1)[idx_a]) & \
           (best < params.ratio * _second_best(distances, axis=0)[idx_b])

    if params.max_col_displacement is not None:
        if width is None:
            raise ValueError("The column displacement gate needs the image 'width'")
        shift = np.abs(b.positions[idx_b, 1] - a.positions[idx_a, 1]) % width
        keep &= np.minimum(shift, width - shift) <= params.max_col_displacement

    idx_a, idx_b, best = idx_a[keep], idx_b[keep], best[keep]
    order = np.lexsort((idx_a, best))
    return [Match(int(idx_a[i]), int(idx_b[i]), float(best[i])) for i in order]


@dataclass(frozen=True, eq=False)
class MKPSet:
    """
    Matched keypoint pairs: row k holds (xi, yi, zi, xj, yj, zj), the same feature seen in frame i and i+1.
    pixel_pairs: (m, 4) integer (row_i, col_i, row_j, col_j) of the pixels the pairs were read from.
    shortfall: how many pairs were missing to reach the requested count.
    """

    pairs: np.ndarray
    weights: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    pixel_pairs: Optional[np.ndarray] = None
    shortfall: int = 0

    def __post_init__(self):
        pairs = np.array(self.pairs, dtype=np.float64, copy=True).reshape(-1, 6)
        if not np.all(np.isfinite(pairs)):
            raise ValueError("MKP coordinates must be finite !!!")
        pairs.setflags(write=False)
        object.__setattr__(self, 'pairs', pairs)

        if self.weights is not None:
            weights = np.array(self.weights, dtype=np.float64, copy=True).reshape(-1)
            if weights.shape[0] != pairs.shape[0] or np.any((weights < 0) | (weights > 1)):
                raise ValueError("MKP weights must be one value in [0, 1] per pair")
            weights.setflags(write=False)
            object.__setattr__(self, 'weights', weights)

        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
            if labels.shape[0] != pairs.shape[0] or np.any((labels != 0) & (labels != 1)):
                raise ValueError("MKP labels must be one value in {0, 1} per pair")
            labels.setflags(write=False)
            object.__setattr__(self, 'labels', labels)

        if self.pixel_pairs is not None:
            pixel_pairs = np.array(self.pixel_pairs, dtype=np.int64, copy=True).reshape(-1, 4)
            pixel_pairs.setflags(write=False)
            object.__setattr__(self, 'pixel_pairs', pixel_pairs)

    def __len__(self):
        return self.pairs.shape[0]

    @property
    def left(self):
        return self.pairs[:, :3]

    @property
    def right(self):
        return self.pairs[:, 3:]

    def with_labels(self, labels):
        return MKPSet(pairs=self.pairs, weights=self.weights, labels=labels, pixel_pairs=self.pixel_pairs,
                      shortfall=self.shortfall)

    @classmethod
    def from_points(cls, left, right, **kwargs):
        return cls(pairs=np.hstack([np.asarray(left, dtype=np.float64), np.asarray(right, dtype=np.float64)]),
                   **kwargs)


class Frame(NamedTuple):
    """ A scan ready for matching: the raw cloud, its completed projection and the equalized image """

    image: SphericalImage
    equalized: EqualizedImage
    cloud: PointCloud
    keypoints: Optional[KeypointSet] = None


def prepare_frame(cloud, cfg, detector_params=None, detect=True):
    """ project -> complete -> equalize, and detect keypoints unless 'detect' is False """

    image = depth_completion(project(cloud, cfg))
    equalized = histogram_equalize(image, cfg)
    keypoints = detect_and_describe(equalized, detector_params) if detect else None
    return Frame(image=image, equalized=equalized, cloud=cloud, keypoints=keypoints)


def _pixels_of(keypoints, cfg):
    """ Rounded integer pixels of the keypoints; columns wrap around, rows are clipped """
    rows = np.clip(np.rint(keypoints.positions[:, 0]), 0, cfg.height - 1).astype(np.int64)
    cols = np.mod(np.rint(keypoints.positions[:, 1]), cfg.width).astype(np.int64)
    return rows, cols


def extract_mkps(frame_i, frame_j, n=1000, detector_params=None, matching_params=None):
    """
    Matches the two frames and returns at most 'n' 3D pairs, best descriptor distance first.
    A match is dropped when either pixel had no LiDAR return before depth completion, since its depth
    was invented by the completion. Fewer than 'n' surviving pairs is reported as a warning.
    """

    cfg = frame_i.image.config
    if frame_j.image.config != cfg:
        raise DataError("Both frames must be projected with the same ProjectionConfig")
    if n < 1:
        raise ValueError("'n' must be >= 1")

    keypoints_i = frame_i.keypoints if frame_i.keypoints is not None else \
        detect_and_describe(frame_i.equalized, detector_params)
    keypoints_j = frame_j.keypoints if frame_j.keypoints is not None else \
        detect_and_describe(frame_j.equalized, detector_params)

    matches = match_descriptors(keypoints_i, keypoints_j, matching_params, width=cfg.width)
    if len(matches) == 0:
        raise DegenerateFramePairError("No descriptor matches between the frames ({} and {} keypoints)".format(
            len(keypoints_i), len(keypoints_j)))

    idx_i = np.array([match.index_a for match in matches], dtype=np.int64)
    idx_j = np.array([match.index_b for match in matches], dtype=np.int64)
    rows_i, cols_i = _pixels_of(keypoints_i, cfg)
    rows_j, cols_j = _pixels_of(keypoints_j, cfg)
    rows_i, cols_i, rows_j, cols_j = rows_i[idx_i], cols_i[idx_i], rows_j[idx_j], cols_j[idx_j]

    real = frame_i.image.valid[rows_i, cols_i] & frame_j.image.valid[rows_j, cols_j]
    keep = np.flatnonzero(real)[:n]
    if keep.shape[0] == 0:
        raise DegenerateFramePairError("All {} matches landed on pixels filled by depth completion".format(
            len(matches)))

    left, _ = back_project_pixels(frame_i.image, rows_i[keep], cols_i[keep], frame_i.cloud)
    right, _ = back_project_pixels(frame_j.image, rows_j[keep], cols_j[keep], frame_j.cloud)
    pixel_pairs = np.stack([rows_i[keep], cols_i[keep], rows_j[keep], cols_j[keep]], axis=1)

    shortfall = n - keep.shape[0]
    logger.debug("%d matches, %d fake pairs removed, %d pairs kept", len(matches),
                 len(matches) - int(real.sum()), keep.shape[0])
    if shortfall > 0:
        warnings.warn("Only {} of the requested {} MKPs were found".format(keep.shape[0], n))
    return MKPSet.from_points(left, right, pixel_pairs=pixel_pairs, shortfall=shortfall)


def mkps_to_frame(mkps):
    frame = pd.DataFrame(mkps.pairs, columns=MKP_COLUMNS)
    if mkps.weights is not None or mkps.labels is not None:
        frame['weight'] = mkps.weights if mkps.weights is not None else np.nan
        frame['label'] = mkps.labels if mkps.labels is not None else -1
    return frame


def write_mkp_csv(mkps, path):
    """ Header xi,yi,zi,xj,yj,zj[,weight,label]; floats at full precision """
    atomic_write_text(path, mkps_to_frame(mkps).to_csv(index=False, float_format='%.17g'))


def read_mkp_csv(path):
    frame = pd.read_csv(path, float_precision='round_trip')
    columns = list(frame.columns)
    if columns[:6] != MKP_COLUMNS or columns[6:] not in ([], ['weight', 'label']):
        raise DataError("'{}' is not an MKP file, columns are {}".format(path, columns))

    weights, labels = None, None
    if 'weight' in frame:
        if frame['weight'].notna().all():
            weights = frame['weight'].to_numpy()
        if (frame['label'] >= 0).all():
            labels = frame['label'].to_numpy()
    return MKPSet(pairs=frame[MKP_COLUMNS].to_numpy(dtype=np.float64), weights=weights, labels=labels)

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.core.exceptions import DataError, VoidPixelError

logger = logging.getLogger(__name__)

VOID_INDEX = -1

DEFAULT_PROJECTION_CONFIG = {'height': 64,
                             'width': 1024,
                             'fov_up_deg': 2.0,
                             'fov_down_deg': -24.8,
                             'max_range': 80.0,
                             'top_row_max_elevation': True}


@dataclass(frozen=True)
class ProjectionConfig:
    """
    Spherical image geometry.
        height, width: pixel counts (rows index elevation, columns index azimuth)
        vertical_fov: (min, max) elevation in radians
        max_range: depth clamp in meters used by the equalization
        top_row_max_elevation: row 0 holds the highest elevation bin
    """

    height: int = 64
    width: int = 1024
    vertical_fov: Tuple[float, float] = (np.radians(-24.8), np.radians(2.0))
    max_range: float = 80.0
    top_row_max_elevation: bool = True

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("'height' and 'width' must be >= 1")
        if not self.vertical_fov[0] < self.vertical_fov[1]:
            raise ValueError("'vertical_fov' must be an increasing (min, max) pair")
        if self.max_range <= 0:
            raise ValueError("'max_range' must be > 0")
        object.__setattr__(self, 'vertical_fov', (float(self.vertical_fov[0]), float(self.vertical_fov[1])))

    @property
    def delta_alpha(self):
        return (self.vertical_fov[1] - self.vertical_fov[0]) / self.height

    @property
    def delta_beta(self):
        return 2.0 * np.pi / self.width

    @property
    def shape(self):
        return self.height, self.width

    @classmethod
    def from_dict(cls, config):
        return cls(height=config['height'],
                   width=config['width'],
                   vertical_fov=(np.radians(config['fov_down_deg']), np.radians(config['fov_up_deg'])),
                   max_range=config['max_range'],
                   top_row_max_elevation=config['top_row_max_elevation'])


@dataclass(frozen=True, eq=False)
class SphericalImage:
    """
    depth: (H, W) ranges in meters, 0 marks a void pixel until the image is completed
    valid: (H, W) pixels that received a LiDAR return; completion never changes it
    index_map: (H, W) row of the source PointCloud per valid pixel, VOID_INDEX elsewhere
    """

    depth: np.ndarray
    valid: np.ndarray
    index_map: np.ndarray
    config: ProjectionConfig
    n_dropped: int = 0
    completed: bool = False

    def __post_init__(self):
        for name in ('depth', 'valid', 'index_map'):
            array = np.array(getattr(self, name), copy=True)
            if array.shape != self.config.shape:
                raise ValueError("'{}' has shape {}, expected {}".format(name, array.shape, self.config.shape))
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def n_valid(self):
        return int(self.valid.sum())


def _pixel_coordinates(points, cfg):
    """ Row, column and range of every point; 'inside' is False for points outside the vertical FOV or at r = 0 """

    ranges = np.linalg.norm(points, axis=1)
    inside = ranges > 0
    with np.errstate(divide='ignore', invalid='ignore'):
        elevation = np.arcsin(np.clip(points[:, 2] / ranges, -1.0, 1.0))
    fov_min, fov_max = cfg.vertical_fov
    inside &= (elevation >= fov_min) & (elevation <= fov_max)

    elevation_bin = np.floor((elevation - fov_min) / cfg.delta_alpha)
    elevation_bin = np.clip(np.nan_to_num(elevation_bin), 0, cfg.height - 1).astype(np.int64)
    rows = cfg.height - 1 - elevation_bin if cfg.top_row_max_elevation else elevation_bin

    # column 0 starts at azimuth -pi
    azimuth = np.arctan2(points[:, 1], points[:, 0])
    cols = np.clip(np.floor((azimuth + np.pi) / cfg.delta_beta), 0, cfg.width - 1).astype(np.int64)
    return rows, cols, ranges, inside


def pixel_of(point, cfg):
    """ The pixel a single point projects to, None when it is outside the vertical FOV """
    rows, cols, _, inside = _pixel_coordinates(np.asarray(point, dtype=np.float64).reshape(1, 3), cfg)
    return (int(rows[0]), int(cols[0])) if inside[0] else None


def project(cloud, cfg):
    """
    Spherical projection of a cloud into a depth image.
    When several points fall into one pixel the nearest wins, ties go to the lower point index.
    """

    if len(cloud) == 0:
        raise DataError("Can not project an empty cloud")

    rows, cols, ranges, inside = _pixel_coordinates(cloud.points, cfg)
    n_dropped = int(np.count_nonzero(~inside))
    if n_dropped:
        logger.debug("%d of %d points are outside the vertical FOV", n_dropped, len(cloud))

    point_idx = np.flatnonzero(inside)
    flat_pixel = rows[point_idx] * cfg.width + cols[point_idx]
    order = np.lexsort((point_idx, ranges[point_idx], flat_pixel))
    _, first = np.unique(flat_pixel[order], return_index=True)
    winners = point_idx[order[first]]

    depth = np.zeros(cfg.shape)
    index_map = np.full(cfg.shape, VOID_INDEX, dtype=np.int64)
    depth[rows[winners], cols[winners]] = ranges[winners]
    index_map[rows[winners], cols[winners]] = winners

    return SphericalImage(depth=depth, valid=index_map != VOID_INDEX, index_map=index_map, config=cfg,
                          n_dropped=n_dropped)


def back_project(image, pixel, cloud):
    """ The original point stored at 'pixel', VoidPixelError if the pixel had no return before completion """

    row, col = pixel
    if not (0 <= row < image.config.height and 0 <= col < image.config.width):
        raise IndexError("Pixel {} is outside the image".format(pixel))
    if not image.valid[row, col]:
        raise VoidPixelError("Pixel ({}, {}) has no source point".format(row, col))
    return cloud.points[image.index_map[row, col]].copy()


def back_project_pixels(image, rows, cols, cloud):
    """ Vectorized back_project: returns the (N, 3) points and the mask of pixels that had a source point """

    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    ok = image.valid[rows, cols]
    points = np.zeros((rows.shape[0], 3))
    points[ok] = cloud.points[image.index_map[rows[ok], cols[ok]]]
    return points, ok

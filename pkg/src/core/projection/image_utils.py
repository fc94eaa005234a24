from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from src.core.exceptions import EmptyImageError
from src.core.projection.spherical_projection import SphericalImage

N_GRAY_LEVELS = 256

# neighbours fetched per void pixel before falling back to a radius search
NEAREST_CANDIDATES = 8


def _nearest_valid(valid_pixels, void_pixels):
    """
    Index into 'valid_pixels' of the closest valid pixel for every void pixel.
    Squared distances are compared as integers; equal distances go to the smallest row-major index.
    """

    tree = cKDTree(valid_pixels)
    k = min(NEAREST_CANDIDATES, valid_pixels.shape[0])
    _, candidates = tree.query(void_pixels, k=k)
    candidates = candidates.reshape(void_pixels.shape[0], k)

    sq_dist = ((valid_pixels[candidates] - void_pixels[:, None, :]) ** 2).sum(axis=2)
    best_sq_dist = sq_dist.min(axis=1)
    nearest = np.where(sq_dist == best_sq_dist[:, None], candidates, valid_pixels.shape[0]).min(axis=1)

    # all k candidates at the best distance: more ties may hide beyond them
    if k < valid_pixels.shape[0]:
        for i in np.flatnonzero(sq_dist[:, -1] == best_sq_dist):
            ball = np.asarray(tree.query_ball_point(void_pixels[i], r=np.sqrt(best_sq_dist[i]) + 1e-6), dtype=np.int64)
            ball_sq_dist = ((valid_pixels[ball] - void_pixels[i]) ** 2).sum(axis=1)
            nearest[i] = ball[ball_sq_dist == best_sq_dist[i]].min()
    return nearest


def depth_completion(image):
    """
    Fills every void pixel with the depth of its nearest valid pixel (Euclidean distance in pixel
    coordinates). Valid pixels, the validity mask and the index map are kept as they are, so
    completing a completed image returns the same depth.
    """

    valid_pixels = np.argwhere(image.valid)
    if valid_pixels.shape[0] == 0:
        raise EmptyImageError("Depth completion needs at least one valid pixel")

    depth = np.array(image.depth, copy=True)
    void_pixels = np.argwhere(~image.valid)
    if void_pixels.shape[0]:
        source = valid_pixels[_nearest_valid(valid_pixels, void_pixels)]
        depth[void_pixels[:, 0], void_pixels[:, 1]] = image.depth[source[:, 0], source[:, 1]]

    return SphericalImage(depth=depth, valid=image.valid, index_map=image.index_map, config=image.config,
                          n_dropped=image.n_dropped, completed=True)


@dataclass(frozen=True, eq=False)
class EqualizedImage:
    gray: np.ndarray
    source: SphericalImage

    def __post_init__(self):
        gray = np.array(self.gray, dtype=np.uint8, copy=True)
        gray.setflags(write=False)
        object.__setattr__(self, 'gray', gray)

    @property
    def shape(self):
        return self.gray.shape


def quantize_depth(depth, max_range):
    """ 256 equal-width levels over [0, max_range] """
    clipped = np.clip(depth, 0.0, max_range)
    return np.minimum(np.floor(clipped / max_range * N_GRAY_LEVELS), N_GRAY_LEVELS - 1).astype(np.int64)


def histogram_equalize(image, cfg=None):
    """ Cumulative-distribution equalization of the quantized depth; monotone in depth """

    cfg = image.config if cfg is None else cfg
    if not image.completed and not image.valid.all():
        raise ValueError("Histogram equalization needs a completed image, run depth_completion() first")

    levels = quantize_depth(image.depth, cfg.max_range)
    histogram = np.bincount(levels.ravel(), minlength=N_GRAY_LEVELS)
    cdf = np.cumsum(histogram)
    cdf_min = cdf[levels.min()]
    n_pixels = levels.size

    if n_pixels == cdf_min:
        # a single occupied level has nothing to spread
        gray = levels
    else:
        lut = np.round((cdf - cdf_min) / (n_pixels - cdf_min) * (N_GRAY_LEVELS - 1)).astype(np.int64)
        # occupied levels keep distinct gray values, so a flat level histogram maps level to level
        occupied = np.flatnonzero(histogram)
        rank = np.arange(occupied.shape[0])
        strict = np.maximum.accumulate(lut[occupied] - rank) + rank
        lut[occupied] = np.minimum(strict, N_GRAY_LEVELS - occupied.shape[0] + rank)
        gray = np.clip(lut, 0, N_GRAY_LEVELS - 1)[levels]
    return EqualizedImage(gray=gray, source=image)

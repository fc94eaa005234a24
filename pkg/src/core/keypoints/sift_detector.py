import logging
from dataclasses import dataclass

import numpy as np
from skimage.feature import SIFT

from src.core.exceptions import ImageTooSmallError

logger = logging.getLogger(__name__)

MIN_IMAGE_SIZE = 16
DESCRIPTOR_SIZE = 128

DEFAULT_DETECTOR_CONFIG = {'upsampling': 2,
                           'n_octaves': 3,
                           'n_scales': 3,
                           'sigma_min': 1.6,
                           'contrast_threshold': 0.03,
                           'edge_threshold': 10.0,
                           'pad_columns': 16}


@dataclass(frozen=True)
class DetectorParams:
    """ Difference-of-Gaussians detector settings; columns are padded cyclically by 'pad_columns' """

    upsampling: int = 2
    n_octaves: int = 3
    n_scales: int = 3
    sigma_min: float = 1.6
    contrast_threshold: float = 0.03
    edge_threshold: float = 10.0
    pad_columns: int = 16

    def __post_init__(self):
        if self.upsampling not in (1, 2, 4):
            raise ValueError("'upsampling' must be 1, 2 or 4")
        if self.n_octaves < 1 or self.n_scales < 1:
            raise ValueError("'n_octaves' and 'n_scales' must be >= 1")
        if self.pad_columns < 0:
            raise ValueError("'pad_columns' must be >= 0")

    @classmethod
    def from_dict(cls, config):
        return cls(**config)


@dataclass(frozen=True)
class Keypoint:
    position: np.ndarray
    scale: float
    orientation: float
    descriptor: np.ndarray


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """ Keypoints of one image as parallel arrays; positions are sub-pixel (row, col) """

    positions: np.ndarray
    scales: np.ndarray
    orientations: np.ndarray
    descriptors: np.ndarray

    def __len__(self):
        return self.positions.shape[0]

    def __getitem__(self, idx):
        return Keypoint(position=self.positions[idx], scale=float(self.scales[idx]),
                        orientation=float(self.orientations[idx]), descriptor=self.descriptors[idx])

    def __iter__(self):
        for idx in range(len(self)):
            yield self[idx]

    @classmethod
    def empty(cls):
        return cls(positions=np.zeros((0, 2)), scales=np.zeros(0), orientations=np.zeros(0),
                   descriptors=np.zeros((0, DESCRIPTOR_SIZE)))


def detect_and_describe(image, params=None):
    """
    SIFT keypoints of an equalized depth image (or a plain 2D uint8 array).
    The image wraps around in azimuth: 'pad_columns' columns from the opposite edge are appended on
    both sides and only keypoints whose column falls inside the original image are kept.
    """

    params = DetectorParams() if params is None else params
    gray = np.asarray(getattr(image, 'gray', image))
    height, width = gray.shape
    if height < MIN_IMAGE_SIZE or width < MIN_IMAGE_SIZE:
        raise ImageTooSmallError("Keypoint detection needs at least {0}x{0} pixels, got {1}x{2}".format(
            MIN_IMAGE_SIZE, height, width))
    if np.all(gray == gray.flat[0]):
        return KeypointSet.empty()

    pad = min(params.pad_columns, width)
    padded = np.concatenate([gray[:, width - pad:], gray, gray[:, :pad]], axis=1).astype(np.float64) / 255.0

    sift = SIFT(upsampling=params.upsampling,
                n_octaves=params.n_octaves,
                n_scales=params.n_scales,
                sigma_min=params.sigma_min,
                c_dog=params.contrast_threshold,
                c_edge=params.edge_threshold)
    try:
        sift.detect_and_extract(padded)
    except RuntimeError as e:
        logger.debug("no keypoints: %s", e)
        return KeypointSet.empty()

    positions = np.asarray(sift.positions, dtype=np.float64).copy()
    positions[:, 1] -= pad
    descriptors = np.asarray(sift.descriptors, dtype=np.float64)
    norms = np.linalg.norm(descriptors, axis=1)
    keep = (positions[:, 1] >= 0) & (positions[:, 1] < width) & (norms > 0)

    keypoints = KeypointSet(positions=positions[keep],
                            scales=np.asarray(sift.sigmas, dtype=np.float64)[keep],
                            orientations=np.asarray(sift.orientations, dtype=np.float64)[keep],
                            descriptors=descriptors[keep] / norms[keep, None])
    logger.debug("%d keypoints (%d found on the padded image)", len(keypoints), positions.shape[0])
    return keypoints

import os
import re
from os import listdir, path

import numpy as np

from src.core.exceptions import ScanFormatError
from src.data.data_feed import ScanFeed
from src.data.file_utils import atomic_write_bytes
from src.data.point_cloud import PointCloud

BYTES_PER_POINT = 16
SCAN_FILE_PATTERN = re.compile(r"^(\d+)\.bin$")


def load_kitti_scan(scan_path):
    """
        Flat binary format, each point is saved as 4 little-endian float32 values in a continuous memory:
            x, y, z, intensity, x, y, z, intensity, ..., continuous...

        After reading file from disk, do: .reshape(-1, 4)
    """

    n_bytes = path.getsize(scan_path)
    residual = n_bytes % BYTES_PER_POINT
    if residual:
        raise ScanFormatError("Scan '{}' has {} bytes, {} residual bytes after the last full point".format(
            scan_path, n_bytes, residual))

    data = np.fromfile(scan_path, dtype='<f4').reshape(-1, 4)
    return PointCloud(points=data[:, :3].astype(np.float64), intensity=data[:, 3].astype(np.float64))


def write_kitti_scan(cloud, scan_path):
    """ Write a cloud in the KITTI Velodyne layout; coordinates are rounded to float32 """

    data = np.zeros((len(cloud), 4), dtype='<f4')
    data[:, :3] = cloud.points
    if cloud.intensity is not None:
        data[:, 3] = cloud.intensity
    atomic_write_bytes(scan_path, data.tobytes())


def scan_file_name(frame_idx):
    return "{:06d}.bin".format(frame_idx)


class KittiScanFeed(ScanFeed):
    """
        Directory of KITTI Velodyne scans named 000000.bin, 000001.bin, ... read in frame order.
    """

    def __init__(self,
                 scans_dir,
                 start_frame=None,
                 end_frame=None):

        if not path.isdir(scans_dir):
            raise FileNotFoundError("Scan directory '{}' does not exist".format(scans_dir))
        self.scans_dir = scans_dir

        # load only frames between start and end, both inclusive
        frames = []
        for filename in listdir(scans_dir):
            match = SCAN_FILE_PATTERN.match(filename)
            if match:
                frames.append(int(match.group(1)))
        frames = sorted(frames)
        if start_frame is not None:
            frames = [f for f in frames if f >= start_frame]
        if end_frame is not None:
            frames = [f for f in frames if f <= end_frame]
        self.frames = frames

    def scan_path(self, frame):
        return os.path.join(self.scans_dir, scan_file_name(frame))

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        for frame in self.frames:
            yield frame, load_kitti_scan(self.scan_path(frame))

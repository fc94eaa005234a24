from abc import ABC, abstractmethod


class ScanFeed(ABC):
    """ Ordered scan sequence; 'frames' lists the frame numbers in reading order """

    frames = []

    @abstractmethod
    def scan_path(self, frame):
        """ File holding the scan of 'frame' """
        raise NotImplementedError
    @abstractmethod
    def __len__(self):
        """ Number of scans available """
        raise NotImplementedError
    @abstractmethod
    def __iter__(self):
        """  Yield (frame, PointCloud) for every scan in reading order """
        raise NotImplementedError

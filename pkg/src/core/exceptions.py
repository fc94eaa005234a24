""" Exception types shared by the data, estimation and pipeline layers """


class DataError(ValueError):
    """ Input data is malformed or inconsistent (CLI exit code 2) """


class ScanFormatError(DataError):
    pass


class PoseFileError(DataError):
    pass


class SceneSpecError(DataError):
    pass


class ImageTooSmallError(DataError):
    pass


class EstimationError(RuntimeError):
    """ A frame or frame pair could not be estimated (CLI exit code 3) """


class EmptyImageError(EstimationError):
    pass


class DegenerateFramePairError(EstimationError):
    pass


class DegenerateGeometryError(EstimationError):
    pass


class RobustEstimationError(EstimationError):
    pass


class TrainingDivergenceError(EstimationError):
    pass


class VoidPixelError(LookupError):
    """ Back-projection hit a pixel that had no LiDAR return before completion """

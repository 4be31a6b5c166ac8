"""Coarse-to-fine registration of camera images against lidar point clouds."""

from .estimator import CoarseToFineRegistrar
from .geometry import CameraIntrinsics, PointCloud, Pose
from .scenes import ScenePair

__version__ = "0.1.0"

__all__ = ["CoarseToFineRegistrar", "CameraIntrinsics", "PointCloud", "Pose",
           "ScenePair", "__version__"]

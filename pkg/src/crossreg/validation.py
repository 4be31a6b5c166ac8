"""Input validation helpers for the estimator-facing API."""

import numpy as np

from .geometry import PointCloud
from .scenes import ScenePair


def check_image(image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be HxWx3, got shape {image.shape}")
    if not np.isfinite(image).all():
        raise ValueError("image contains non-finite values")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    if image.shape[0] % 8 or image.shape[1] % 8:
        raise ValueError(f"image dims must be divisible by 8, got {image.shape[:2]}")
    return image


def check_cloud(cloud):
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(np.asarray(cloud, dtype=np.float64))
    return cloud


def check_scene(scene, index=None):
    where = "X" if index is None else f"X[{index}]"
    if not isinstance(scene, ScenePair):
        raise ValueError(f"{where} must be a ScenePair, got {type(scene).__name__}")
    check_image(scene.image)
    return scene


def check_scenes(X, minimum=1):
    scenes = list(X)
    if len(scenes) < minimum:
        raise ValueError(f"need at least {minimum} scene(s), got {len(scenes)}")
    for i, scene in enumerate(scenes):
        check_scene(scene, i)
    return scenes

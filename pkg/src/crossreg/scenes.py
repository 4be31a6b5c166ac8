"""Scene pairs: one image, one point cloud and the pose linking them."""

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .errors import ContractError
from .geometry import CameraIntrinsics, PointCloud, Pose, in_frustum_many


@dataclass
class ScenePair:
    """A registration sample; the pose maps cloud coordinates to the camera."""

    image: np.ndarray
    cloud: PointCloud
    gt_pose: Pose
    intrinsics: CameraIntrinsics
    id: str

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ContractError(f"image must be HxWx3; got {self.image.shape}")
        h, w, _ = self.image.shape
        if (h, w) != (self.intrinsics.height, self.intrinsics.width):
            raise ContractError("image size does not match intrinsics")

    def overlap_fraction(self) -> float:
        return float(in_frustum_many(self.intrinsics, self.gt_pose, self.cloud.points).mean())


def save_scene(path, scene: ScenePair):
    entries = {
        "image": scene.image,
        "points": scene.cloud.points,
        "rotation": scene.gt_pose.rotation,
        "translation": scene.gt_pose.translation,
        "intrinsics": np.array([scene.intrinsics.fx, scene.intrinsics.fy,
                                scene.intrinsics.cx, scene.intrinsics.cy,
                                scene.intrinsics.width, scene.intrinsics.height]),
    }
    if scene.cloud.intensity is not None:
        entries["intensity"] = scene.cloud.intensity
    checkpoint.write_container(path, entries)


def load_scene(path, scene_id=None) -> ScenePair:
    entries = checkpoint.read_container(path)
    fx, fy, cx, cy, width, height = entries["intrinsics"]
    cloud = PointCloud(entries["points"], entries.get("intensity"))
    return ScenePair(image=entries["image"],
                     cloud=cloud,
                     gt_pose=Pose(entries["rotation"], entries["translation"]),
                     intrinsics=CameraIntrinsics(fx, fy, cx, cy, int(width), int(height)),
                     id=scene_id if scene_id is not None else _stem(path))


def _stem(path):
    name = str(path).replace("\\", "/").rsplit("/", 1)[-1]
    return name.rsplit(".", 1)[0]

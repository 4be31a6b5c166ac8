"""KITTI-Odometry-format ingestion.

Velodyne scans are headerless little-endian float32 quadruples (x, y, z,
reflectance).  Calibration files carry row-major 3x4 "P2:" and "Tr:" lines;
pose files carry one row-major 3x4 camera-0 pose per line.  A loaded frame
returns the cloud in the world (map) frame via Tr and the frame pose, and a
ground-truth transform that maps world coordinates into the camera-2 frame
of the requested frame, with intrinsics rescaled to the target image size.
"""

import os

import numpy as np

from .errors import ContractError, CorruptFileError, ParseError
from .geometry import CameraIntrinsics, PointCloud, Pose
from .scenes import ScenePair

RECORD_BYTES = 16
TRAIN_SEQUENCES = tuple(f"{i:02d}" for i in range(9))
TEST_SEQUENCES = ("09", "10")
TARGET_SIZE = (512, 160)  # (width, height)


def read_velodyne(path) -> PointCloud:
    """Cloud plus reflectance from a raw velodyne .bin file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) % RECORD_BYTES:
        raise CorruptFileError(f"{path}: size {len(blob)} is not a multiple of {RECORD_BYTES}",
                               offset=len(blob) - len(blob) % RECORD_BYTES)
    if not blob:
        raise CorruptFileError(f"{path}: empty scan", offset=0)
    records = np.frombuffer(blob, dtype="<f4").reshape(-1, 4)
    return PointCloud(records[:, :3].astype(np.float64),
                      records[:, 3].astype(np.float64))


def write_velodyne(path, cloud: PointCloud):
    """Inverse of read_velodyne; float32 round-trips bit-exactly."""
    records = np.zeros((len(cloud), 4), dtype="<f4")
    records[:, :3] = cloud.points.astype("<f4")
    if cloud.intensity is not None:
        records[:, 3] = cloud.intensity.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(records.tobytes())


def _parse_matrix_line(line, path, offset, expect=12):
    fields = line.split()
    try:
        values = np.array([float(x) for x in fields], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric field in line {line!r}", offset=offset) from exc
    if len(values) != expect:
        raise ParseError(f"{path}: expected {expect} values, got {len(values)}", offset=offset)
    return values.reshape(3, 4)


def parse_calib(path) -> dict:
    """{'P2': 3x4, 'Tr': 3x4} from a KITTI calib.txt."""
    out = {}
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.decode("utf-8", errors="replace").strip()
            if ":" in line:
                key, rest = line.split(":", 1)
                if key.strip() in ("P2", "Tr"):
                    out[key.strip()] = _parse_matrix_line(rest, path, offset)
            offset += len(raw)
    for key in ("P2", "Tr"):
        if key not in out:
            raise ParseError(f"{path}: missing required '{key}:' line", offset=offset)
    return out


def parse_poses(path) -> np.ndarray:
    """(n, 3, 4) camera-0 poses, one row-major line each."""
    poses = []
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.decode("utf-8", errors="replace").strip()
            if line:
                poses.append(_parse_matrix_line(line, path, offset))
            offset += len(raw)
    if not poses:
        raise ParseError(f"{path}: no poses found", offset=0)
    return np.stack(poses)


def _nearest_rotation(m):
    # file-precision rotations are projected back onto SO(3)
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, 2] = -u[:, 2]
        r = u @ vt
    return r


def _pose_from_3x4(m) -> Pose:
    return Pose(_nearest_rotation(m[:, :3]), m[:, 3])


def load_image(path, target_size=TARGET_SIZE):
    """PNG as float HxWx3 in [0, 1], resized anisotropically."""
    from PIL import Image

    with Image.open(path) as img:
        original = img.size  # (width, height)
        resized = img.convert("RGB").resize(target_size, Image.BILINEAR)
    return np.asarray(resized, dtype=np.float64) / 255.0, original


def default_image_path(velodyne_path):
    directory, name = os.path.split(os.path.abspath(velodyne_path))
    parent, leaf = os.path.split(directory)
    if leaf != "velodyne":
        raise ContractError(f"cannot derive image path from {velodyne_path}; pass image_path")
    return os.path.join(parent, "image_2", os.path.splitext(name)[0] + ".png")


def load_kitti_frame(velodyne_path, calib_path, pose_path, frame,
                     n_points=20480, seed=0, image_path=None,
                     target_size=TARGET_SIZE) -> ScenePair:
    """One frame as a ScenePair: world-frame cloud, world->cam2 pose.

    The cloud is lifted into the map frame (frame pose composed with the
    velodyne-to-camera calibration) and the ground truth is the inverse
    frame pose composed with the camera-2 offset hidden in P2.
    """
    cloud = read_velodyne(velodyne_path)
    calib = parse_calib(calib_path)
    poses = parse_poses(pose_path)
    if not 0 <= frame < len(poses):
        raise ContractError(f"frame {frame} outside pose file range 0..{len(poses) - 1}")

    k = calib["P2"][:, :3]
    cam2_offset = Pose(np.eye(3), np.linalg.solve(k, calib["P2"][:, 3]))
    velo_to_cam0 = _pose_from_3x4(calib["Tr"])
    cam0_to_world = _pose_from_3x4(poses[frame])

    world_cloud = cam0_to_world.compose(velo_to_cam0).apply(cloud.points)
    gt_pose = cam2_offset.compose(cam0_to_world.inverse())

    image_path = image_path or default_image_path(velodyne_path)
    image, (w0, h0) = load_image(image_path, target_size)
    sx, sy = target_size[0] / w0, target_size[1] / h0
    intr = CameraIntrinsics(fx=k[0, 0] * sx, fy=k[1, 1] * sy,
                            cx=k[0, 2] * sx, cy=k[1, 2] * sy,
                            width=target_size[0], height=target_size[1])

    rng = np.random.default_rng(seed)
    if n_points < len(cloud):
        keep = np.sort(rng.choice(len(cloud), size=n_points, replace=False))
        subsampled = PointCloud(world_cloud[keep], cloud.intensity[keep])
    else:
        subsampled = PointCloud(world_cloud, cloud.intensity)
    return ScenePair(image=image, cloud=subsampled, gt_pose=gt_pose,
                     intrinsics=intr, id=f"frame-{frame:06d}")


def sequence_paths(root, sequence):
    seq_dir = os.path.join(root, "sequences", sequence)
    return {"velodyne": os.path.join(seq_dir, "velodyne"),
            "calib": os.path.join(seq_dir, "calib.txt"),
            "poses": os.path.join(root, "poses", sequence + ".txt")}


def split_sequences(split):
    if split == "train":
        return TRAIN_SEQUENCES
    if split == "test":
        return TEST_SEQUENCES
    raise ContractError(f"unknown split {split!r}; expected 'train' or 'test'")


def list_split_frames(root, split, stride=1):
    """(sequence, frame, velodyne path) triples for an on-disk split."""
    frames = []
    for seq in split_sequences(split):
        paths = sequence_paths(root, seq)
        if not os.path.isdir(paths["velodyne"]):
            continue
        for name in sorted(os.listdir(paths["velodyne"]))[::stride]:
            if name.endswith(".bin"):
                frames.append((seq, int(os.path.splitext(name)[0]),
                               os.path.join(paths["velodyne"], name)))
    return frames
